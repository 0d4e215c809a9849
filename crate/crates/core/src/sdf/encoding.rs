use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::Vec3;

/// Sinusoidal positional encoding settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub num_bands: usize,
    /// Prepend the raw coordinates to the sinusoids.
    pub include_raw: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            num_bands: 6,
            include_raw: true,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bands == 0 {
            return Err(domain("encoding needs at least one frequency band"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        3 * usize::from(self.include_raw) + 6 * self.num_bands
    }

    /// Offset of the first sinusoid (band 0, `sin`, x coordinate).
    pub(crate) fn band_offset(&self) -> usize {
        3 * usize::from(self.include_raw)
    }
}

/// Layout: `[x, y, z]` (optional), then per band `i` the three sines
/// `sin(2^i x_d)` followed by the three cosines `cos(2^i x_d)`.
pub fn positional_encode(x: &Vec3, cfg: &EncodingConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.dim()];
    encode_into(x, cfg, &mut out, None);
    out
}

/// Writes the encoding into `out`. When `tangents` is given, also writes the
/// derivative of the encoding along each input axis, pre-multiplied by
/// `tangents.1` (the chain-rule factor of any upstream input scaling).
pub(crate) fn encode_into(
    x: &Vec3,
    cfg: &EncodingConfig,
    out: &mut [f64],
    tangents: Option<(&mut [Vec<f64>; 3], f64)>,
) {
    let mut o = 0;
    if cfg.include_raw {
        out[..3].copy_from_slice(x.as_slice());
        o = 3;
    }
    let mut freq = 1.0;
    for _ in 0..cfg.num_bands {
        for d in 0..3 {
            let (s, c) = (freq * x[d]).sin_cos();
            out[o + d] = s;
            out[o + 3 + d] = c;
        }
        o += 6;
        freq *= 2.0;
    }
    if let Some((tan, scale)) = tangents {
        for (d, t) in tan.iter_mut().enumerate() {
            t.iter_mut().for_each(|v| *v = 0.0);
            if cfg.include_raw {
                t[d] = scale;
            }
            let mut o = cfg.band_offset();
            let mut freq = 1.0;
            for _ in 0..cfg.num_bands {
                t[o + d] = scale * freq * out[o + 3 + d];
                t[o + 3 + d] = -scale * freq * out[o + d];
                o += 6;
                freq *= 2.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn origin_encoding() {
        let cfg = EncodingConfig::default();
        let e = positional_encode(&Vec3::zeros(), &cfg);
        assert_eq!(e.len(), 39);
        assert!(e[..3].iter().all(|v| *v == 0.0));
        for band in 0..6 {
            let o = 3 + 6 * band;
            assert_eq!(&e[o..o + 3], &[0.0, 0.0, 0.0]);
            assert_eq!(&e[o + 3..o + 6], &[1.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn pi_band_zero() {
        let cfg = EncodingConfig::default();
        let e = positional_encode(&Vec3::new(PI, 0.0, 0.0), &cfg);
        assert!(e[3].abs() < 1e-15);
        assert!((e[6] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_without_raw() {
        let cfg = EncodingConfig {
            num_bands: 4,
            include_raw: false,
        };
        assert_eq!(cfg.dim(), 24);
        assert_eq!(positional_encode(&Vec3::new(0.1, 0.2, 0.3), &cfg).len(), 24);
        assert!(EncodingConfig {
            num_bands: 0,
            include_raw: true
        }
        .validate()
        .is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cfg = EncodingConfig::default();
        let mut rng = crate::rng_from_seed(11);
        let h = 1e-6;
        for _ in 0..10 {
            let x = crate::gaussian::standard_normal3(&mut rng) * 0.5;
            let mut val = vec![0.0; cfg.dim()];
            let mut tan = [
                vec![0.0; cfg.dim()],
                vec![0.0; cfg.dim()],
                vec![0.0; cfg.dim()],
            ];
            encode_into(&x, &cfg, &mut val, Some((&mut tan, 1.0)));
            for d in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += h;
                xm[d] -= h;
                let ep = positional_encode(&xp, &cfg);
                let em = positional_encode(&xm, &cfg);
                for j in 0..cfg.dim() {
                    let fd = (ep[j] - em[j]) / (2.0 * h);
                    assert!((fd - tan[d][j]).abs() < 1e-5, "d={d} j={j}");
                }
            }
        }
    }

    #[test]
    fn band_zero_is_two_pi_periodic() {
        let cfg = EncodingConfig::default();
        let x = Vec3::new(0.3, -0.7, 0.2);
        for d in 0..3 {
            let mut shifted = x;
            shifted[d] += 2.0 * PI;
            let a = positional_encode(&x, &cfg);
            let b = positional_encode(&shifted, &cfg);
            for band in 0..cfg.num_bands {
                let o = 3 + 6 * band;
                assert!((a[o + d] - b[o + d]).abs() < 1e-12);
                assert!((a[o + 3 + d] - b[o + 3 + d]).abs() < 1e-12);
            }
        }
    }
}
