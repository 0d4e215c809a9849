//! Minimal PLY support: header parsing plus ASCII and binary little-endian
//! payloads, enough for Gaussian scenes and triangle meshes.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::Aabb;
use crate::{Gaussian, GaussianScene, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(fmt_err(format!("unknown PLY type '{other}'"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Property {
    Scalar {
        name: String,
        ty: ScalarType,
    },
    List {
        name: String,
        count: ScalarType,
        item: ScalarType,
    },
}

impl Property {
    pub fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementDef {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

impl ElementDef {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub format: Format,
    pub comments: Vec<String>,
    pub elements: Vec<ElementDef>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

impl Value {
    pub fn scalar(&self) -> Result<f64> {
        match self {
            Value::Scalar(v) => Ok(*v),
            Value::List(_) => Err(fmt_err("expected a scalar PLY property, found a list")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub def: ElementDef,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyData {
    pub header: Header,
    pub elements: Vec<Element>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.def.name == name)
    }
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool> {
        line.clear();
        Ok(r.read_line(line)? > 0)
    };
    if !next(&mut line)? || line.trim_end() != "ply" {
        return Err(fmt_err("missing 'ply' magic line"));
    }
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<ElementDef> = Vec::new();
    loop {
        if !next(&mut line)? {
            return Err(fmt_err("PLY header is not terminated by end_header"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    other => return Err(fmt_err(format!("unsupported PLY format '{other}'"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] => {
                let text = line.trim_end();
                let body = text.split_once(' ').map_or("", |(_, rest)| rest);
                comments.push(body.to_string());
            }
            ["element", name, count] => elements.push(ElementDef {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| fmt_err(format!("bad element count '{count}'")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or_else(|| fmt_err("property before any element"))?
                .properties
                .push(Property::List {
                    name: name.to_string(),
                    count: ScalarType::parse(count)?,
                    item: ScalarType::parse(item)?,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| fmt_err("property before any element"))?
                .properties
                .push(Property::Scalar {
                    name: name.to_string(),
                    ty: ScalarType::parse(ty)?,
                }),
            [] => {}
            _ => {
                return Err(fmt_err(format!(
                    "unrecognized PLY header line '{}'",
                    line.trim_end()
                )))
            }
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| fmt_err("PLY header has no format line"))?,
        comments,
        elements,
    })
}

fn read_ascii<R: BufRead>(r: &mut R, header: &Header) -> Result<Vec<Element>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut tokens = text.split_whitespace();
    let mut number = || -> Result<f64> {
        let t = tokens
            .next()
            .ok_or_else(|| fmt_err("PLY body ended early"))?;
        t.parse()
            .map_err(|_| fmt_err(format!("bad PLY number '{t}'")))
    };
    let mut out = Vec::new();
    for def in &header.elements {
        let mut rows = Vec::with_capacity(def.count.min(1 << 24));
        for _ in 0..def.count {
            let mut row = Vec::with_capacity(def.properties.len());
            for p in &def.properties {
                row.push(match p {
                    Property::Scalar { .. } => Value::Scalar(number()?),
                    Property::List { .. } => {
                        let n = number()?;
                        if !(n >= 0.0 && n.fract() == 0.0) {
                            return Err(fmt_err(format!("bad PLY list length {n}")));
                        }
                        Value::List((0..n as usize).map(|_| number()).collect::<Result<_>>()?)
                    }
                });
            }
            rows.push(row);
        }
        out.push(Element {
            def: def.clone(),
            rows,
        });
    }
    Ok(out)
}

fn read_binary<R: Read>(r: &mut R, header: &Header) -> Result<Vec<Element>> {
    let mut buf = [0u8; 8];
    let mut scalar = |r: &mut R, ty: ScalarType| -> Result<f64> {
        r.read_exact(&mut buf[..ty.size()])
            .map_err(|_| fmt_err("PLY body ended early"))?;
        Ok(ty.decode(&buf))
    };
    let mut out = Vec::new();
    for def in &header.elements {
        let mut rows = Vec::with_capacity(def.count.min(1 << 24));
        for _ in 0..def.count {
            let mut row = Vec::with_capacity(def.properties.len());
            for p in &def.properties {
                row.push(match p {
                    Property::Scalar { ty, .. } => Value::Scalar(scalar(r, *ty)?),
                    Property::List { count, item, .. } => {
                        let n = scalar(r, *count)?;
                        if !(n >= 0.0) {
                            return Err(fmt_err(format!("bad PLY list length {n}")));
                        }
                        Value::List(
                            (0..n as usize)
                                .map(|_| scalar(r, *item))
                                .collect::<Result<_>>()?,
                        )
                    }
                });
            }
            rows.push(row);
        }
        out.push(Element {
            def: def.clone(),
            rows,
        });
    }
    Ok(out)
}

pub fn read_ply<R: BufRead>(mut r: R) -> Result<PlyData> {
    let header = read_header(&mut r)?;
    let elements = match header.format {
        Format::Ascii => read_ascii(&mut r, &header)?,
        Format::BinaryLittleEndian => read_binary(&mut r, &header)?,
    };
    Ok(PlyData { header, elements })
}

pub fn read_ply_file(path: &Path) -> Result<PlyData> {
    read_ply(std::io::BufReader::new(std::fs::File::open(path)?))
}

const SCENE_PROPS: [&str; 11] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
];

/// Binary little-endian scene file with `double` properties; bounds and seed
/// travel as header comments.
pub fn write_scene<W: Write>(mut w: W, scene: &GaussianScene) -> Result<()> {
    let b = &scene.bounds;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!(
        "comment bounds {} {} {} {} {} {}\n",
        b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
    );
    header += &format!("comment seed {}\n", scene.seed);
    header += &format!("element vertex {}\n", scene.len());
    for p in SCENE_PROPS {
        header += &format!("property double {p}\n");
    }
    header += "end_header\n";
    w.write_all(header.as_bytes())?;
    for g in &scene.gaussians {
        let q = g.rotation_wxyz();
        let vals = [
            g.mean.x, g.mean.y, g.mean.z, g.scales.x, g.scales.y, g.scales.z, q[0], q[1], q[2],
            q[3], g.opacity,
        ];
        for v in vals {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_scene(scene: &GaussianScene, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_scene(&mut w, scene)?;
    w.flush()?;
    Ok(())
}

fn parse_comment<T: std::str::FromStr>(comments: &[String], key: &str) -> Result<Option<Vec<T>>> {
    for c in comments {
        let mut parts = c.split_whitespace();
        if parts.next() == Some(key) {
            return parts
                .map(|t| {
                    t.parse()
                        .map_err(|_| fmt_err(format!("bad '{key}' comment value '{t}'")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some);
        }
    }
    Ok(None)
}

/// Reads a scene in either encoding. Without a `bounds` comment the bounds
/// are the bounding box of the means padded by 1e-6; without `seed` the
/// seed is 0.
pub fn read_scene<R: BufRead>(r: R) -> Result<GaussianScene> {
    let data = read_ply(r)?;
    let vertex = data
        .element("vertex")
        .ok_or_else(|| fmt_err("scene PLY has no vertex element"))?;
    let idx: Vec<usize> = SCENE_PROPS
        .iter()
        .map(|p| {
            vertex
                .def
                .index_of(p)
                .ok_or_else(|| fmt_err(format!("scene PLY lacks property '{p}'")))
        })
        .collect::<Result<_>>()?;
    let gaussians = vertex
        .rows
        .iter()
        .map(|row| {
            let v = |k: usize| row[idx[k]].scalar();
            Gaussian::new(
                Vec3::new(v(0)?, v(1)?, v(2)?),
                Vec3::new(v(3)?, v(4)?, v(5)?),
                [v(6)?, v(7)?, v(8)?, v(9)?],
                v(10)?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let bounds = match parse_comment::<f64>(&data.header.comments, "bounds")? {
        Some(b) if b.len() == 6 => {
            Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]))?
        }
        Some(_) => return Err(fmt_err("bounds comment needs six numbers")),
        None => {
            let first = gaussians
                .first()
                .ok_or_else(|| fmt_err("scene PLY has no Gaussians"))?;
            let (lo, hi) = gaussians
                .iter()
                .fold((first.mean, first.mean), |(lo, hi), g| {
                    (lo.inf(&g.mean), hi.sup(&g.mean))
                });
            let pad = Vec3::repeat(1e-6);
            Aabb::new(lo - pad, hi + pad)?
        }
    };
    let seed = match parse_comment::<u64>(&data.header.comments, "seed")? {
        Some(s) if s.len() == 1 => s[0],
        Some(_) => return Err(fmt_err("seed comment needs one integer")),
        None => 0,
    };
    GaussianScene::new(gaussians, bounds, seed)
}

pub fn load_scene(path: &Path) -> Result<GaussianScene> {
    read_scene(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Point cloud with `double` x, y, z, binary little-endian.
pub fn write_points<W: Write>(mut w: W, points: &[Vec3]) -> Result<()> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    );
    w.write_all(header.as_bytes())?;
    for p in points {
        for c in p.iter() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_points<R: BufRead>(r: R) -> Result<Vec<Vec3>> {
    let data = read_ply(r)?;
    let vertex = data
        .element("vertex")
        .ok_or_else(|| fmt_err("point PLY has no vertex element"))?;
    let idx: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|p| {
            vertex
                .def
                .index_of(p)
                .ok_or_else(|| fmt_err(format!("point PLY lacks property '{p}'")))
        })
        .collect::<Result<_>>()?;
    vertex
        .rows
        .iter()
        .map(|row| {
            Ok(Vec3::new(
                row[idx[0]].scalar()?,
                row[idx[1]].scalar()?,
                row[idx[2]].scalar()?,
            ))
        })
        .collect()
}
