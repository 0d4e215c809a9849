"""Regenerates erank_golden.csv: random scale triples and their effective
rank, exp of the entropy of the normalized squared scales, at 50 digits."""

import random

import mpmath

mpmath.mp.dps = 50
rng = random.Random(20240611)

with open("erank_golden.csv", "w") as f:
    f.write("s1,s2,s3,erank\n")
    for _ in range(1000):
        # Log-uniform over three decades keeps every normalized square above 1e-6.
        s = [10 ** rng.uniform(-3.0, 0.0) for _ in range(3)]
        sq = [mpmath.mpf(x) ** 2 for x in s]
        total = sum(sq)
        q = [v / total for v in sq]
        h = -sum(v * mpmath.log(v) for v in q)
        f.write(f"{s[0]!r},{s[1]!r},{s[2]!r},{float(mpmath.exp(h))!r}\n")
