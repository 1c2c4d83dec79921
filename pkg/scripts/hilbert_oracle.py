"""Trace prod_{k<=n} (x^2 + y^2 - k^2) and compare the nest depth with floor(d/2) = n."""

from __future__ import annotations

import argparse
from dataclasses import dataclass

import numpy as np

from biharmonic_nest.poly import hilbert_product
from biharmonic_nest.scalar import Field
from biharmonic_nest.tracer import TraceOptions, analyze, contour_xy


@dataclass
class Config:
    max_n: int = 6
    grid: int = 512
    bits: int = 128


def run(cfg: Config) -> list[tuple]:
    field = Field.bigfloat(cfg.bits)
    out = []
    for n in range(1, cfg.max_n + 1):
        u = hilbert_product(field, n)
        rep, cs = analyze(u, opts=TraceOptions(grid=cfg.grid, window=n + 1.0))
        err = max(
            (float(np.max(np.abs(np.hypot(*contour_xy(cs[p.contour_id]).T) - (k + 1)))) for k, p in enumerate(rep.per_loop)),
            default=float("nan"),
        )
        out.append((n, u.degree, rep.depth, err))
        print(f"n={n} degree={u.degree} depth={rep.depth} expected={n} max radius error={err:.1e}")
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-n", type=int, default=Config.max_n)
    ap.add_argument("--grid", type=int, default=Config.grid)
    a = ap.parse_args()
    run(Config(a.max_n, a.grid))


if __name__ == "__main__":
    main()
