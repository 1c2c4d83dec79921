"""Build, perturb and trace nests for increasing loop counts; print one row per build.

    python scripts/depth_table.py --max-loops 3
"""

from __future__ import annotations

import argparse
import time
from dataclasses import dataclass

from biharmonic_nest.nest import NestOptions, build_nest, final_perturb
from biharmonic_nest.scalar import format_scalar, log2_abs
from biharmonic_nest.tracer import TraceOptions, analyze


@dataclass
class Config:
    max_loops: int = 3
    eta: str = "1/2"
    precision: str = "auto"
    grid: int = 1024


def run(cfg: Config) -> list[dict]:
    rows = []
    prec = cfg.precision if cfg.precision in ("auto", "rational") else int(cfg.precision)
    for n in range(1, cfg.max_loops + 1):
        t0 = time.perf_counter()
        u, cert = build_nest(n + 1, cfg.eta, NestOptions(precision=prec))
        v, cert = final_perturb(u, cert)
        t1 = time.perf_counter()
        rep, _ = analyze(v, cert, TraceOptions(grid=cfg.grid))
        t2 = time.perf_counter()
        rows.append(
            {
                "loops": n,
                "degree": v.degree,
                "bits": cert.precision_bits,
                "eps": [format_scalar(s.epsilon) for s in cert.stages[1:]],
                "log2_min_margin": round(log2_abs(cert.min_margin()), 1),
                "depth": rep.depth,
                "flags": len(rep.flags),
                "build_s": round(t1 - t0, 1),
                "trace_s": round(t2 - t1, 1),
            }
        )
        print(rows[-1], flush=True)
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-loops", type=int, default=Config.max_loops)
    ap.add_argument("--eta", default=Config.eta)
    ap.add_argument("--precision", default=Config.precision)
    ap.add_argument("--grid", type=int, default=Config.grid)
    a = ap.parse_args()
    run(Config(a.max_loops, a.eta, a.precision, a.grid))


if __name__ == "__main__":
    main()
