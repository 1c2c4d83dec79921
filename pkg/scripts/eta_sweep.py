"""Accepted scale factors and margins as the petal amplitude eta varies (exact arithmetic)."""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field

from biharmonic_nest.nest import NestOptions, build_nest
from biharmonic_nest.scalar import log2_abs


@dataclass
class Config:
    stages: int = 3
    etas: list = field(default_factory=lambda: ["1/10", "1/4", "1/2", "3/4", "9/10"])


def run(cfg: Config) -> list[dict]:
    rows = []
    for eta in cfg.etas:
        _, cert = build_nest(cfg.stages, eta, NestOptions(precision="rational"))
        row = {
            "eta": eta,
            "log2_eps": [round(log2_abs(s.epsilon)) for s in cert.stages[1:]],
            "log2_margins": [round(log2_abs(m.min_abs), 1) for m in cert.stages[-1].margins],
        }
        rows.append(row)
        print(row, flush=True)
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--stages", type=int, default=Config.stages)
    ap.add_argument("--eta", action="append", help="repeatable; defaults to a five-point sweep")
    a = ap.parse_args()
    cfg = Config(a.stages)
    if a.eta:
        cfg.etas = a.eta
    run(cfg)


if __name__ == "__main__":
    main()
