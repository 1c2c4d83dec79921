"""``nest build|verify|trace|render``.

Exit codes: 0 success, 1 verification or analysis failure, 2 usage or I/O
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .nest import (
    ExhaustedSchedule,
    NestOptions,
    PrecisionUnderflow,
    RetriesExhausted,
    SignViolation,
    build_nest,
    certificate_from_file,
    final_perturb,
    verify_certificate,
)
from .poly import poly_from_json, poly_to_json
from .render import RenderStyle, read_contours_csv, render_svg
from .scalar import format_scalar
from .tracer import TraceOptions, analyze, contours_to_rows

log = logging.getLogger("biharmonic_nest")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    loops: int = 1
    eta: str = "1/2"
    precision_bits: str = "auto"
    delta: str = "1/4"
    grid: int = 1024
    window: float = 4.0
    out_dir: Path = Path(".")
    raw_corollary: bool = False
    regularity_check: bool = True
    origin_components_only: bool = False
    rectified: Optional[bool] = None
    stroke_width: float = 1.5
    size: int = 800


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def _precision(text: str):
    if text in ("auto", "rational"):
        return text
    try:
        bits = int(text)
    except ValueError:
        raise UsageError(f"--precision-bits must be auto, rational or an integer, got {text!r}")
    if bits < 53:
        raise UsageError("--precision-bits must be at least 53")
    return bits


def _regularity(cfg: RunConfig, cert):
    opts = TraceOptions(grid=cfg.grid)

    def check(u) -> bool:
        report, _ = analyze(u, cert, opts)
        bad = [p for p in report.per_loop if p.below_threshold or p.stalls]
        return not bad and report.depth >= len(cert.stages) - 1

    return check


def cmd_build(cfg: RunConfig) -> int:
    if cfg.loops < 1:
        raise UsageError("--loops must be >= 1")
    stages = cfg.loops if cfg.raw_corollary else cfg.loops + 1
    opts = NestOptions(precision=_precision(cfg.precision_bits), delta=cfg.delta)
    try:
        u, cert = build_nest(stages, cfg.eta, opts)
        if not cfg.raw_corollary:
            check = _regularity(cfg, cert) if cfg.regularity_check else None
            u, cert = final_perturb(u, cert, check=check)
    except (ExhaustedSchedule, PrecisionUnderflow, SignViolation, RetriesExhausted) as exc:
        print(f"build failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.out_dir / "polynomial.json", poly_to_json(u))
    _write_json(cfg.out_dir / "certificate.json", cert.to_json(u))
    print(
        f"degree={u.degree} stages={len(cert.stages)} min_margin={format_scalar(cert.min_margin())} "
        f"eps*={format_scalar(cert.final_epsilon)} precision={cert.precision_bits}"
    )
    return 0


def cmd_verify(cert_path, poly_path=None) -> int:
    d = _read_json(cert_path)
    try:
        cert, embedded = certificate_from_file(d)
        poly = poly_from_json(_read_json(poly_path)) if poly_path else embedded
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"malformed input: {exc}") from exc
    violations = verify_certificate(cert, poly)
    if violations:
        print(f"FAIL: {violations[0]}")
        for v in violations[1:]:
            print(f"  also: {v}")
        return 1
    print(f"PASS: {len(cert.stages)} stages, degree {cert.degree}, eps*={format_scalar(cert.final_epsilon)}")
    return 0


def cmd_trace(poly_path, cert_path, cfg: RunConfig) -> int:
    try:
        u = poly_from_json(_read_json(poly_path))
        cert = certificate_from_file(_read_json(cert_path))[0] if cert_path else None
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"malformed input: {exc}") from exc
    report, contours = analyze(u, cert, TraceOptions(grid=cfg.grid, window=cfg.window))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    rows = contours_to_rows(u, contours)
    with open(cfg.out_dir / "contours.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["contour_id", "chart", "x", "y", "closed", "wraps_theta"])
        w.writeheader()
        w.writerows(rows)
    out = report.to_json()
    out["grid"] = {"resolution": cfg.grid, "window": cfg.window if cert is None else None}
    _write_json(cfg.out_dir / "report.json", out)
    print(f"depth={report.depth} loops_around_origin={report.loops_around_origin} contours={report.total_contours}")
    for p in report.per_loop:
        status = "LOW" if p.below_threshold else "ok"
        print(f"  loop {p.contour_id}: log_r={p.mean_log_radius:.4f} min|grad|={p.min_gradient} [{status}]")
    for f in report.flags:
        print(f"  flag: {f}")
    return 1 if report.flags else 0


def cmd_render(contours_path, report_path, out_path, cfg: RunConfig) -> int:
    try:
        contours = read_contours_csv(contours_path)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read {contours_path}: {exc}") from exc
    report = _read_json(report_path)
    style = RenderStyle(
        size=cfg.size,
        stroke_width=cfg.stroke_width,
        origin_only=cfg.origin_components_only,
        rectified=cfg.rectified,
    )
    Path(out_path).write_text(render_svg(contours, report, style))
    return 0


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nest", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="construct a polynomial with a nest of nodal loops")
    b.add_argument("--loops", type=int, required=True, help="target number of nested nodal loops")
    b.add_argument("--eta", default="1/2")
    b.add_argument("--precision-bits", default="auto", help="auto, rational or a bit count")
    b.add_argument("--delta", default="1/4", help="margin quality factor")
    b.add_argument("--grid", type=int, default=1024, help="radial resolution for the regularity check")
    b.add_argument("--out-dir", type=Path, default=Path("."))
    b.add_argument("--raw-corollary", action="store_true", help="emit the unperturbed sign-loop polynomial")
    b.add_argument("--no-regularity-check", action="store_true")

    v = sub.add_parser("verify", help="replay a certificate")
    v.add_argument("certificate")
    v.add_argument("polynomial", nargs="?")

    t = sub.add_parser("trace", help="extract and analyse the zero set")
    t.add_argument("polynomial")
    t.add_argument("--certificate")
    t.add_argument("--grid", type=int, default=1024)
    t.add_argument("--window", type=float, default=4.0, help="half-width of the cartesian window without a certificate")
    t.add_argument("--out-dir", type=Path, default=Path("."))

    r = sub.add_parser("render", help="draw traced contours as SVG")
    r.add_argument("contours")
    r.add_argument("report")
    r.add_argument("-o", "--output", default="figure.svg")
    r.add_argument("--origin-components-only", action="store_true")
    view = r.add_mutually_exclusive_group()
    view.add_argument("--rectified", dest="rectified", action="store_true", default=None)
    view.add_argument("--true-scale", dest="rectified", action="store_false")
    r.add_argument("--stroke-width", type=float, default=1.5)
    r.add_argument("--size", type=int, default=800)
    return ap


def main(argv=None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "build":
            if args.loops < 1:
                ap.error("--loops must be >= 1")
            cfg = RunConfig(
                "build",
                loops=args.loops,
                eta=args.eta,
                precision_bits=args.precision_bits,
                delta=args.delta,
                grid=args.grid,
                out_dir=args.out_dir,
                raw_corollary=args.raw_corollary,
                regularity_check=not args.no_regularity_check,
            )
            return cmd_build(cfg)
        if args.command == "verify":
            return cmd_verify(args.certificate, args.polynomial)
        if args.command == "trace":
            cfg = RunConfig("trace", grid=args.grid, window=args.window, out_dir=args.out_dir)
            return cmd_trace(args.polynomial, args.certificate, cfg)
        cfg = RunConfig(
            "render",
            origin_components_only=args.origin_components_only,
            rectified=args.rectified,
            stroke_width=args.stroke_width,
            size=args.size,
        )
        return cmd_render(args.contours, args.report, args.output, cfg)
    except UsageError as exc:
        print(f"nest: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
