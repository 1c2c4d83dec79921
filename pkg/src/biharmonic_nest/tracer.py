"""Zero-set extraction on cartesian and log-polar charts.

Grid sampling runs in float64 on a normalised term table: every term
``c r^p trig(k t)`` is carried as ``log|c| + p log r`` and each log-polar row
is divided by its own largest term, so polynomials whose loops sit at scales
like ``2^-300`` still sample cleanly.  Contours come from marching squares
with cell-centre saddle disambiguation; Newton refinement and gradient
checks then run in the polynomial's own scalar field.

In a log-polar chart ``(rho, theta) = (log r, theta)`` the theta axis is
periodic, so a loop around the origin is exactly a contour that wraps once
in theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Optional, Union

import numpy as np

from .nest import Loop, NestCertificate, SignViolation, ZeroSample, _scan, default_samples
from .parallel import pmap
from .poly import evaluate, grad, gradient_scale, term_scale, term_table
from .scalar import Field, format_scalar, sign

LN2 = math.log(2.0)
TWO_PI = 2.0 * math.pi


class NewtonStall(Exception):
    """Newton projection failed to reach the zero set from a vertex."""


class ContainmentAmbiguity(Exception):
    """Pairwise point-in-loop tests contradict the radial ordering."""


@dataclass(frozen=True)
class Cartesian:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    kind = "cartesian"


@dataclass(frozen=True)
class LogPolar:
    rho_min: float
    rho_max: float
    kind = "logpolar"


Chart = Union[Cartesian, LogPolar]


class FloatSampler:
    """Vectorised float64 evaluation with log-domain scaling."""

    def __init__(self, u):
        rows = term_table(u)
        if not rows:
            rows = [(0, 0, -math.inf, 0, -math.inf, 0)]
        t = np.array(rows, dtype=float)
        self.power = t[:, 0]
        self.freq = t[:, 1]
        self.lc = t[:, 2] * LN2
        self.sc = t[:, 3]
        self.ls = t[:, 4] * LN2
        self.ss = t[:, 5]

    def _logs(self, logr):
        # (points, terms) natural-log magnitudes; r = 0 only keeps power-0 terms
        logr = np.asarray(logr, dtype=float)[:, None]
        with np.errstate(invalid="ignore"):
            pl = np.where(self.power == 0, 0.0, self.power * logr)
        return self.lc + pl, self.ls + pl

    def log_scale(self, logr) -> np.ndarray:
        lc, ls = self._logs(logr)
        s = np.maximum(lc.max(axis=1), ls.max(axis=1))
        return np.where(np.isfinite(s), s, 0.0)

    def values(self, logr, theta, scale) -> np.ndarray:
        """``u / exp(scale)`` at points given by ``log r`` and ``theta``."""
        lc, ls = self._logs(logr)
        scale = np.asarray(scale, dtype=float)[..., None] if np.ndim(scale) else scale
        ac = self.sc * np.exp(lc - scale)
        as_ = self.ss * np.exp(ls - scale)
        ft = np.asarray(theta, dtype=float)[:, None] * self.freq
        return (ac * np.cos(ft) + as_ * np.sin(ft)).sum(axis=1)

    def row_values(self, logr, theta):
        """Matrix of values on a (rho rows) x (theta cols) grid, one scale per row."""
        scale = self.log_scale(logr)
        lc, ls = self._logs(logr)
        ac = self.sc * np.exp(lc - scale[:, None])
        as_ = self.ss * np.exp(ls - scale[:, None])
        ft = np.outer(self.freq, theta)
        return ac @ np.cos(ft) + as_ @ np.sin(ft), scale


@dataclass
class ChartGrid:
    chart: Chart
    resolution: tuple
    rows: np.ndarray  # y (cartesian) or rho (logpolar) per row
    cols: np.ndarray  # x or theta per column
    values: np.ndarray  # u / exp(row_scale), shape (len(rows), len(cols))
    row_scale: np.ndarray  # natural log of the per-row normaliser
    signs: np.ndarray
    sampler: FloatSampler = dc_field(repr=False)

    @property
    def periodic(self) -> bool:
        return isinstance(self.chart, LogPolar)

    def center_sign(self, i: int, j: int) -> int:
        r0, r1 = self.rows[i], self.rows[i + 1]
        c0 = self.cols[j]
        dc = self.cols[1] - self.cols[0]
        rm, cm = 0.5 * (r0 + r1), c0 + 0.5 * dc
        if self.periodic:
            logr, th = np.array([rm]), np.array([cm])
        else:
            logr = np.array([0.5 * math.log(cm * cm + rm * rm)]) if (cm or rm) else np.array([-math.inf])
            th = np.array([math.atan2(rm, cm)])
        v = self.sampler.values(logr, th, self.row_scale[i])[0]
        return 1 if v >= 0 else -1


ZERO_FRACTION_LIMIT = 1e-4


def sample_grid(u, chart: Chart, resolution: tuple, _offset: float = 0.0) -> ChartGrid:
    """Sample ``u`` on the chart nodes; zeros count as positive.

    ``resolution`` is ``(n_x, n_y)`` for cartesian charts and
    ``(n_rho, n_theta)`` for log-polar ones.  If more than 0.01% of nodes are
    exactly zero the grid is shifted by a quarter cell and resampled.
    """
    if min(resolution) < 16:
        raise ValueError("resolution must be >= 16 in each direction")
    sampler = u if isinstance(u, FloatSampler) else FloatSampler(u)
    if isinstance(chart, LogPolar):
        n_rho, n_theta = resolution
        d_rho = (chart.rho_max - chart.rho_min) / (n_rho - 1)
        d_th = TWO_PI / n_theta
        rows = chart.rho_min + d_rho * (np.arange(n_rho) + _offset)
        cols = d_th * (np.arange(n_theta) + _offset)
        values, scale = sampler.row_values(rows, cols)
    else:
        n_x, n_y = resolution
        dx = (chart.xmax - chart.xmin) / (n_x - 1)
        dy = (chart.ymax - chart.ymin) / (n_y - 1)
        cols = chart.xmin + dx * (np.arange(n_x) + _offset)
        rows = chart.ymin + dy * (np.arange(n_y) + _offset)
        rmax = max(math.hypot(a, b) for a in (cols[0], cols[-1]) for b in (rows[0], rows[-1]))
        s = float(sampler.log_scale(np.array([math.log(rmax)]))[0]) if rmax > 0 else 0.0
        X, Y = np.meshgrid(cols, rows)
        R = np.hypot(X, Y).ravel()
        with np.errstate(divide="ignore"):
            logr = np.log(R)
        values = sampler.values(logr, np.arctan2(Y, X).ravel(), s).reshape(X.shape)
        scale = np.full(len(rows), s)
    zeros = np.count_nonzero(values == 0)
    if zeros > ZERO_FRACTION_LIMIT * values.size and _offset == 0.0:
        return sample_grid(sampler, chart, resolution, _offset=0.25)
    signs = np.where(values >= 0, 1, -1).astype(np.int8)
    return ChartGrid(chart, tuple(resolution), rows, cols, values, scale, signs, sampler)


@dataclass
class Contour:
    points: list  # chart coordinates: (x, y) or (rho, theta) with theta unwrapped
    closed: bool
    wraps_theta: int
    chart: Chart
    refined: bool = False
    stalls: list = dc_field(default_factory=list)
    band: int = 0
    on_boundary: bool = True  # open contours only: both ends on the chart edge


# marching squares: corners c0=(i,j) c1=(i,j+1) c2=(i+1,j+1) c3=(i+1,j)
# edges e0=c0-c1, e1=c1-c2, e2=c3-c2, e3=c0-c3
_EDGE_PAIRS = {}
for _case in range(16):
    _bits = [(_case >> b) & 1 for b in range(4)]
    _cross = [e for e, (a, b) in enumerate([(0, 1), (1, 2), (3, 2), (0, 3)]) if _bits[a] != _bits[b]]
    if len(_cross) == 2:
        _EDGE_PAIRS[_case] = [tuple(_cross)]


def extract_contours(grid: ChartGrid) -> list[Contour]:
    """Marching squares plus segment chaining.

    Open chains end on the chart boundary; in log-polar charts chains that
    cross the theta seam are stitched and their theta-winding recorded.
    """
    S = grid.signs > 0
    V = grid.values
    nr, nc = S.shape
    periodic = grid.periodic
    ncell_c = nc if periodic else nc - 1
    jn = (np.arange(ncell_c) + 1) % nc
    c0 = S[:-1, :ncell_c]
    c1 = S[:-1, jn]
    c2 = S[1:, jn]
    c3 = S[1:, :ncell_c]
    case = c0.astype(int) | (c1.astype(int) << 1) | (c2.astype(int) << 2) | (c3.astype(int) << 3)
    cells = np.argwhere((case != 0) & (case != 15))

    dcol = grid.cols[1] - grid.cols[0]
    ratio = np.exp(np.diff(grid.row_scale))  # row i+1 scale / row i scale

    def edge_id(i, j, vertical):
        return 2 * (i * nc + j) + (1 if vertical else 0)

    def on_edge(eid):
        i, j = divmod(eid >> 1, nc)
        if eid & 1:
            return not periodic and (j == 0 or j == nc - 1)
        return i == 0 or i == nr - 1

    def edge_point(eid):
        vertical = eid & 1
        i, j = divmod(eid >> 1, nc)
        if vertical:
            v0, v1 = V[i, j], V[i + 1, j] * ratio[i]
            t = v0 / (v0 - v1)
            return (grid.rows[i] + t * (grid.rows[i + 1] - grid.rows[i]), grid.cols[j])
        j1 = (j + 1) % nc
        v0, v1 = V[i, j], V[i, j1]
        t = v0 / (v0 - v1)
        return (grid.rows[i], grid.cols[j] + t * dcol)

    adj: dict[int, list[int]] = {}

    def link(a, b):
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)

    for i, j in cells:
        i, j = int(i), int(j)
        k = int(case[i, j])
        j1 = (j + 1) % nc
        e = (edge_id(i, j, False), edge_id(i, j1, True), edge_id(i + 1, j, False), edge_id(i, j, True))
        if k in _EDGE_PAIRS:
            a, b = _EDGE_PAIRS[k][0]
            link(e[a], e[b])
            continue
        # saddle: c0,c2 share a sign opposite to c1,c3
        centre_pos = grid.center_sign(i, j) > 0
        if centre_pos == bool(S[i, j]):
            link(e[0], e[1])
            link(e[2], e[3])
        else:
            link(e[0], e[3])
            link(e[1], e[2])

    seen = set()
    chains = []
    starts = sorted(n for n, nb in adj.items() if len(nb) == 1) + sorted(adj)
    for s in starts:
        if s in seen:
            continue
        chain = [s]
        seen.add(s)
        prev, cur = None, s
        closed = False
        while True:
            nxt = [n for n in adj[cur] if n != prev]
            if not nxt:
                break
            n = nxt[0]
            if n == s:
                closed = True
                break
            if n in seen:
                break
            chain.append(n)
            seen.add(n)
            prev, cur = cur, n
        chains.append((chain, closed))

    out = []
    for chain, closed in chains:
        pts = [edge_point(e) for e in chain]
        # rows hold y/rho, cols hold x/theta
        pts = [(p[1], p[0]) if not periodic else (p[0], p[1]) for p in pts]
        wraps = 0
        if periodic:
            unwrapped = [pts[0]]
            for rho, th in pts[1:]:
                prev_th = unwrapped[-1][1]
                d = (th - prev_th + math.pi) % TWO_PI - math.pi
                unwrapped.append((rho, prev_th + d))
            if closed:
                d = (pts[0][1] - unwrapped[-1][1] + math.pi) % TWO_PI - math.pi
                end_th = unwrapped[-1][1] + d
                wraps = int(round((end_th - unwrapped[0][1]) / TWO_PI))
                unwrapped.append((pts[0][0], pts[0][1] + TWO_PI * wraps))
            pts = unwrapped
        elif closed:
            pts.append(pts[0])
        boundary = closed or (on_edge(chain[0]) and on_edge(chain[-1]))
        out.append(Contour(pts, closed, wraps, grid.chart, on_boundary=boundary))
    return out


# -- geometry helpers ------------------------------------------------------------


def _to_plane(field: Field, chart: Chart, a, b):
    if isinstance(chart, LogPolar):
        with field.context():
            r = field.exp(field(a))
            t = field(b)
            return r * field.cos(t), r * field.sin(t)
    return field(a), field(b)


def _from_plane(field: Field, chart: Chart, x, y, theta_hint):
    if isinstance(chart, LogPolar):
        with field.context():
            rho = field.log(field.sqrt(x * x + y * y)) if field.exact else field.log(x * x + y * y) / 2
            th = field.atan2(y, x)
            two_pi = 2 * field.pi()
            hint = field(theta_hint)
            k = round(float((hint - th) / two_pi))
            return rho, th + k * two_pi
    return x, y


def contour_polar(c: Contour) -> tuple[np.ndarray, np.ndarray]:
    """Float (log r, theta) per vertex."""
    if isinstance(c.chart, LogPolar):
        a = np.array([[float(p[0]), float(p[1])] for p in c.points])
        return a[:, 0], a[:, 1]
    xy = contour_xy(c)
    with np.errstate(divide="ignore"):
        return np.log(np.hypot(xy[:, 0], xy[:, 1])), np.unwrap(np.arctan2(xy[:, 1], xy[:, 0]))


def contour_xy(c: Contour) -> np.ndarray:
    if isinstance(c.chart, LogPolar):
        a = np.array([[float(p[0]), float(p[1])] for p in c.points])
        r = np.exp(a[:, 0])
        return np.column_stack([r * np.cos(a[:, 1]), r * np.sin(a[:, 1])])
    return np.array([[float(p[0]), float(p[1])] for p in c.points])


def plane_points(u, c: Contour) -> list:
    """Vertices as plane coordinates in the polynomial's field."""
    field = u.field
    return [_to_plane(field, c.chart, p[0], p[1]) for p in c.points]


def mean_log_radius(c: Contour) -> float:
    rho, th = contour_polar(c)
    if c.wraps_theta:
        dth = np.diff(th)
        return float(np.sum(0.5 * (rho[1:] + rho[:-1]) * dth) / np.sum(dth))
    return float(np.mean(rho))


def arc_length(c: Contour) -> float:
    rho, th = contour_polar(c)
    r = np.exp(0.5 * (rho[1:] + rho[:-1]))
    return float(np.sum(r * np.hypot(np.diff(rho), np.diff(th))))


def _inside_polar(rho_p, th_p, c: Contour) -> bool:
    # ray from the point toward larger rho at fixed theta, in the periodic chart
    rho, th = contour_polar(c)
    count = 0
    for k in range(len(rho) - 1):
        ta, tb = th[k], th[k + 1]
        d = tb - ta
        if d == 0:
            continue
        if d > 0:
            phi = (th_p - ta) % TWO_PI
            hit = phi < d
            t = phi / d
        else:
            phi = (ta - th_p) % TWO_PI
            hit = 0 < phi <= -d
            t = phi / -d
        if hit and rho[k] + t * (rho[k + 1] - rho[k]) > rho_p:
            count += 1
    return count % 2 == 1


def _inside_xy(px, py, c: Contour) -> bool:
    xy = contour_xy(c)
    x0, y0 = xy[:-1, 0], xy[:-1, 1]
    x1, y1 = xy[1:, 0], xy[1:, 1]
    cond = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    return int(np.count_nonzero(cond & (xc > px))) % 2 == 1


def encloses(outer: Contour, inner: Contour) -> bool:
    """Whether a vertex of ``inner`` lies inside the closed curve ``outer``."""
    if isinstance(outer.chart, LogPolar):
        rho, th = contour_polar(inner)
        return _inside_polar(rho[0], th[0], outer)
    xy = contour_xy(inner)
    return _inside_xy(xy[0, 0], xy[0, 1], outer)


def encloses_origin(c: Contour) -> bool:
    if not c.closed:
        return False
    if isinstance(c.chart, LogPolar):
        return abs(c.wraps_theta) == 1
    return _inside_xy(0.0, 0.0, c)


# -- refinement and gradients -------------------------------------------------


def _newton_vertex(u, x, y, tol, max_iter):
    field = u.field
    with field.context():
        r = field.sqrt(x * x + y * y)
        target = tol * term_scale(u, r)
        v = evaluate(u, x, y)
        for _ in range(max_iter):
            if abs(v) <= target:
                return x, y
            gx, gy = grad(u, x, y)
            g2 = gx * gx + gy * gy
            if g2 == 0:
                raise NewtonStall("zero gradient")
            step = 1
            while True:
                nx = x - step * v * gx / g2
                ny = y - step * v * gy / g2
                nv = evaluate(u, nx, ny)
                if abs(nv) < abs(v) or step < field(2) ** -30:
                    break
                step = step / 2
            if abs(nv) >= abs(v):
                raise NewtonStall("no descent")
            if field.exact:
                # keep exact iterates dyadic so their size stays bounded
                nx, ny = _dyadic(field, nx), _dyadic(field, ny)
                nv = evaluate(u, nx, ny)
            x, y, v = nx, ny, nv
        if abs(v) <= target:
            return x, y
        raise NewtonStall("iteration limit")


def _dyadic(field: Field, q):
    import gmpy2

    with field.context():
        return gmpy2.mpq(gmpy2.mpfr(q))


def default_tol(field: Field):
    return field.two_pow(-(field.work_bits // 2))


def refine_contour(u, contour: Contour, tol=None, max_iter: int = 60) -> Contour:
    """Project each vertex onto ``u = 0`` with damped Newton steps.

    Vertices where Newton stalls keep their original position and are
    listed in ``stalls``.
    """
    field = u.field
    tol = default_tol(field) if tol is None else field(tol)
    pts = contour.points
    n = len(pts) - 1 if contour.closed else len(pts)
    out, stalls = [], []
    for k in range(n):
        a, b = pts[k]
        x, y = _to_plane(field, contour.chart, a, b)
        try:
            x, y = _newton_vertex(u, x, y, tol, max_iter)
            out.append(_from_plane(field, contour.chart, x, y, b))
        except NewtonStall:
            stalls.append(k)
            out.append((field(a), field(b)))
    if contour.closed:
        a, b = out[0]
        if isinstance(contour.chart, LogPolar):
            with field.context():
                b = b + contour.wraps_theta * 2 * field.pi()
        out.append((a, b))
    return replace(contour, points=out, refined=True, stalls=stalls)


@dataclass
class GradientCheck:
    min_norm: object
    location: tuple
    min_ratio: float  # min over vertices of |grad u| / local gradient scale
    threshold_ratio: float
    below: bool


def min_gradient_on(u, contour: Contour) -> GradientCheck:
    """Minimum ``|grad u|`` over the contour's vertices.

    The threshold is relative: ``2^(-bits/4)`` times the local gradient
    scale, because on deep loops every term carries tiny scale factors.
    """
    field = u.field
    thr = 2.0 ** (-(field.work_bits / 4))
    best = None
    where = None
    ratio = math.inf
    pts = plane_points(u, contour)
    for x, y in pts:
        with field.context():
            gx, gy = grad(u, x, y)
            norm = field.sqrt(gx * gx + gy * gy)
            scale = gradient_scale(u, field.sqrt(x * x + y * y))
            rel = float(norm / scale) if scale else math.inf
        if best is None or norm < best:
            best, where = norm, (x, y)
        ratio = min(ratio, rel)
    return GradientCheck(best, where, ratio, thr, ratio < thr)


# -- nesting ------------------------------------------------------------------


@dataclass
class LoopInfo:
    contour_id: int
    band: int
    mean_log_radius: float
    arc_length: float
    min_gradient: Optional[str] = None
    gradient_ratio: Optional[float] = None
    below_threshold: bool = False
    stalls: int = 0


@dataclass
class BandInfo:
    index: int
    chart: str
    bounds: tuple
    resolution: tuple
    scale: Optional[str] = None


@dataclass
class NestReport:
    total_contours: int
    loops_around_origin: int
    depth: int
    per_loop: list = dc_field(default_factory=list)
    bands: list = dc_field(default_factory=list)
    flags: list = dc_field(default_factory=list)
    certificate_loop_signs: list = dc_field(default_factory=list)

    def to_json(self) -> dict:
        from . import __version__

        return {
            "tool_version": __version__,
            "total_contours": self.total_contours,
            "loops_around_origin": self.loops_around_origin,
            "depth": self.depth,
            "per_loop": [vars(p) for p in self.per_loop],
            "bands": [
                {"index": b.index, "chart": b.chart, "bounds": list(b.bounds), "resolution": list(b.resolution), "scale": b.scale}
                for b in self.bands
            ],
            "flags": list(self.flags),
            "certificate_loop_signs": list(self.certificate_loop_signs),
        }


def nesting_forest(contours: list[Contour], origin=(0.0, 0.0)) -> NestReport:
    """Order the origin-enclosing loops and measure the nest depth.

    Loops are sorted by mean log-radius; every pair is cross-checked with a
    point-in-loop test, and contradictions are reported as
    ``ContainmentAmbiguity`` flags.  ``depth`` is the longest chain under
    the tested containment relation.
    """
    if origin != (0.0, 0.0):
        raise ValueError("only the origin is supported as nest centre")
    idx = [k for k, c in enumerate(contours) if encloses_origin(c)]
    idx.sort(key=lambda k: mean_log_radius(contours[k]))
    n = len(idx)
    inside = [[False] * n for _ in range(n)]
    flags = []
    for a in range(n):
        for b in range(a + 1, n):
            ca, cb = contours[idx[a]], contours[idx[b]]
            inside[a][b] = encloses(cb, ca)
            if not inside[a][b] or encloses(ca, cb):
                flags.append(f"ContainmentAmbiguity: contours {idx[a]} and {idx[b]}")
    chain = [1] * n
    for b in range(n):
        for a in range(b):
            if inside[a][b]:
                chain[b] = max(chain[b], chain[a] + 1)
    report = NestReport(
        total_contours=len(contours),
        loops_around_origin=n,
        depth=max(chain, default=0),
        flags=flags,
    )
    report.per_loop = [
        LoopInfo(k, contours[k].band, mean_log_radius(contours[k]), arc_length(contours[k])) for k in idx
    ]
    return report


# -- full pipeline ----------------------------------------------------------------


@dataclass(frozen=True)
class TraceOptions:
    grid: int = 1024
    theta_per_freq: int = 32
    min_theta: int = 256
    window: float = 4.0
    guard: float = LN2
    refine: bool = True
    tol: object = None
    logpolar: Optional[tuple] = None  # (rho_min, rho_max) for certificate-free log-polar tracing


def certificate_bands(cert: NestCertificate, opts: TraceOptions) -> list:
    """One log-polar band per gap between consecutive certificate loops.

    Returns ``(chart, resolution, core, scale)`` where ``core`` is the
    half-open rho interval whose contours the band owns.
    """
    loops = cert.loops()
    eta = float(cert.eta)
    g = opts.guard
    lo_pad = 0.5 * math.log(1 - eta)
    hi_pad = 0.5 * math.log(1 + eta)
    mean_pad = 0.5 * math.log((1 + math.sqrt(1 - eta * eta)) / 2)
    logs = [_log_float(cert.field, lp.scale) for lp in loops]
    out = []
    for j in range(len(loops) - 1):
        chart = LogPolar(logs[j] + lo_pad - g, logs[j + 1] + hi_pad + g)
        n_theta = _theta_res(max(loops[j].M, loops[j + 1].M), opts)
        core = (logs[j] + mean_pad, logs[j + 1] + mean_pad)
        out.append((chart, (opts.grid, n_theta), core, loops[j + 1].scale))
    return out


def _theta_res(freq: int, opts: TraceOptions) -> int:
    base = max(opts.min_theta, opts.theta_per_freq * freq)
    return int(math.ceil(base * opts.grid / 1024))


def _log_float(field: Field, x) -> float:
    from .scalar import log2_abs

    return log2_abs(x) * LN2


def _refine_and_check(args):
    u, c, tol, refine = args
    if refine and c.closed:
        c = refine_contour(u, c, tol)
    gc = min_gradient_on(u, c) if c.closed else None
    return c, gc


def analyze(u, cert: Optional[NestCertificate] = None, opts: TraceOptions = TraceOptions()):
    """Sample, extract, refine, order and gradient-check the zero set.

    Returns ``(report, contours)``.  With a certificate, each inter-loop gap
    gets its own log-polar band; otherwise a single cartesian window (or
    the log-polar range in ``opts.logpolar``) is used.
    """
    sampler = FloatSampler(u)
    plans = []
    if cert is not None:
        plans = certificate_bands(cert, opts)
    elif opts.logpolar is not None:
        lo, hi = opts.logpolar
        plans = [(LogPolar(lo, hi), (opts.grid, _theta_res(0, opts)), (-math.inf, math.inf), None)]
    else:
        w = opts.window
        plans = [(Cartesian(-w, w, -w, w), (opts.grid, opts.grid), (-math.inf, math.inf), None)]

    contours: list[Contour] = []
    bands = []
    for b, (chart, res, core, scale) in enumerate(plans):
        grid = sample_grid(sampler, chart, res)
        found = extract_contours(grid)
        for c in found:
            c.band = b
            if core[0] <= mean_log_radius(c) < core[1]:
                contours.append(c)
        bounds = (chart.rho_min, chart.rho_max) if isinstance(chart, LogPolar) else (chart.xmin, chart.xmax, chart.ymin, chart.ymax)
        bands.append(BandInfo(b, chart.kind, bounds, res, format_scalar(scale) if scale is not None else None))

    results = pmap(_refine_and_check, [(u, c, opts.tol, opts.refine) for c in contours])
    contours = [c for c, _ in results]
    checks = [gc for _, gc in results]

    report = nesting_forest(contours)
    report.bands = bands
    for info in report.per_loop:
        c = contours[info.contour_id]
        gc = checks[info.contour_id]
        info.mean_log_radius = mean_log_radius(c)
        info.arc_length = arc_length(c)
        info.stalls = len(c.stalls)
        if gc is not None:
            info.min_gradient = format_scalar(gc.min_norm)
            info.gradient_ratio = gc.min_ratio
            info.below_threshold = gc.below
            if gc.below:
                report.flags.append(f"gradient below threshold on contour {info.contour_id}")
        if c.stalls:
            report.flags.append(f"NewtonStall at {len(c.stalls)} vertices of contour {info.contour_id}")
    for k, c in enumerate(contours):
        if not c.closed and not _ends_on_boundary(c):
            report.flags.append(f"open contour {k} does not end on the chart boundary")
    if cert is not None:
        report.certificate_loop_signs = certificate_loop_signs(u, cert)
    return report, contours


def _ends_on_boundary(c: Contour) -> bool:
    return c.on_boundary


def certificate_loop_signs(u, cert: NestCertificate) -> list[int]:
    """Sampled sign of ``u`` on each certificate loop (0 if mixed)."""
    out = []
    for loop in cert.loops():
        try:
            s, _ = _scan(u, loop, default_samples(loop.M) // 4)
        except (SignViolation, ZeroSample):
            s = 0
        out.append(s)
    return out


# -- CSV ----------------------------------------------------------------------------


def contours_to_rows(u, contours: list[Contour]) -> list[dict]:
    rows = []
    field = u.field
    for k, c in enumerate(contours):
        for p in c.points:
            if c.refined:
                x, y = _to_plane(field, c.chart, p[0], p[1])
                xs, ys = format_scalar(x), format_scalar(y)
            elif isinstance(c.chart, LogPolar):
                r = math.exp(p[0])
                xs, ys = repr(r * math.cos(p[1])), repr(r * math.sin(p[1]))
            else:
                xs, ys = repr(float(p[0])), repr(float(p[1]))
            rows.append(
                {
                    "contour_id": k,
                    "chart": c.chart.kind,
                    "x": xs,
                    "y": ys,
                    "closed": int(c.closed),
                    "wraps_theta": c.wraps_theta,
                }
            )
    return rows
