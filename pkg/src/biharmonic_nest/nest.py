"""Inductive construction of biharmonic polynomials with nested sign loops.

Stage 1 is the bump ``P_2``.  Stage ``k+1`` shrinks the previous polynomial
by a dyadic factor ``eps`` (``eps^M u_k(z/eps)`` with ``M = M_{k+1}``) and
adds or subtracts ``P_{M+1}``, whose petal curve becomes a new outer loop of
opposite sign.  ``eps`` is found by a deterministic search over ``2^-t``
that checks the sign of the candidate on every loop with a margin.

Loop ``j`` (1 = innermost) of stage ``k`` is the petal curve of frequency
``M_j + 1`` scaled by ``sigma_k / sigma_j``, where ``sigma_k`` is the product
of the dilations used so far.  Its sign is ``(-1)^j``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from typing import Callable, Optional

import gmpy2
from gmpy2 import mpq

from .poly import (
    BiharmonicPoly,
    add_constant,
    bump_on_curve,
    coefficients_equal,
    dilate_scale,
    evaluate,
    gamma_point,
    linear_combine,
    make_bump,
    poly_from_json,
    poly_to_json,
    term_scale,
)
from .scalar import Field, Scalar, format_scalar, sign

log = logging.getLogger(__name__)

MIN_SAMPLES = 4096
SAMPLES_PER_FREQ = 64


class SignViolation(Exception):
    """Samples on a loop disagree in sign (or disagree with the expected sign)."""


class ZeroSample(Exception):
    """A sample on a loop evaluated to exactly zero."""


class ExhaustedSchedule(Exception):
    """No dilation in the schedule passed; precision is likely too low."""


class PrecisionUnderflow(Exception):
    """A margin is too small relative to the term scale to be trusted."""


class RetriesExhausted(Exception):
    """The final perturbation never passed the regularity check."""


def m_sequence(n: int) -> list[int]:
    """``M_1 = 1``, ``M_{k+1} = 2 M_k + 3``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seq = [1]
    while len(seq) < n:
        seq.append(2 * seq[-1] + 3)
    return seq


def default_samples(freq: int) -> int:
    return max(MIN_SAMPLES, SAMPLES_PER_FREQ * freq)


def make_pm(M: int, eta, field: Field | None = None) -> BiharmonicPoly:
    """``P_M = (1 - r^2) Re z^M + eps_{1,M} Re z^(2M)``."""
    return make_bump(1, M, eta, field=field)[0]


@dataclass(frozen=True)
class Loop:
    """Petal curve of frequency ``M`` scaled by ``scale``."""

    M: int
    eta: Scalar
    scale: Scalar


@lru_cache(maxsize=64)
def _unit_points(field: Field, M: int, eta, samples: int) -> tuple:
    return tuple(gamma_point(1, M, eta, field.angle(i, samples), field) for i in range(samples))


def loop_points(field: Field, loop: Loop, samples: int, indices=None):
    pts = _unit_points(field, loop.M, field(loop.eta), samples)
    s = field(loop.scale)
    idx = range(samples) if indices is None else indices
    with field.context():
        return [(s * pts[i][0], s * pts[i][1]) for i in idx]


def _scan(u, loop: Loop, samples: int, indices=None, expected: int | None = None):
    """Common sign and minimum |value| over the given sample indices."""
    field = u.field
    found = expected
    best = None
    for x, y in loop_points(field, loop, samples, indices):
        v = evaluate(u, x, y)
        s = sign(v)
        if s == 0:
            raise ZeroSample(f"u vanishes at a sample of loop M={loop.M}")
        if found is None:
            found = s
        elif s != found:
            raise SignViolation(f"sign change on loop M={loop.M} scale={format_scalar(loop.scale)}")
        with field.context():
            a = abs(v)
        if best is None or a < best:
            best = a
    return found, best


def sign_margins(u, loop: Loop, samples: int) -> tuple[int, Scalar]:
    """Evaluate ``u`` at ``samples`` equispaced angles on ``loop``.

    Returns the common sign and the minimum absolute value; raises
    :class:`SignViolation` on mixed signs and :class:`ZeroSample` on an
    exact zero.
    """
    if samples < SAMPLES_PER_FREQ * loop.M:
        raise ValueError(f"need at least {SAMPLES_PER_FREQ * loop.M} samples for M={loop.M}")
    return _scan(u, loop, samples)


def bump_margin(field: Field, M: int, eta, samples: int) -> Scalar:
    """min |bump_on_curve| of ``P_M`` over the sample grid."""
    spec = make_bump(1, M, eta, field=field)[1]
    with field.context():
        return min(abs(bump_on_curve(spec, field.angle(i, samples))) for i in range(samples))


# -- certificate -----------------------------------------------------------


@dataclass
class Margin:
    loop: int
    min_abs: Scalar
    samples: int


@dataclass
class StageRecord:
    k: int
    M: int
    epsilon: Scalar
    parity: int
    sigma: Scalar
    margins: list = dc_field(default_factory=list)


@dataclass
class NestCertificate:
    n_loops: int
    eta: Scalar
    field: Field
    stages: list = dc_field(default_factory=list)
    final_epsilon: Scalar = 0
    delta: Scalar = mpq(1, 4)

    @property
    def precision_bits(self):
        return self.field.tag

    @property
    def sample_counts(self) -> list[int]:
        return [max(m.samples for m in st.margins) for st in self.stages]

    @property
    def degree(self) -> int:
        return 2 * self.stages[-1].M + 2

    def loops(self, stage: int | None = None) -> list[Loop]:
        """Loops of stage ``stage`` (default: last), innermost first."""
        stage = len(self.stages) if stage is None else stage
        sig = self.stages[stage - 1].sigma
        with self.field.context():
            return [Loop(st.M + 1, self.eta, sig / st.sigma) for st in self.stages[:stage]]

    def min_margin(self) -> Scalar:
        return min(m.min_abs for m in self.stages[-1].margins)

    def to_json(self, poly=None) -> dict:
        f = format_scalar
        out = {
            "n_loops": self.n_loops,
            "eta": f(self.eta),
            "precision_bits": self.precision_bits,
            "delta": f(self.delta),
            "stages": [
                {
                    "k": st.k,
                    "M": st.M,
                    "epsilon": f(st.epsilon),
                    "parity": st.parity,
                    "sigma": f(st.sigma),
                    "margins": [
                        {"loop": m.loop, "min_abs": f(m.min_abs), "samples": m.samples}
                        for m in st.margins
                    ],
                }
                for st in self.stages
            ],
            "final_epsilon": f(self.final_epsilon),
        }
        if poly is not None:
            out["polynomial"] = poly_to_json(poly)
        return out

    @classmethod
    def from_json(cls, d: dict) -> "NestCertificate":
        field = Field.from_tag(d["precision_bits"])
        p = field.parse
        stages = [
            StageRecord(
                k=int(s["k"]),
                M=int(s["M"]),
                epsilon=p(s["epsilon"]),
                parity=int(s["parity"]),
                sigma=p(s["sigma"]),
                margins=[Margin(int(m["loop"]), p(m["min_abs"]), int(m["samples"])) for m in s["margins"]],
            )
            for s in d["stages"]
        ]
        return cls(
            n_loops=int(d["n_loops"]),
            eta=p(d["eta"]),
            field=field,
            stages=stages,
            final_epsilon=p(d.get("final_epsilon", "0")),
            delta=p(d.get("delta", "1/4")),
        )


@dataclass(frozen=True)
class NestOptions:
    """Build knobs.  ``precision`` is ``"auto"``, ``"rational"`` or a bit count."""

    precision: object = "auto"
    delta: object = "1/4"
    t_max: int = 64
    min_samples: int = MIN_SAMPLES
    max_precision_bits: int = 8192


def _field_for(opts: NestOptions, n: int) -> Field:
    if opts.precision == "rational":
        return Field.rational()
    if opts.precision == "auto":
        return Field.bigfloat(max(256, 8 * m_sequence(n)[-1]))
    return Field.bigfloat(int(opts.precision))


def _samples(opts: NestOptions, freq: int) -> int:
    return max(opts.min_samples, SAMPLES_PER_FREQ * freq)


def _underflows(u, loop: Loop, margin) -> bool:
    field = u.field
    if field.exact:
        return False
    with field.context():
        rmax = field(loop.scale) * field.sqrt(1 + field(loop.eta))
        scale = term_scale(u, rmax)
        return margin < scale * field.two_pow(-field.precision_bits // 2)


def _accepts(u, checks, samples_of) -> bool:
    # checks: list of (loop, expected_sign, required_min_abs)
    for phase in (0, 1):
        for loop, want, need in checks:
            n = samples_of(loop.M)
            idx = range(0, 2 * n, 2) if phase == 0 else range(1, 2 * n, 2)
            try:
                got, m = _scan(u, loop, 2 * n, idx, expected=want)
            except (SignViolation, ZeroSample):
                return False
            if m < need:
                return False
    return True


def epsilon_search(
    u_k: BiharmonicPoly,
    M: int,
    branch_sign: int,
    inner_loops: list,
    delta,
    eta,
    opts: NestOptions = NestOptions(),
    t_start: int = 2,
) -> Scalar:
    """Largest ``eps = 2^-t`` (``t >= t_start``) passing every sign check.

    ``inner_loops`` holds ``(loop, sign, margin)`` for ``u_k`` at its own
    scale.  A candidate passes when the new outer loop (frequency ``M+1``,
    scale 1) has sign ``-branch_sign`` with margin at least ``delta`` times
    the bump's analytic margin, and every inner loop, shrunk by ``eps``,
    keeps its sign with margin at least ``delta * eps^M`` times its old one.
    Every check runs at ``N`` samples and again on the interleaved ``2N``
    grid.
    """
    t = _search_exponent(u_k, M, branch_sign, inner_loops, delta, eta, opts, t_start)
    return u_k.field.two_pow(-t)


def _search_exponent(
    u_k: BiharmonicPoly,
    M: int,
    branch_sign: int,
    inner_loops: list,
    delta,
    eta,
    opts: NestOptions = NestOptions(),
    t_start: int = 2,
) -> int:
    field = u_k.field
    delta = field(delta)
    eta = field(eta)
    P = make_pm(M + 1, eta, field)
    n_new = _samples(opts, M + 1)
    with field.context():
        new_need = delta * bump_margin(field, M + 1, eta, n_new)
    for t in range(t_start, opts.t_max + 1):
        eps = field.two_pow(-t)
        cand = linear_combine(1, dilate_scale(u_k, eps, M), branch_sign, P)
        with field.context():
            checks = [(Loop(M + 1, eta, field(1)), -branch_sign, new_need)]
            epsM = eps ** M
            for loop, s, margin in inner_loops:
                checks.append((Loop(loop.M, eta, loop.scale * eps), s, delta * epsM * margin))
        if _accepts(cand, checks, lambda m: _samples(opts, m)):
            log.debug("stage M=%d accepted eps=2^-%d", M, t)
            return t
    raise ExhaustedSchedule(f"no eps in 2^-{t_start}..2^-{opts.t_max} passed for M={M}")


def _record_margins(u, loops: list[Loop], opts: NestOptions) -> list[Margin]:
    out = []
    for j, loop in enumerate(loops, start=1):
        n = _samples(opts, loop.M)
        s, m = sign_margins(u, loop, n)
        if s != (-1) ** j:
            raise SignViolation(f"loop {j} has sign {s}, expected {(-1) ** j}")
        if _underflows(u, loop, m):
            raise PrecisionUnderflow(f"loop {j} margin below 2^-(bits/2) of the term scale")
        out.append(Margin(j, m, n))
    return out


def base_stage(eta, field: Field, opts: NestOptions = NestOptions()):
    """``u_1 = P_2`` and its one-stage certificate."""
    u = make_pm(2, eta, field)
    eta = field(eta)
    cert = NestCertificate(n_loops=1, eta=eta, field=field, delta=field(opts.delta))
    st = StageRecord(k=1, M=1, epsilon=field(1), parity=-1, sigma=field(1))
    cert.stages.append(st)
    st.margins = _record_margins(u, cert.loops(1), opts)
    return u, cert


def build_stage(u_k: BiharmonicPoly, cert: NestCertificate, k: int, opts: NestOptions = NestOptions()):
    """Advance a stage-``k`` polynomial and certificate to stage ``k+1``."""
    if len(cert.stages) != k:
        raise ValueError(f"certificate has {len(cert.stages)} stages, expected {k}")
    field = u_k.field
    M = 2 * cert.stages[-1].M + 3
    if u_k.degree != M - 1:
        raise ValueError(f"stage {k} polynomial has degree {u_k.degree}, expected {M - 1}")
    new_index = k + 1
    branch = 1 if new_index % 2 else -1
    inner = [
        (loop, (-1) ** j, m.min_abs)
        for j, (loop, m) in enumerate(zip(cert.loops(k), cert.stages[-1].margins), start=1)
    ]
    t = 2
    while True:
        t = _search_exponent(u_k, M, branch, inner, cert.delta, cert.eta, opts, t)
        eps = field.two_pow(-t)
        u_next = linear_combine(1, dilate_scale(u_k, eps, M), branch, make_pm(M + 1, cert.eta, field))
        with field.context():
            sigma = cert.stages[-1].sigma * eps
        st = StageRecord(k=new_index, M=M, epsilon=eps, parity=(-1) ** new_index, sigma=sigma)
        new_cert = replace(cert, n_loops=new_index, stages=cert.stages + [st])
        try:
            st.margins = _record_margins(u_next, new_cert.loops(), opts)
        except (SignViolation, ZeroSample):
            # the full-grid replay disagreed with the search; keep shrinking
            t += 1
            continue
        return u_next, new_cert


def _build_once(n: int, eta, field: Field, opts: NestOptions):
    u, cert = base_stage(eta, field, opts)
    for k in range(1, n):
        u, cert = build_stage(u, cert, k, opts)
        log.info("stage %d: M=%d eps=%s", k + 1, cert.stages[-1].M, format_scalar(cert.stages[-1].epsilon))
    return u, cert


def build_nest(n: int, eta="1/2", opts: NestOptions = NestOptions()):
    """Polynomial ``u_n`` of degree ``2 M_n + 2`` with ``n`` alternating sign loops.

    With ``precision="auto"`` the bit count starts at ``max(256, 8 M_n)`` and
    doubles on :class:`ExhaustedSchedule` or :class:`PrecisionUnderflow`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    field = _field_for(opts, n)
    eta_s = field(eta)
    if not 0 < eta_s < 1:
        raise ValueError("eta must lie in (0, 1)")
    while True:
        try:
            return _build_once(n, eta, field, opts)
        except (ExhaustedSchedule, PrecisionUnderflow) as exc:
            if field.exact or opts.precision != "auto" or 2 * field.precision_bits > opts.max_precision_bits:
                raise
            log.warning("%s; retrying at %d bits", exc, 2 * field.precision_bits)
            field = Field.bigfloat(2 * field.precision_bits)


def _loop_signs_hold(u, cert: NestCertificate) -> bool:
    for j, loop in enumerate(cert.loops(), start=1):
        try:
            _scan(u, loop, _samples_for_cert(cert, j), expected=(-1) ** j)
        except (SignViolation, ZeroSample):
            return False
    return True


def _samples_for_cert(cert: NestCertificate, j: int) -> int:
    return cert.stages[-1].margins[j - 1].samples


def final_perturb(
    u: BiharmonicPoly,
    cert: NestCertificate,
    check: Optional[Callable[[BiharmonicPoly], bool]] = None,
    epsilon=None,
    max_retries: int = 64,
):
    """``u + eps*`` with ``eps* = min margin / 2`` unless given.

    Every loop sign is re-verified after the shift.  ``check`` is an optional
    regularity test (the nodal tracer's gradient check); on failure ``eps*``
    is multiplied by 0.9, at most ``max_retries`` times.
    """
    field = u.field
    margins = [m.min_abs for m in cert.stages[-1].margins]
    if not margins or min(margins) <= 0:
        raise ValueError("certificate needs strictly positive margins")
    with field.context():
        eps = field(epsilon) if epsilon is not None else cert.min_margin() / 2
    if eps <= 0:
        raise ValueError("perturbation constant must be strictly positive")
    for attempt in range(max_retries + 1):
        shifted = add_constant(u, eps)
        if not _loop_signs_hold(shifted, cert):
            raise SignViolation("loop signs changed under the constant shift")
        if check is None or check(shifted):
            return shifted, replace(cert, final_epsilon=eps)
        log.info("regularity check failed at attempt %d; shrinking eps*", attempt)
        with field.context():
            eps = eps * field(mpq(9, 10))
    raise RetriesExhausted(f"no regular perturbation after {max_retries} retries")


# -- verification ------------------------------------------------------------


@dataclass
class Violation:
    check: str
    message: str
    stage: int | None = None
    loop: int | None = None

    def __str__(self):
        where = ""
        if self.stage is not None:
            where += f" stage {self.stage}"
        if self.loop is not None:
            where += f" loop {self.loop}"
        return f"[{self.check}]{where}: {self.message}"


def replay_polynomials(cert: NestCertificate) -> list[BiharmonicPoly]:
    """Rebuild ``u_1..u_n`` from the recorded eta, M's and dilations."""
    field = cert.field
    polys = [make_pm(2, cert.eta, field)]
    for st in cert.stages[1:]:
        branch = 1 if st.k % 2 else -1
        prev = polys[-1]
        polys.append(linear_combine(1, dilate_scale(prev, st.epsilon, st.M), branch, make_pm(st.M + 1, cert.eta, field)))
    return polys


def _close(field: Field, a, b, ulps: int = 2) -> bool:
    if field.exact:
        return a == b
    with field.context():
        return abs(a - b) <= ulps * field.ulp(max(abs(a), abs(b)))


def verify_certificate(cert: NestCertificate, poly=None) -> list[Violation]:
    """Replay every recorded claim; an empty list means the certificate holds."""
    out: list[Violation] = []
    field = cert.field
    stages = cert.stages
    if not stages:
        return [Violation("structure", "certificate has no stages")]
    if cert.n_loops != len(stages):
        out.append(Violation("structure", f"n_loops={cert.n_loops} but {len(stages)} stages"))
    expected_M = m_sequence(len(stages))
    for i, st in enumerate(stages):
        if st.k != i + 1:
            out.append(Violation("structure", f"stage index {st.k}, expected {i + 1}", stage=i + 1))
        if st.M != expected_M[i]:
            out.append(Violation("recurrence", f"M={st.M} breaks M_(k+1)=2M_k+3 (expected {expected_M[i]})", stage=st.k))
        if st.parity != (-1) ** st.k:
            out.append(Violation("parity", f"parity {st.parity}, expected {(-1) ** st.k}", stage=st.k))
        with field.context():
            if i == 0:
                if st.epsilon != 1 or st.sigma != 1:
                    out.append(Violation("scale", "stage 1 must have epsilon = sigma = 1", stage=1))
            else:
                if not 0 < st.epsilon < 1:
                    out.append(Violation("scale", "epsilon outside (0, 1)", stage=st.k))
                if st.sigma != stages[i - 1].sigma * st.epsilon:
                    out.append(Violation("scale", "sigma is not the running product of epsilons", stage=st.k))
        if len(st.margins) != st.k:
            out.append(Violation("structure", f"{len(st.margins)} margins for {st.k} loops", stage=st.k))
        for m in st.margins:
            if not m.min_abs > 0:
                out.append(Violation("margin", f"recorded margin {format_scalar(m.min_abs)} is not positive", stage=st.k, loop=m.loop))
    if out:
        return out

    polys = replay_polynomials(cert)
    for st, u in zip(stages, polys):
        if u.degree != 2 * st.M + 2:
            out.append(Violation("degree", f"degree {u.degree}, expected {2 * st.M + 2}", stage=st.k))
        for loop, m in zip(cert.loops(st.k), st.margins):
            want = (-1) ** m.loop
            try:
                got, value = _scan(u, loop, m.samples)
            except (SignViolation, ZeroSample) as exc:
                out.append(Violation("replay", str(exc), stage=st.k, loop=m.loop))
                continue
            if got != want:
                out.append(Violation("replay", f"sign {got}, expected {want}", stage=st.k, loop=m.loop))
            elif not _close(field, value, m.min_abs):
                out.append(Violation("replay", f"margin {format_scalar(value)} differs from recorded {format_scalar(m.min_abs)}", stage=st.k, loop=m.loop))

    eps = cert.final_epsilon
    with field.context():
        half = cert.min_margin() / 2
    if eps < 0 or eps > half:
        out.append(Violation("final_epsilon", f"eps*={format_scalar(eps)} must lie in [0, min margin / 2]"))
    final = add_constant(polys[-1], eps) if eps else polys[-1]
    if eps > 0 and eps <= half and not _loop_signs_hold(final, cert):
        out.append(Violation("final_epsilon", "loop signs do not survive the shift"))
    if poly is not None and not coefficients_equal(poly, final):
        out.append(Violation("polynomial", "shipped polynomial differs from the replayed construction"))
    return out


def certificate_from_file(d: dict):
    """``(cert, embedded polynomial or None)`` from a parsed certificate file."""
    cert = NestCertificate.from_json(d)
    poly = poly_from_json(d["polynomial"]) if "polynomial" in d else None
    return cert, poly
