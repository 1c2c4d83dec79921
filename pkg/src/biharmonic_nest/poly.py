"""Harmonic and biharmonic polynomials in the Almansi representation.

A harmonic polynomial is stored on the basis ``Re z^k, Im z^k``; a
biharmonic one as the pair ``(p, q)`` meaning ``p + r^2 q``.  Every
operation here maps that representation to itself, so ``laplacian`` applied
twice always returns an exactly zero coefficient vector.

:class:`LayeredPoly` is the general Gauss decomposition
``sum_j r^(2j) h_j``; it exists so the nodal tracer can also handle
non-biharmonic inputs such as the Hilbert product of circles.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import gmpy2
from gmpy2 import mpq, mpz

from .scalar import Field, Scalar, format_scalar, log2_abs


def _trim(re: Sequence, im: Sequence):
    n = max(len(re), len(im), 1)
    re = list(re) + [0] * (n - len(re))
    im = list(im) + [0] * (n - len(im))
    while n > 1 and re[n - 1] == 0 and im[n - 1] == 0:
        n -= 1
    return re[:n], im[:n]


@dataclass(frozen=True)
class HarmonicPoly:
    """``sum_k re[k] Re(z^k) + im[k] Im(z^k)``; trailing zeros are trimmed."""

    field: Field
    re: tuple
    im: tuple

    def __post_init__(self):
        re, im = _trim(self.re, self.im)
        if im[0] != 0:
            raise ValueError("coefficient of Im z^0 must be zero")
        re = tuple(self.field(c) for c in re)
        im = tuple(self.field(c) for c in im)
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @classmethod
    def zero(cls, field: Field) -> "HarmonicPoly":
        return cls(field, (0,), (0,))

    @classmethod
    def monomial(cls, field: Field, k: int, coeff=1, part: str = "re") -> "HarmonicPoly":
        """``coeff * Re z^k`` (or ``Im z^k`` with ``part="im"``)."""
        re = [0] * (k + 1)
        im = [0] * (k + 1)
        (re if part == "re" else im)[k] = coeff
        return cls(field, tuple(re), tuple(im))

    @property
    def degree(self) -> int:
        return len(self.re) - 1

    @property
    def is_zero(self) -> bool:
        return self.degree == 0 and self.re[0] == 0

    @property
    def layers(self) -> tuple:
        return (self,)

    def map_coeffs(self, f) -> "HarmonicPoly":
        """Apply ``f(k, c)`` to every coefficient (degree ``k``)."""
        with self.field.context():
            re = [f(k, c) for k, c in enumerate(self.re)]
            im = [f(k, c) for k, c in enumerate(self.im)]
        return HarmonicPoly(self.field, tuple(re), tuple(im))

    @cached_property
    def dx(self) -> "HarmonicPoly":
        with self.field.context():
            re = [k * self.re[k] for k in range(1, len(self.re))]
            im = [0] + [k * self.im[k] for k in range(2, len(self.im))]
        return HarmonicPoly(self.field, tuple(re) or (0,), tuple(im))

    @cached_property
    def dy(self) -> "HarmonicPoly":
        with self.field.context():
            re = [k * self.im[k] for k in range(1, len(self.im))]
            im = [0] + [-k * self.re[k] for k in range(2, len(self.re))]
        return HarmonicPoly(self.field, tuple(re) or (0,), tuple(im))

    @cached_property
    def _integer_form(self):
        # numerators over one common denominator, for exact Horner in mpz
        den = mpz(1)
        for c in self.re + self.im:
            den = gmpy2.lcm(den, c.denominator)
        re = [mpz(c * den) for c in self.re]
        im = [mpz(c * den) for c in self.im]
        return re, im, den


@dataclass(frozen=True)
class LayeredPoly:
    """``sum_j r^(2j) layers[j]`` with harmonic layers."""

    layers: tuple

    def __post_init__(self):
        layers = list(self.layers)
        if not layers:
            raise ValueError("need at least one layer")
        while len(layers) > 1 and layers[-1].is_zero:
            layers.pop()
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def field(self) -> Field:
        return self.layers[0].field

    @property
    def degree(self) -> int:
        return _layered_degree(self.layers)


@dataclass(frozen=True)
class BiharmonicPoly:
    """``p + r^2 q`` with ``p, q`` harmonic."""

    p: HarmonicPoly
    q: HarmonicPoly

    def __post_init__(self):
        if self.p.field != self.q.field:
            raise ValueError("p and q live in different fields")

    @classmethod
    def zero(cls, field: Field) -> "BiharmonicPoly":
        z = HarmonicPoly.zero(field)
        return cls(z, z)

    @property
    def field(self) -> Field:
        return self.p.field

    @property
    def layers(self) -> tuple:
        return (self.p, self.q)

    @property
    def degree(self) -> int:
        return _layered_degree(self.layers)

    @property
    def is_zero(self) -> bool:
        return self.p.is_zero and self.q.is_zero


def _layered_degree(layers) -> int:
    deg = 0
    for j, h in enumerate(layers):
        if not h.is_zero:
            deg = max(deg, h.degree + 2 * j)
    return deg


@dataclass(frozen=True)
class BumpSpec:
    R: Scalar
    M: int
    eta: Scalar
    epsilon: Scalar
    field: Field


# -- evaluation -----------------------------------------------------------


def _horner(h: HarmonicPoly, x, y):
    # Re(sum_k a_k z^k) with a_k = re_k - i im_k, high degree first
    re, im = h.re, h.im
    d = len(re) - 1
    wr, wi = re[d], -im[d]
    for k in range(d - 1, -1, -1):
        wr, wi = wr * x - wi * y + re[k], wr * y + wi * x - im[k]
    return wr


def _horner_exact(h: HarmonicPoly, X, Y, den):
    # same recurrence on integers; the point is (X + iY)/den
    re, im, cden = h._integer_form
    d = len(re) - 1
    wr, wi = re[d], -im[d]
    dp = mpz(1)
    for k in range(d - 1, -1, -1):
        dp *= den
        wr, wi = wr * X - wi * Y, wr * Y + wi * X
        if re[k]:
            wr += re[k] * dp
        if im[k]:
            wi -= im[k] * dp
    return mpq(wr, cden * dp)


def _integer_point(x: mpq, y: mpq):
    den = gmpy2.lcm(x.denominator, y.denominator)
    return mpz(x * den), mpz(y * den), den


def _harmonic_values(h: HarmonicPoly, x, y):
    if h.field.exact:
        return _horner_exact(h, *_integer_point(mpq(x), mpq(y)))
    return _horner(h, x, y)


def evaluate(u, x, y) -> Scalar:
    """Value of a harmonic, biharmonic or layered polynomial at ``(x, y)``."""
    field = u.field
    x, y = field(x), field(y)
    layers = u.layers
    with field.context():
        if field.exact and len(layers) > 1:
            X, Y, den = _integer_point(x, y)
            vals = [_horner_exact(h, X, Y, den) for h in layers]
        else:
            vals = [_harmonic_values(h, x, y) for h in layers]
        if len(vals) == 1:
            return vals[0]
        r2 = x * x + y * y
        acc = vals[-1]
        for v in reversed(vals[:-1]):
            acc = acc * r2 + v
        return acc


def grad(u, x, y) -> tuple[Scalar, Scalar]:
    """Exact analytic gradient ``(du/dx, du/dy)``."""
    field = u.field
    x, y = field(x), field(y)
    with field.context():
        r2 = x * x + y * y
        gx = field(0)
        gy = field(0)
        prev = field(0)  # r^(2j-2)
        cur = field(1)  # r^(2j)
        for j, h in enumerate(u.layers):
            if not h.is_zero:
                gx += cur * _harmonic_values(h.dx, x, y)
                gy += cur * _harmonic_values(h.dy, x, y)
                if j:
                    c = 2 * j * prev * _harmonic_values(h, x, y)
                    gx += c * x
                    gy += c * y
            prev, cur = cur, cur * r2
        return gx, gy


def laplacian(u):
    """Exact Laplacian, staying inside the Almansi/Gauss representation.

    ``laplacian(r^(2j) H_k) = 4 j (j + k) r^(2j-2) H_k`` for ``H_k`` homogeneous
    harmonic of degree ``k``; with ``j = 1`` this is the familiar ``4(k+1)``.
    """
    field = u.field
    layers = u.layers
    out = []
    for j in range(1, len(layers)):
        out.append(layers[j].map_coeffs(lambda k, c, j=j: 4 * j * (j + k) * c))
    if not out:
        return HarmonicPoly.zero(field)
    return _wrap_layers(out)


def _wrap_layers(layers):
    field = layers[0].field
    layers = list(layers)
    while len(layers) > 1 and layers[-1].is_zero:
        layers.pop()
    if len(layers) == 1:
        return layers[0]
    if len(layers) == 2:
        return BiharmonicPoly(layers[0], layers[1])
    return LayeredPoly(tuple(layers))


# -- vector-space operations ----------------------------------------------


def _combine_h(a, h: HarmonicPoly, b, g: HarmonicPoly) -> HarmonicPoly:
    field = h.field
    n = max(len(h.re), len(g.re))
    with field.context():
        hre = list(h.re) + [0] * (n - len(h.re))
        him = list(h.im) + [0] * (n - len(h.im))
        gre = list(g.re) + [0] * (n - len(g.re))
        gim = list(g.im) + [0] * (n - len(g.im))
        re = [a * s + b * t for s, t in zip(hre, gre)]
        im = [a * s + b * t for s, t in zip(him, gim)]
    return HarmonicPoly(field, tuple(re), tuple(im))


def linear_combine(a, u, b, v):
    """``a*u + b*v`` coefficient-wise."""
    field = u.field
    if v.field != field:
        raise ValueError("operands live in different fields")
    a, b = field(a), field(b)
    lu, lv = list(u.layers), list(v.layers)
    n = max(len(lu), len(lv))
    zero = HarmonicPoly.zero(field)
    lu += [zero] * (n - len(lu))
    lv += [zero] * (n - len(lv))
    layers = [_combine_h(a, h, b, g) for h, g in zip(lu, lv)]
    if isinstance(u, BiharmonicPoly) or isinstance(v, BiharmonicPoly):
        if len(layers) == 1:
            layers.append(zero)
        if len(layers) == 2:
            return BiharmonicPoly(*layers)
    return _wrap_layers(layers)


def add_constant(u, c):
    """``u + c``; the constant lands in the degree-0 slot of ``p``."""
    field = u.field
    c = field(c)
    p = u.layers[0]
    with field.context():
        re = (p.re[0] + c,) + p.re[1:]
    p = HarmonicPoly(field, re, p.im)
    if isinstance(u, HarmonicPoly):
        return p
    if isinstance(u, BiharmonicPoly):
        return BiharmonicPoly(p, u.q)
    return LayeredPoly((p,) + u.layers[1:])


def dilate_scale(Q: BiharmonicPoly, epsilon, M: int) -> BiharmonicPoly:
    """``epsilon^M * Q(z / epsilon)``; requires ``deg Q <= M - 1``.

    The degree condition guarantees only positive powers of ``epsilon``
    appear, so exact inputs give exact outputs.
    """
    if Q.degree > M - 1:
        raise ValueError(f"dilate_scale needs deg(Q) <= M-1, got deg {Q.degree} with M={M}")
    field = Q.field
    epsilon = field(epsilon)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    with field.context():
        p = Q.p.map_coeffs(lambda k, c: c * epsilon ** (M - k) if c else c)
        q = Q.q.map_coeffs(lambda k, c: c * epsilon ** (M - 2 - k) if c else c)
    return BiharmonicPoly(p, q)


# -- the bump and its curve ------------------------------------------------


def bump_epsilon_bound(field: Field, R, M: int, eta) -> Scalar:
    """The largest admissible bump weight, rounded toward zero.

    ``eta R^(2-M) / (8 (1+eta)^(M/2))``.  The rational part is computed
    exactly; for odd ``M`` the square root is rounded up so the result is a
    guaranteed lower bound.
    """
    Rq, eq = mpq(R), mpq(eta)
    base = eq * Rq ** (2 - M) / (8 * (1 + eq) ** (M // 2))
    if M % 2:
        with field.context("up"):
            s_up = mpq(gmpy2.sqrt(gmpy2.mpfr(1 + eq)))
        base = base / s_up
    if field.exact:
        return base
    with field.context("down"):
        return gmpy2.mpfr(base)


def _bound_squared(R, M, eta) -> mpq:
    Rq, eq = mpq(R), mpq(eta)
    return eq ** 2 * Rq ** (4 - 2 * M) / (64 * (1 + eq) ** M)


def make_bump(R, M: int, eta, epsilon_override=None, field: Field | None = None):
    """The barrier bump ``(R^2 - r^2) Re z^M + eps Re z^(2M)``.

    Returns the polynomial and its :class:`BumpSpec`.
    """
    field = field or Field.bigfloat()
    R, eta = field(R), field(eta)
    if M < 1:
        raise ValueError("M must be >= 1")
    if R <= 0:
        raise ValueError("R must be positive")
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if epsilon_override is None:
        eps = bump_epsilon_bound(field, R, M, eta)
    else:
        eps = field(epsilon_override)
        if eps <= 0 or mpq(eps) ** 2 > _bound_squared(R, M, eta):
            raise ValueError("epsilon_override must lie in (0, bound]")
    with field.context():
        R2 = R * R
    p = [0] * (2 * M + 1)
    p[M] = R2
    p[2 * M] = eps
    pim = [0] * (2 * M + 1)
    q = [0] * (M + 1)
    q[M] = -1
    poly = BiharmonicPoly(
        HarmonicPoly(field, tuple(p), tuple(pim)),
        HarmonicPoly(field, tuple(q), (0,) * (M + 1)),
    )
    return poly, BumpSpec(R, M, eta, eps, field)


def _radius_squared(field: Field, R, M: int, eta, theta):
    with field.context():
        c = field.cos(M * field(theta)) if theta != 0 else field(1)
        return field(R) ** 2 * (1 + field(eta) * c), c


def gamma_point(R, M: int, eta, theta, field: Field | None = None):
    """Point of the petal curve ``r^2 = R^2 (1 + eta cos(M theta))``."""
    field = field or Field.bigfloat()
    theta = field(theta)
    r2, _ = _radius_squared(field, R, M, eta, theta)
    if field.exact:
        # round the point as a whole, not its factors
        with field.context():
            t = gmpy2.mpfr(theta)
            r = gmpy2.sqrt(gmpy2.mpfr(r2))
            return mpq(r * gmpy2.cos(t)), mpq(r * gmpy2.sin(t))
    with field.context():
        r = gmpy2.sqrt(r2)
        return r * gmpy2.cos(theta), r * gmpy2.sin(theta)


def _r_power(field, r2, n: int):
    if n % 2 == 0:
        return r2 ** (n // 2)
    return r2 ** (n // 2) * field.sqrt(r2)


def bump_on_curve(spec: BumpSpec, theta) -> Scalar:
    """Closed form of the bump restricted to its own petal curve."""
    field = spec.field
    theta = field(theta)
    r2, c = _radius_squared(field, spec.R, spec.M, spec.eta, theta)
    M, eps = spec.M, spec.epsilon
    with field.context():
        rM = _r_power(field, r2, M)
        r2M = r2 ** M
        return -(spec.eta * spec.R ** 2 * rM - 2 * eps * r2M) * c * c - eps * r2M


def bump_first_factor(spec: BumpSpec, theta) -> Scalar:
    """``eta R^2 r^M - 2 eps r^(2M)`` on the curve; positive within the bound."""
    field = spec.field
    r2, _ = _radius_squared(field, spec.R, spec.M, spec.eta, field(theta))
    with field.context():
        return spec.eta * spec.R ** 2 * _r_power(field, r2, spec.M) - 2 * spec.epsilon * r2 ** spec.M


# -- term tables for fast float sampling ------------------------------------


def term_table(u):
    """Nonzero terms as ``(radial_power, freq, log2|c_cos|, sgn, log2|c_sin|, sgn)``.

    A term contributes ``r^power (c_cos cos(freq t) + c_sin sin(freq t))``.
    Magnitudes are returned as base-2 logs so coefficients far outside the
    double range survive.
    """
    rows = []
    for j, h in enumerate(u.layers):
        for k in range(len(h.re)):
            a, b = h.re[k], h.im[k]
            if a == 0 and b == 0:
                continue
            rows.append((2 * j + k, k, log2_abs(a), int(gmpy2.sign(a)), log2_abs(b), int(gmpy2.sign(b))))
    return rows


def term_scale(u, r) -> Scalar:
    """Largest term magnitude ``|c| r^power`` at radius ``r``."""
    field = u.field
    best = field(0)
    with field.context():
        r = field(r)
        for j, h in enumerate(u.layers):
            for k in range(len(h.re)):
                c = max(abs(h.re[k]), abs(h.im[k]))
                if c:
                    t = c * r ** (2 * j + k)
                    if t > best:
                        best = t
    return best


def gradient_scale(u, r) -> Scalar:
    """Largest ``|c| power r^(power-1)``: the natural size of ``|grad u|`` at ``r``."""
    field = u.field
    best = field(0)
    with field.context():
        r = field(r)
        for j, h in enumerate(u.layers):
            for k in range(len(h.re)):
                c = max(abs(h.re[k]), abs(h.im[k]))
                p = 2 * j + k
                if c and p:
                    t = c * p * r ** (p - 1)
                    if t > best:
                        best = t
    return best


# -- serialization ------------------------------------------------------------


def _h_to_json(h: HarmonicPoly) -> dict:
    return {"re": [format_scalar(c) for c in h.re], "im": [format_scalar(c) for c in h.im]}


def _h_from_json(field: Field, d: dict) -> HarmonicPoly:
    re = [field.parse(s) for s in d["re"]]
    im = [field.parse(s) for s in d.get("im", ["0"] * len(re))]
    return HarmonicPoly(field, tuple(re), tuple(im))


def poly_to_json(u) -> dict:
    out = {"precision_bits": u.field.tag}
    if isinstance(u, LayeredPoly):
        out["layers"] = [_h_to_json(h) for h in u.layers]
        return out
    layers = u.layers
    out["p"] = _h_to_json(layers[0])
    out["q"] = _h_to_json(layers[1] if len(layers) > 1 else HarmonicPoly.zero(u.field))
    return out


def poly_from_json(d: dict):
    field = Field.from_tag(d["precision_bits"])
    if "layers" in d:
        return _wrap_layers([_h_from_json(field, h) for h in d["layers"]])
    return BiharmonicPoly(_h_from_json(field, d["p"]), _h_from_json(field, d["q"]))


def coefficients_equal(u, v) -> bool:
    lu, lv = list(u.layers), list(v.layers)
    while len(lu) > 1 and lu[-1].is_zero:
        lu.pop()
    while len(lv) > 1 and lv[-1].is_zero:
        lv.pop()
    return len(lu) == len(lv) and all(a.re == b.re and a.im == b.im for a, b in zip(lu, lv))


def hilbert_product(field: Field, n: int) -> LayeredPoly:
    """``prod_{k=1..n} (x^2 + y^2 - k^2)`` as a radial polynomial."""
    coeffs = [mpq(1)]
    for k in range(1, n + 1):
        nxt = [mpq(0)] * (len(coeffs) + 1)
        for i, c in enumerate(coeffs):
            nxt[i + 1] += c
            nxt[i] -= k * k * c
        coeffs = nxt
    layers = tuple(HarmonicPoly(field, (c,), (0,)) for c in coeffs)
    return LayeredPoly(layers)
