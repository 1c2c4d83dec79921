"""Configurable-precision real scalars.

Two modes share one interface:

* ``rational``: exact ``gmpy2.mpq`` arithmetic. Transcendental values
  (square roots, trig, logs) are computed as 64-bit big-floats and then
  converted exactly, so they are dyadic rationals close to the true value.
* ``bigfloat``: ``gmpy2.mpfr`` with ``precision_bits`` of mantissa and the
  widest exponent range MPFR offers, which is unbounded for our purposes.

Arithmetic on bigfloat values must run inside ``field.context()``; every
public routine in the package takes care of that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import gmpy2
from gmpy2 import mpfr, mpq, mpz

Scalar = Union[mpq, mpfr]

RATIONAL_POINT_BITS = 64
_EMAX = gmpy2.get_emax_max()
_EMIN = gmpy2.get_emin_min()
_MPFR = type(mpfr(0))

_ROUNDING = {
    None: gmpy2.RoundToNearest,
    "nearest": gmpy2.RoundToNearest,
    "down": gmpy2.RoundToZero,
    "up": gmpy2.RoundAwayZero,
}


@dataclass(frozen=True)
class Field:
    mode: str = "bigfloat"
    precision_bits: int = 256

    def __post_init__(self):
        if self.mode not in ("rational", "bigfloat"):
            raise ValueError(f"unknown scalar mode {self.mode!r}")
        if self.precision_bits < 2:
            raise ValueError("precision_bits must be at least 2")

    @classmethod
    def rational(cls) -> "Field":
        return cls("rational", RATIONAL_POINT_BITS)

    @classmethod
    def bigfloat(cls, bits: int = 256) -> "Field":
        return cls("bigfloat", int(bits))

    @classmethod
    def from_tag(cls, tag) -> "Field":
        """Inverse of :attr:`tag`: ``"rational"`` or an integer bit count."""
        if tag == "rational":
            return cls.rational()
        return cls.bigfloat(int(tag))

    @property
    def exact(self) -> bool:
        return self.mode == "rational"

    @property
    def tag(self):
        return "rational" if self.exact else self.precision_bits

    @property
    def work_bits(self) -> int:
        return RATIONAL_POINT_BITS if self.exact else self.precision_bits

    def context(self, rounding: str | None = None):
        return gmpy2.context(
            precision=self.work_bits,
            emax=_EMAX,
            emin=_EMIN,
            round=_ROUNDING[rounding],
        )

    # -- conversion -------------------------------------------------------

    def __call__(self, value) -> Scalar:
        t = type(value)
        if t is _MPFR and not self.exact and value.precision == self.precision_bits:
            return value
        if t is mpq and self.exact:
            return value
        if isinstance(value, str):
            return self.parse(value)
        if isinstance(value, Fraction):
            value = mpq(value.numerator, value.denominator)
        if self.exact:
            if isinstance(value, float):
                if not math.isfinite(value):
                    raise ValueError("non-finite scalar")
            return mpq(value)
        with self.context():
            return mpfr(value)

    def parse(self, text: str) -> Scalar:
        text = text.strip()
        if self.exact:
            return mpq(text)
        with self.context():
            if "/" in text:
                return mpfr(mpq(text))
            return mpfr(text)

    def format(self, x) -> str:
        """Full-precision string; parses back to the identical value."""
        return format_scalar(x)

    def zero(self) -> Scalar:
        return self(0)

    def one(self) -> Scalar:
        return self(1)

    def two_pow(self, e: int) -> Scalar:
        """Exact power of two in either mode."""
        if self.exact:
            return mpq(1 << e, 1) if e >= 0 else mpq(1, 1 << (-e))
        with self.context():
            return gmpy2.mul_2exp(mpfr(1), e)

    # -- transcendental helpers -----------------------------------------

    def _lift(self, x):
        return mpq(x) if self.exact else x

    def sqrt(self, x, rounding: str | None = None) -> Scalar:
        with self.context(rounding):
            return self._lift(gmpy2.sqrt(mpfr(x)))

    def cos(self, x) -> Scalar:
        with self.context():
            return self._lift(gmpy2.cos(mpfr(x)))

    def sin(self, x) -> Scalar:
        with self.context():
            return self._lift(gmpy2.sin(mpfr(x)))

    def log(self, x) -> Scalar:
        with self.context():
            return self._lift(gmpy2.log(mpfr(x)))

    def exp(self, x) -> Scalar:
        with self.context():
            return self._lift(gmpy2.exp(mpfr(x)))

    def atan2(self, y, x) -> Scalar:
        with self.context():
            return self._lift(gmpy2.atan2(mpfr(y), mpfr(x)))

    def pi(self) -> Scalar:
        with self.context():
            return self._lift(gmpy2.const_pi())

    def angle(self, i: int, n: int, offset=0) -> Scalar:
        """The equispaced angle ``2*pi*(i + offset)/n``."""
        with self.context():
            t = 2 * gmpy2.const_pi() * (mpfr(i) + mpfr(offset)) / n
            return self._lift(t)

    def ulp(self, x) -> Scalar:
        """Spacing of the working format at ``x``; zero in exact mode."""
        if self.exact:
            return mpq(0)
        with self.context():
            x = abs(mpfr(x))
            if x == 0:
                return mpfr(0)
            e, _ = gmpy2.frexp(x)
            return gmpy2.mul_2exp(mpfr(1), e - self.precision_bits)


def sign(x) -> int:
    return int(gmpy2.sign(x))


def to_float(x) -> float:
    """Nearest double; saturates silently to 0.0 / inf outside double range."""
    return float(x)


def log2_abs(x) -> float:
    """log2|x| as a float, valid far outside the double range; -inf at 0."""
    if x == 0:
        return -math.inf
    with gmpy2.context(precision=64, emax=_EMAX, emin=_EMIN):
        e, m = gmpy2.frexp(abs(mpfr(x)))
    return math.log2(float(m)) + int(e)


def is_dyadic(q: mpq) -> bool:
    d = q.denominator
    return d & (d - 1) == 0


def format_scalar(x) -> str:
    if isinstance(x, mpq):
        return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else str(x.numerator)
    if isinstance(x, (int, type(mpz(0)))):
        return str(x)
    if not isinstance(x, type(mpfr(0))):
        x = mpfr(x)
    if x == 0:
        return "0"
    prec = x.precision
    ndig = int(math.ceil(prec * math.log10(2))) + 2
    mant, exp, _ = x.digits(10, ndig)
    neg = mant.startswith("-")
    mant = mant.lstrip("-")
    s = f"{mant[0]}.{mant[1:].rstrip('0') or '0'}e{exp - 1}"
    return ("-" if neg else "") + s
