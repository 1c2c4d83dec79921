import json

import pytest
from gmpy2 import mpq
from hypothesis import given, settings
from hypothesis import strategies as st

from biharmonic_nest.nest import (
    ExhaustedSchedule,
    Loop,
    NestCertificate,
    NestOptions,
    RetriesExhausted,
    SignViolation,
    _search_exponent,
    build_nest,
    build_stage,
    epsilon_search,
    final_perturb,
    m_sequence,
    make_pm,
    replay_polynomials,
    sign_margins,
    verify_certificate,
)
from biharmonic_nest.poly import (
    BiharmonicPoly,
    HarmonicPoly,
    add_constant,
    evaluate,
    gamma_point,
    linear_combine,
    poly_to_json,
)
from biharmonic_nest.scalar import Field

Q = Field.rational()
RATIONAL = NestOptions(precision="rational")
HALF = mpq(1, 2)


@pytest.fixture(scope="module")
def rational3():
    return build_nest(3, HALF, RATIONAL)


@pytest.fixture(scope="module")
def rational2():
    return build_nest(2, HALF, RATIONAL)


# -- sequences and the bump family --------------------------------------------


def test_m_sequence():
    assert m_sequence(5) == [1, 5, 13, 29, 61]
    with pytest.raises(ValueError):
        m_sequence(0)


def test_make_pm_degree():
    for M in (2, 3, 6):
        assert make_pm(M, HALF, Q).degree == 2 * M
    assert make_pm(1, HALF, Q).degree == 3  # r^2 Re z outranks Re z^2


def test_sign_margins_on_p2():
    P = make_pm(2, HALF, Q)
    s, m = sign_margins(P, Loop(2, HALF, mpq(1)), 4096)
    assert s == -1
    assert m >= mpq(1, 24) * (1 - HALF) ** 2
    s2, m2 = sign_margins(linear_combine(-1, P, 0, P), Loop(2, HALF, mpq(1)), 4096)
    assert (s2, m2) == (1, m)


def test_sign_margins_constant():
    one = BiharmonicPoly(HarmonicPoly(Q, (1,), (0,)), HarmonicPoly.zero(Q))
    assert sign_margins(one, Loop(3, HALF, mpq(1, 7)), 4096) == (1, 1)


def test_sign_margins_rejects_sparse_grid():
    with pytest.raises(ValueError):
        sign_margins(make_pm(2, HALF, Q), Loop(100, HALF, mpq(1)), 4096)


def test_sign_margins_detects_mixed_signs():
    x = BiharmonicPoly(HarmonicPoly.monomial(Q, 1), HarmonicPoly.zero(Q))
    with pytest.raises(SignViolation):
        sign_margins(x, Loop(2, HALF, mpq(1)), 4096)


# -- construction -------------------------------------------------------------


def test_base_case():
    u, cert = build_nest(1, HALF, RATIONAL)
    assert u.degree == 4
    assert [s.parity for s in cert.stages] == [-1]
    assert cert.stages[0].margins[0].min_abs > 0


def test_stage_two_uses_r_branch(rational2):
    u, cert = rational2
    st2 = cert.stages[1]
    assert (st2.M, st2.parity, u.degree) == (5, 1, 12)
    assert [m.loop for m in st2.margins] == [1, 2]


def test_three_stages(rational3):
    u, cert = rational3
    assert u.degree == 28
    assert [s.parity for s in cert.stages] == [-1, 1, -1]
    assert [s.M for s in cert.stages] == [1, 5, 13]
    for k, st in enumerate(cert.stages, start=1):
        assert len(st.margins) == k
        assert all(m.min_abs > 0 for m in st.margins)


def test_loop_signs_alternate(rational3):
    u, cert = rational3
    for j, loop in enumerate(cert.loops(), start=1):
        s, _ = sign_margins(u, loop, 4096)
        assert s == (-1) ** j


def test_degree_law_per_stage(rational3):
    _, cert = rational3
    for k, p in enumerate(replay_polynomials(cert), start=1):
        assert p.degree == 2 * m_sequence(k)[-1] + 2


def test_bigfloat_build_matches_degrees():
    u, cert = build_nest(2, HALF, NestOptions(precision=256))
    assert u.degree == 12
    assert cert.precision_bits == 256


def test_build_deterministic():
    a = build_nest(2, HALF, RATIONAL)
    b = build_nest(2, HALF, RATIONAL)
    assert json.dumps(a[1].to_json(a[0])) == json.dumps(b[1].to_json(b[0]))


def test_build_stage_checks_degree(rational2):
    u, cert = rational2
    with pytest.raises(ValueError):
        build_stage(make_pm(2, HALF, Q), cert, 2)


def test_build_rejects_bad_input():
    with pytest.raises(ValueError):
        build_nest(0)
    with pytest.raises(ValueError):
        build_nest(1, 1)


def test_search_degenerate_q_accepts_first_candidate():
    eps = epsilon_search(BiharmonicPoly.zero(Q), 5, -1, [], mpq(1, 4), HALF, RATIONAL)
    assert eps == mpq(1, 4)


def test_search_monotone(rational2):
    u1, cert1 = build_nest(1, HALF, RATIONAL)
    inner = [(cert1.loops(1)[0], -1, cert1.stages[0].margins[0].min_abs)]
    t = _search_exponent(u1, 5, -1, inner, mpq(1, 4), HALF, RATIONAL)
    assert _search_exponent(u1, 5, -1, inner, mpq(1, 4), HALF, RATIONAL, t_start=t + 1) == t + 1


def test_search_exhausts_on_tiny_budget():
    u1, cert1 = build_nest(1, HALF, RATIONAL)
    inner = [(cert1.loops(1)[0], -1, cert1.stages[0].margins[0].min_abs)]
    # a demanded quality of 10x the analytic margin can never be met
    with pytest.raises(ExhaustedSchedule):
        _search_exponent(u1, 5, -1, inner, 10, HALF, NestOptions(precision="rational", t_max=4))


def test_dilation_consistency(rational2):
    """``u_2(eps z) / eps^M - u_1(z)`` is a bounded fraction of ``u_1`` on loop 1."""
    u2, cert = rational2
    u1 = replay_polynomials(cert)[0]
    eps, M = cert.stages[1].epsilon, cert.stages[1].M
    worst = mpq(0)
    for i in range(0, 4096, 16):
        x, y = gamma_point(1, 2, HALF, Q.angle(i, 4096), Q)
        base = evaluate(u1, x, y)
        rem = evaluate(u2, eps * x, eps * y) / eps**M - base
        worst = max(worst, abs(rem / base))
    # the search demands a retained margin of delta = 1/4
    assert worst < 1 - cert.delta


# -- perturbation ------------------------------------------------------------------


def test_final_perturb_keeps_signs(rational3):
    u, cert = rational3
    v, c2 = final_perturb(u, cert)
    assert c2.final_epsilon == cert.min_margin() / 2
    for j, loop in enumerate(cert.loops(), start=1):
        assert sign_margins(v, loop, 4096)[0] == (-1) ** j


def test_final_perturb_rejects_zero(rational2):
    u, cert = rational2
    with pytest.raises(ValueError):
        final_perturb(u, cert, epsilon=0)


def test_final_perturb_retry_schedule(rational2):
    u, cert = rational2
    seen = []

    def check(v):
        seen.append(v)
        return len(seen) == 3

    _, c2 = final_perturb(u, cert, check=check)
    assert c2.final_epsilon == cert.min_margin() / 2 * mpq(9, 10) ** 2
    with pytest.raises(RetriesExhausted):
        final_perturb(u, cert, check=lambda v: False, max_retries=3)


@given(st.fractions(min_value=-0.999, max_value=0.999))
@settings(max_examples=15, deadline=None)
def test_sign_shift_safety(frac):
    u, cert = _cached_rational2()
    c = cert.min_margin() * mpq(frac.numerator, frac.denominator)
    v = add_constant(u, c)
    for j, loop in enumerate(cert.loops(), start=1):
        assert sign_margins(v, loop, 64 * loop.M)[0] == (-1) ** j


_CACHE = {}


def _cached_rational2():
    if "r2" not in _CACHE:
        _CACHE["r2"] = build_nest(2, HALF, RATIONAL)
    return _CACHE["r2"]


# -- verification -------------------------------------------------------------------


@pytest.fixture(scope="module")
def perturbed3(rational3):
    return final_perturb(*rational3)


def _round_trip(cert: NestCertificate, poly):
    d = json.loads(json.dumps(cert.to_json(poly)))
    return d


def test_verify_passes_after_round_trip(perturbed3):
    u, cert = perturbed3
    d = _round_trip(cert, u)
    c2 = NestCertificate.from_json(d)
    assert verify_certificate(c2, u) == []


def test_verify_bigfloat_round_trip():
    u, cert = build_nest(2, HALF, NestOptions(precision=256))
    u, cert = final_perturb(u, cert)
    c2 = NestCertificate.from_json(json.loads(json.dumps(cert.to_json(u))))
    assert verify_certificate(c2, u) == []


@pytest.mark.parametrize(
    "corrupt, check",
    [
        (lambda d: d["stages"][2]["margins"][1].update(min_abs="-" + d["stages"][2]["margins"][1]["min_abs"]), "margin"),
        (lambda d: d["stages"][2].update(M=14), "recurrence"),
        (lambda d: d.update(final_epsilon=d["stages"][2]["margins"][0]["min_abs"]), "final_epsilon"),
        (lambda d: d["stages"][1].update(parity=-1), "parity"),
    ],
)
def test_verify_names_first_violation(perturbed3, corrupt, check):
    u, cert = perturbed3
    d = _round_trip(cert, u)
    corrupt(d)
    bad = verify_certificate(NestCertificate.from_json(d), u)
    assert bad and bad[0].check == check
    if check in ("margin", "recurrence", "parity"):
        assert bad[0].stage in (2, 3)


def test_verify_detects_foreign_polynomial(perturbed3, rational2):
    _, cert = perturbed3
    other, _ = rational2
    assert any(v.check in ("polynomial", "degree") for v in verify_certificate(cert, other))


def test_certificate_json_shape(perturbed3):
    u, cert = perturbed3
    d = cert.to_json(u)
    assert {"n_loops", "eta", "precision_bits", "stages", "final_epsilon", "polynomial"} <= set(d)
    assert {"k", "M", "epsilon", "parity", "sigma", "margins"} <= set(d["stages"][0])
    assert d["polynomial"] == poly_to_json(u)
