import math

import numpy as np
import pytest

from poisson_kam import (
    DecayBound,
    FourierTaylorSeries,
    Truncation,
    WeightedNormParams,
    discard_tracker,
    reassemble_taylor,
    shift_action_expansion,
    taylor_split,
    weighted_norm,
)
from poisson_kam.errors import (
    EtaDegreeError,
    NormDomainError,
    StructureMismatchError,
)

from conftest import cosx, decay, eta, mk, random_series, yi, zeros


def rand_point(rng, n, m):
    return (
        rng.normal(size=m) + 1j * rng.normal(size=m),
        rng.normal(size=n) + 1j * rng.normal(size=n),
        complex(rng.normal(), rng.normal()),
        complex(abs(rng.normal()), 0.2 * rng.normal()),
    )


# ---- add ----------------------------------------------------------------


def test_add_identity():
    f = mk([((1,), (1,), 0, 1, 2.0 + 1j), ((0,), (2,), 0, 0, -3.0)])
    assert f + zeros() == f


def test_add_two_unit_modes():
    f = mk([((1,), (0,), 0, 0, 1.0)])
    g = mk([((-1,), (0,), 0, 0, 1.0)])
    s = f + g
    assert s.num_terms == 2
    assert s.coefficient((1,), (0,), 0, 0) == 1.0
    assert s.coefficient((-1,), (0,), 0, 0) == 1.0


def test_add_inverse_cancels_to_empty():
    f = mk([((2,), (1,), 0, 1, 0.75), ((0,), (0,), 0, 2, -1.5j)])
    assert (f + f.scale(-1.0)).is_zero()


def test_add_requires_matching_structure():
    f = mk([((0,), (0,), 0, 0, 1.0)])
    g = mk([((0,), (0,), 0, 0, 1.0)], trunc=Truncation(6, 4, 4))
    with pytest.raises(StructureMismatchError):
        f + g


# ---- mul ----------------------------------------------------------------


def test_mul_monomials():
    y1 = yi(0)
    sq = y1 * y1
    assert list(sq.terms()) == [((0,), (2,), 0, 0, 1.0 + 0j)]


def test_mul_exponent_addition():
    f = mk([((1,), (0,), 0, 1, 1.0)])
    g = mk([((-1,), (0,), 0, 1, 1.0)])
    prod = f * g
    assert list(prod.terms()) == [((0,), (0,), 0, 2, 1.0 + 0j)]


def test_mul_cos_squared(rng):
    # cos^2 = 1/2 + 1/2 cos(2x); oracle: pointwise evaluation
    c = cosx()
    sq = c * c
    assert sq.coefficient((0,), (0,), 0, 0) == pytest.approx(0.5)
    assert sq.coefficient((2,), (0,), 0, 0) == pytest.approx(0.25)
    for _ in range(20):
        y, x, et, xi = rand_point(rng, 1, 1)
        lhs = sq.evaluate(y, x, et, xi)
        rhs = c.evaluate(y, x, et, xi) ** 2
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_mul_eta_degree_guard():
    with pytest.raises(EtaDegreeError):
        eta() * eta()


def test_mul_truncation_discard_tracked():
    base = discard_tracker.snapshot()
    f = mk([((5,), (0,), 0, 0, 1.0)])
    g = mk([((4,), (0,), 0, 0, 1.0)])
    assert (f * g).is_zero()  # |k|=9 > K_max=8
    assert discard_tracker.snapshot() > base


# ---- derivatives ----------------------------------------------------------


def test_partial_xi_exponential():
    f = decay(p=1)
    assert f.partial_xi() == f.scale(-f.decay_rate)


def test_partial_x_mode():
    f = mk([((3,), (0,), 0, 0, 1.0)])
    assert list(f.partial_x(0).terms()) == [((3,), (0,), 0, 0, 3j)]


def test_partial_y_power():
    f = mk([((0,), (2, 1), 0, 0, 1.0)], m=2)
    assert list(f.partial_y(0).terms()) == [((0,), (1, 1), 0, 0, 2.0 + 0j)]


def test_partial_eta_drops_and_counts():
    f = eta() + decay(p=1)
    d = f.partial_eta()
    assert list(d.terms()) == [((0,), (0,), 0, 0, 1.0 + 0j)]


# ---- evaluation -------------------------------------------------------------


def test_eval_constant():
    one = FourierTaylorSeries.constant(1.0, zeros())
    assert one.evaluate([0.3], [1.2], 0.5, 2.0) == 1.0


def test_eval_omega_dot_y():
    om = np.array([0.7, -1.3])
    f = yi(0, m=2, value=om[0]) + yi(1, m=2, value=om[1])
    assert f.evaluate(om, [0.0], 0, 0) == pytest.approx(float(om @ om))


def test_eval_decaying_cos():
    f = cosx(p=1)
    assert f.evaluate([0.0], [0.0], 0.0, 0.0) == pytest.approx(1.0)


# ---- weighted norm ----------------------------------------------------------


def test_norm_cos_sigma_ln2():
    b = weighted_norm(cosx(), WeightedNormParams(0.3, math.log(2.0)))
    assert b == DecayBound(2.0, 0)


def test_norm_single_action_term():
    b = weighted_norm(yi(0), WeightedNormParams(0.3, 1.0))
    assert b.K == pytest.approx(0.3) and b.p == 0


def test_norm_decay_index():
    b = weighted_norm(decay(p=2, value=5.0), WeightedNormParams(1.0, 1.0))
    assert b == DecayBound(5.0, 2)


def test_norm_rejects_eta():
    with pytest.raises(NormDomainError):
        weighted_norm(eta(), WeightedNormParams(1.0, 1.0))


# ---- taylor split -------------------------------------------------------------


def test_split_polynomial_readoff():
    f = mk(
        [
            ((0,), (0,), 0, 0, 3.0),
            ((0,), (1,), 0, 0, 2.0),
            ((0,), (2,), 0, 0, 1.0),
            ((0,), (3,), 0, 0, 1.0),
        ]
    )
    A, B, C, R = taylor_split(f)
    assert list(A.terms()) == [((0,), (0,), 0, 0, 3.0 + 0j)]
    assert list(B[0].terms()) == [((0,), (0,), 0, 0, 2.0 + 0j)]
    assert list(C[0][0].terms()) == [((0,), (0,), 0, 0, 2.0 + 0j)]
    assert list(R.terms()) == [((0,), (3,), 0, 0, 1.0 + 0j)]


def test_split_linear_coefficient_series():
    f = cosx(n=1, m=3, p=1).mul_y(1)
    A, B, C, R = taylor_split(f)
    assert A.is_zero() and R.is_zero()
    assert B[0].is_zero() and B[2].is_zero()
    assert B[1] == cosx(n=1, m=3, p=1)
    assert all(C[i][l].is_zero() for i in range(3) for l in range(3))


def test_split_roundtrip_random(rng):
    for _ in range(25):
        f = random_series(rng, n=2, m=2, nterms=12, dyadic=True)
        A, B, C, R = taylor_split(f)
        assert reassemble_taylor(A, B, C, R) == f
        for i in range(2):
            for l in range(2):
                assert C[i][l] == C[l][i]


# ---- shift of the expansion point ----------------------------------------------


def test_shift_action_expansion_quadratic(rng):
    h = mk([((0,), (2,), 0, 0, 0.5)])
    sh = shift_action_expansion(h, [1.0])
    # (y+1)^2/2 = 1/2 + y + y^2/2
    assert sh.coefficient((0,), (0,), 0, 0) == 0.5
    assert sh.coefficient((0,), (1,), 0, 0) == 1.0
    assert sh.coefficient((0,), (2,), 0, 0) == 0.5
    for _ in range(5):
        y, x, et, xi = rand_point(rng, 1, 1)
        assert sh.evaluate(y, x, et, xi) == pytest.approx(
            h.evaluate(y + 1.0, x, et, xi), rel=1e-12
        )


# ---- serialization ---------------------------------------------------------------


def test_payload_roundtrip_bit_exact(rng):
    from poisson_kam import jsonio

    f = random_series(rng, n=2, m=2, nterms=15, with_eta=True)
    text = jsonio.dumps(f.to_payload())
    g = FourierTaylorSeries.from_payload(jsonio.loads(text))
    assert g == f
    assert jsonio.dumps(g.to_payload()) == text


# ---- invariants on random instances ----------------------------------------------


def test_ring_axioms_exact_dyadic(rng):
    for _ in range(40):
        f = random_series(rng, n=2, m=1, nterms=6, dyadic=True, k_budget=2, l_budget=1, p_budget=1)
        g = random_series(rng, n=2, m=1, nterms=6, dyadic=True, k_budget=2, l_budget=1, p_budget=1)
        h = random_series(rng, n=2, m=1, nterms=6, dyadic=True, k_budget=2, l_budget=1, p_budget=1)
        assert f + g == g + f
        assert (f + g) + h == f + (g + h)
        assert f * g == g * f
        assert (f * g) * h == f * (g * h)
        assert f * (g + h) == f * g + f * h


def test_eval_homomorphism(rng):
    for _ in range(20):
        f = random_series(rng, n=1, m=2, nterms=5, k_budget=3, l_budget=2, p_budget=2)
        g = random_series(rng, n=1, m=2, nterms=5, k_budget=3, l_budget=2, p_budget=2)
        y, x, et, xi = rand_point(rng, 1, 2)
        lhs = (f * g).evaluate(y, x, 0, xi)
        rhs = f.evaluate(y, x, 0, xi) * g.evaluate(y, x, 0, xi)
        assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-11)


def test_derivation_rule(rng):
    for _ in range(20):
        f = random_series(rng, n=2, m=1, nterms=5, dyadic=True, k_budget=3, l_budget=2, p_budget=2)
        g = random_series(rng, n=2, m=1, nterms=5, dyadic=True, k_budget=3, l_budget=2, p_budget=2)
        prod = (f * g).partial_x(0)
        assert prod == f.partial_x(0) * g + f * g.partial_x(0)


def test_norm_submultiplicative(rng):
    params = WeightedNormParams(0.7, 0.9)
    for _ in range(20):
        f = random_series(rng, n=1, m=1, nterms=6, k_budget=3, l_budget=2, p_budget=2)
        g = random_series(rng, n=1, m=1, nterms=6, k_budget=3, l_budget=2, p_budget=2)
        bf, bg, bfg = (
            weighted_norm(f, params),
            weighted_norm(g, params),
            weighted_norm(f * g, params),
        )
        assert bfg.K <= bf.K * bg.K * (1 + 1e-12)
        if not (f * g).is_zero():
            assert bfg.p >= bf.p + bg.p


def test_norm_monotone_in_params(rng):
    for _ in range(10):
        f = random_series(rng, n=2, m=2, nterms=8)
        big = weighted_norm(f, WeightedNormParams(0.8, 1.1)).K
        small = weighted_norm(f, WeightedNormParams(0.5, 0.6)).K
        assert small <= big * (1 + 1e-14)


def test_reality_preserved(rng):
    for _ in range(10):
        f = random_series(rng, n=2, m=1, nterms=4, dyadic=True, real=True, k_budget=2, l_budget=1, p_budget=1)
        g = random_series(rng, n=2, m=1, nterms=4, dyadic=True, real=True, k_budget=2, l_budget=1, p_budget=1)
        assert f.is_real_symmetric()
        assert (f + g).is_real_symmetric()
        assert (f * g).is_real_symmetric()
        assert f.partial_x(0).is_real_symmetric()
        assert f.partial_y(0).is_real_symmetric()
        A, B, C, R = taylor_split(f)
        assert A.is_real_symmetric() and R.is_real_symmetric()
        assert all(b.is_real_symmetric() for b in B)


def test_from_terms_validates_keys():
    with pytest.raises(StructureMismatchError):
        mk([((9,), (0,), 0, 0, 1.0)])  # |k| beyond K_max
    with pytest.raises(StructureMismatchError):
        mk([((0,), (5,), 0, 0, 1.0)])  # |alpha| beyond L_max
    with pytest.raises(StructureMismatchError):
        mk([((0,), (0,), 0, 9, 1.0)])  # p beyond P_max
    with pytest.raises(EtaDegreeError):
        mk([((0,), (0,), 2, 0, 1.0)])  # eta power 2


def test_packing_fallback_huge_truncation(rng):
    # truncation too wide for 64-bit packing falls back to row-wise merging
    big = Truncation(1 << 20, 4, 4)
    f = FourierTaylorSeries.from_terms(
        3, 1, 0.5, big, [((70000, -3, 2), (1,), 0, 1, 1.5), ((0, 0, 0), (0,), 0, 0, 2.0)]
    )
    assert f._codec is None
    g = FourierTaylorSeries.from_terms(
        3, 1, 0.5, big, [((1, 0, 0), (0,), 0, 1, -0.5)]
    )
    prod = f * g
    assert prod.coefficient((70001, -3, 2), (1,), 0, 2) == pytest.approx(-0.75)
    assert (f + f.scale(-1.0)).is_zero()
