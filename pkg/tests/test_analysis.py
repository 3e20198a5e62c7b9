import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from molcomm import analysis as A
from molcomm.analysis import Lane, LinkOperatingPoint, TransitionMatrix
from molcomm.modulation import SchemeConfig
from molcomm.physics import ChannelGeometry
from molcomm.stats import ArrivalMode, q_function

unit = st.floats(0.0, 1.0)


def paper_rows(q1, q2):
    """4-ary OOMoSK rows written out by hand from the per-symbol error forms."""
    a, b = q1, q2
    return np.array([
        [1.0, 0.0, 0.0, 0.0],
        [1 - b, b, 0.0, 0.0],
        [1 - a, 0.0, a, 0.0],
        [(1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b],
    ])


def h2(x):
    return -(x * math.log2(x) + (1 - x) * math.log2(1 - x))


def brute_capacity(w):
    """Independent capacity oracle: maximize I over softmax-parametrized priors."""
    w = np.asarray(w)
    m = w.shape[0]

    def neg(theta):
        q = np.exp(theta - theta.max())
        q /= q.sum()
        return -A.mutual_information(w, q)

    best = min((minimize(neg, x0, method="Nelder-Mead",
                         options=dict(xatol=1e-10, fatol=1e-14, maxiter=20000))
                for x0 in (np.zeros(m), np.linspace(-1, 1, m), np.linspace(1, -1, m))),
               key=lambda r: r.fun)
    return -best.fun


def test_bit_success_examples():
    point = LinkOperatingPoint((Lane(250, 0.2, 20), Lane(250, 0.2, 0), Lane(250, 0.2, 50)))
    got = A.bit_success_probability(point, 0)
    assert got == pytest.approx(q_function((20 - 50) / math.sqrt(40)), rel=1e-15)
    assert got == pytest.approx(0.99999895, abs=1e-8)
    exact = A.bit_success_probability(point, 0, ArrivalMode.EXACT)
    assert exact == pytest.approx(1.0, abs=1e-6)
    assert A.bit_success_probability(point, 1) == 1.0
    assert A.bit_success_probability(point, 2) == 0.5


@settings(max_examples=300, deadline=None)
@given(q1=unit, q2=unit)
def test_oomosk_matrix_matches_hand_rows(q1, q2):
    tm = A.oomosk_matrix([q1, q2])
    np.testing.assert_allclose(np.asarray(tm), paper_rows(q1, q2), atol=1e-15)
    np.testing.assert_allclose(np.asarray(tm).sum(axis=1), 1.0, atol=1e-12)


def test_oomosk_rows_from_point():
    cfg = SchemeConfig.oomosk(2, 125, 1.0, 20)
    point = LinkOperatingPoint((Lane(125, 0.2, 20), Lane(125, 0.1, 15)))
    tm = np.asarray(A.transition_matrix_oomosk(point, cfg))
    s1 = q_function(point.lanes[0].u)
    s2 = q_function(point.lanes[1].u)
    assert tm[0].tolist() == [1.0, 0.0, 0.0, 0.0]
    assert tm[3, 3] == pytest.approx(s1 * s2, rel=1e-15)
    assert 1 - tm[3, 3] == pytest.approx(1 - s1 * s2, abs=1e-15)
    assert tm[1, 1] == pytest.approx(s2) and tm[1, 0] == pytest.approx(1 - s2)
    assert tm[1, 2] == tm[1, 3] == 0.0


def test_ser_examples():
    assert A.symbol_error_rate(np.eye(4)) == 0.0
    assert A.symbol_error_rate(A.oomosk_matrix([0.0, 0.0])) == pytest.approx(0.75)
    assert A.oomosk4_ser_symmetric(0.0) == pytest.approx(0.75)
    assert A.symbol_error_rate(A.oomosk_matrix([0.9, 0.8])) == pytest.approx(0.145, abs=1e-15)
    assert A.oomosk4_ser(0.9, 0.8) == pytest.approx(0.145, abs=1e-15)


@settings(max_examples=1000, deadline=None)
@given(q1=unit, q2=unit)
def test_ser_matrix_equals_closed_form(q1, q2):
    assert A.symbol_error_rate(A.oomosk_matrix([q1, q2])) == pytest.approx(
        A.oomosk4_ser(q1, q2), abs=1e-12)


@settings(max_examples=500, deadline=None)
@given(u=st.floats(-10, 10))
def test_symmetric_form_equals_general(u):
    q = q_function(u)
    assert A.oomosk4_ser_symmetric(q) == pytest.approx(A.oomosk4_ser(q, q), abs=1e-12)


def test_ser_dimension_mismatch():
    with pytest.raises(ValueError):
        A.symbol_error_rate(np.eye(4), [0.5, 0.5])


def test_mutual_information_examples():
    assert A.mutual_information(np.eye(4)) == pytest.approx(2.0, abs=1e-15)
    same = np.tile([0.1, 0.2, 0.3, 0.4], (4, 1))
    assert A.mutual_information(same) == pytest.approx(0.0, abs=1e-15)


def _entropy_difference(w, q):
    py = q @ w
    hy = A.entropy_bits(py)
    hyx = sum(qi * A.entropy_bits(row) for qi, row in zip(q, w))
    return hy - hyx


def test_mutual_information_entropy_oracle_oomosk():
    w = np.asarray(A.oomosk_matrix([0.9, 0.9]))
    q = A.uniform_priors(4)
    assert A.mutual_information(w, q) == pytest.approx(_entropy_difference(w, q), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_mutual_information_entropy_oracle_random(seed, m):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.full(m, 0.5), size=m)
    q = rng.dirichlet(np.ones(m))
    mi = A.mutual_information(w, q)
    assert mi == pytest.approx(_entropy_difference(w, q), abs=1e-12)
    assert -1e-12 <= mi <= math.log2(m) + 1e-12


def test_capacity_identity_and_bsc():
    res = A.capacity(np.eye(4))
    assert res.capacity_bits == 2.0
    np.testing.assert_allclose(res.optimal_priors, 0.25)
    e = 0.11
    res = A.capacity([[1 - e, e], [e, 1 - e]])
    assert res.capacity_bits == pytest.approx(1 - h2(e), abs=1e-6)
    assert 1 - h2(e) == pytest.approx(0.500084, abs=1e-6)


def test_capacity_merged_rows():
    w = np.array([
        [0.9, 0.05, 0.05, 0.0],
        [0.0, 0.8, 0.1, 0.1],
        [0.0, 0.8, 0.1, 0.1],
        [0.05, 0.0, 0.05, 0.9],
    ])
    res = A.capacity(w)
    assert res.converged
    assert res.capacity_bits <= math.log2(3) + 1e-9
    merged = np.delete(w, 2, axis=0)
    # duplicate inputs share the mass one merged input would get
    ref = A.capacity(merged)
    assert res.capacity_bits == pytest.approx(ref.capacity_bits, abs=1e-9)
    assert res.optimal_priors[1] + res.optimal_priors[2] == pytest.approx(
        ref.optimal_priors[1], abs=1e-6)


def test_capacity_vs_independent_maximizer():
    rng = np.random.default_rng(11)
    for m in (2, 3, 4):
        for _ in range(3):
            w = rng.dirichlet(np.full(m, 0.7), size=m)
            res = A.capacity(w)
            assert res.converged
            assert res.capacity_bits == pytest.approx(brute_capacity(w), abs=1e-7)
            assert res.capacity_bits >= res.uniform_prior_mi - 1e-9


def test_capacity_of_oomosk_z_channel_near_zero():
    # nearly useless lane: classical steps barely move the prior
    res = A.capacity(A.oomosk_matrix([1e-5, 1e-5]))
    assert res.converged and res.gap <= 1e-9 and res.iterations <= 10_000
    assert res.capacity_bits == pytest.approx(brute_capacity(np.asarray(A.oomosk_matrix([1e-5, 1e-5]))),
                                              abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_capacity_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    m = 4
    w = rng.dirichlet(np.full(m, 0.6), size=m)
    perm = rng.permutation(m)
    a, b = A.capacity(w), A.capacity(w[perm])
    assert a.capacity_bits == pytest.approx(b.capacity_bits, abs=1e-9)
    np.testing.assert_allclose(b.optimal_priors, a.optimal_priors[perm], atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_capacity_data_processing(seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.full(4, 0.6), size=4)
    assert A.capacity(w @ w).capacity_bits <= A.capacity(w).capacity_bits + 1e-9


def test_mosk_matrices():
    cfg = SchemeConfig.mosk(2, 125, 1.0, 20)
    perfect = LinkOperatingPoint(tuple(Lane(250, 1.0, 20) for _ in range(4)))
    np.testing.assert_array_equal(np.asarray(A.transition_matrix_mosk(perfect, cfg)), np.eye(4))
    point = LinkOperatingPoint(tuple(Lane(250, 0.05, 20) for _ in range(4)))
    tm = np.asarray(A.transition_matrix_mosk(point, cfg))
    s = q_function(point.lanes[0].u)
    for i in range(1, 4):
        assert tm[i, i] == pytest.approx(s) and tm[i, 0] == pytest.approx(1 - s)
    assert tm[0, 0] == 1.0


def test_csk_matrix():
    cfg = SchemeConfig.csk(2, 125, 1.0, thresholds=(20, 50, 83))
    point = LinkOperatingPoint((Lane(500, 0.2, 20),))
    tm = np.asarray(A.transition_matrix_csk(point, cfg, ArrivalMode.EXACT))
    assert tm[0].tolist() == [1.0, 0.0, 0.0, 0.0]
    # rational oracle for P(N >= 83), N ~ Binomial(500, 0.2)
    p = Fraction(1, 5)
    tail = float(sum(math.comb(500, k) * p**k * (1 - p) ** (500 - k) for k in range(83, 501)))
    assert tm[3, 3] == pytest.approx(tail, rel=1e-10)
    assert tm[3, 3] > 0.95
    np.testing.assert_allclose(tm.sum(axis=1), 1.0, atol=1e-9)


def test_transition_matrix_validation():
    with pytest.raises(ValueError):
        TransitionMatrix([[0.5, 0.4], [0.0, 1.0]])
    with pytest.raises(ValueError):
        TransitionMatrix([[1.0, 0.0, 0.0]])


@pytest.mark.parametrize("scheme", ["oomosk", "mosk", "csk"])
@pytest.mark.parametrize("mode", ["gaussian", "exact"])
@pytest.mark.parametrize("D", [1e-6, 4e-6, 1e-5, 1e-4, 1.0, 13.0])
def test_rows_stochastic_across_sweep(scheme, mode, D):
    geom = ChannelGeometry(20e-6, 20e-6, 2e-6)
    cfg = getattr(SchemeConfig, scheme)(2, 125, D)
    if scheme == "csk":
        from molcomm.physics import slot_hit_probability
        cfg = cfg.with_csk_thresholds(slot_hit_probability(geom, D))
    _, tm, ser, mi = A.analyze(cfg, geom, mode)
    np.testing.assert_allclose(np.asarray(tm).sum(axis=1), 1.0, atol=1e-9)
    assert 0.0 <= ser <= 1.0
    assert 0.0 <= mi <= 2.0 + 1e-12


def test_background_adds_false_alarms():
    cfg = SchemeConfig.oomosk(2, 125, 1.0, 3)
    point = LinkOperatingPoint((Lane(125, 0.2, 3, 1.0), Lane(125, 0.2, 3, 1.0)))
    tm = np.asarray(A.transition_matrix_oomosk(point, cfg, ArrivalMode.EXACT))
    fa = 1 - math.exp(-1) * (1 + 1 + 0.5)  # P(Poisson(1) >= 3)
    assert tm[0, 0] == pytest.approx((1 - fa) ** 2, rel=1e-12)
    np.testing.assert_allclose(tm.sum(axis=1), 1.0, atol=1e-12)
