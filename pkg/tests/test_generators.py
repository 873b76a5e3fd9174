from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from mvswitch import generators as gen
from mvswitch import numerics
from mvswitch.errors import (
    DimensionMismatch,
    NegativeOffDiagonal,
    NonpositiveEpsilon,
    NotHurwitz,
    NotIrreducible,
    RowSumNonzero,
)

FAST61 = np.array([[-1, 1, 0, 0], [2, -2, 0, 0], [0, 0, -1, 1], [0, 0, 3, -3]], dtype=float)
SLOW61 = np.array([[-2, 0, 1, 1], [1, -2, 1, 0], [0, 1, -1, 0], [1, 2, 0, -3]], dtype=float)
PART61 = gen.Partition(((0, 1), (2, 3)))


def random_generator(rng, m, scale=3.0):
    Q = rng.uniform(0.05, scale, size=(m, m))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


# validate_generator

def test_validate_accepts_example_block():
    Q = gen.validate_generator([[-1, 1], [2, -2]])
    assert Q.dtype == float and Q.shape == (2, 2)


def test_validate_accepts_absorbing_single_state():
    assert gen.validate_generator([[0]]).shape == (1, 1)


def test_validate_row_sum_names_row():
    with pytest.raises(RowSumNonzero, match="row 1"):
        gen.validate_generator([[-1, 0.5], [1, -1]])


def test_validate_negative_offdiagonal():
    with pytest.raises(NegativeOffDiagonal, match=r"\(1,2\)"):
        gen.validate_generator([[1, -1], [1, -1]])


def test_validate_rejects_non_square():
    with pytest.raises(DimensionMismatch):
        gen.validate_generator(np.zeros((2, 3)))


# assemble_fast_slow

def test_assemble_entries_example61():
    Q = gen.assemble_fast_slow(FAST61, SLOW61, 0.1)
    assert Q[0, 0] == pytest.approx(-1 / 0.1 - 2)
    Q = gen.assemble_fast_slow(FAST61, SLOW61, 0.01)
    assert Q[3, 2] == pytest.approx(3 / 0.01 + 0)


def test_assemble_zero_slow_identity():
    np.testing.assert_array_equal(gen.assemble_fast_slow(FAST61, np.zeros((4, 4)), 1.0), FAST61)


def test_assemble_errors():
    with pytest.raises(NonpositiveEpsilon):
        gen.assemble_fast_slow(FAST61, SLOW61, 0.0)
    with pytest.raises(DimensionMismatch):
        gen.assemble_fast_slow(FAST61, np.zeros((3, 3)), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.floats(1e-4, 10.0), st.integers(0, 2**32 - 1))
def test_assembled_generator_is_valid(m, eps, seed):
    rng = np.random.default_rng(seed)
    Q = gen.assemble_fast_slow(random_generator(rng, m), random_generator(rng, m), eps)
    off = Q - np.diag(np.diag(Q))
    assert np.all(off >= 0)
    assert np.abs(Q.sum(axis=1)).max() <= 1e-12 * m * max(1.0, np.abs(Q).max())


# stationary_distribution

@pytest.mark.parametrize(
    "block, expected",
    [([[-1, 1], [2, -2]], (2 / 3, 1 / 3)), ([[-1, 1], [3, -3]], (3 / 4, 1 / 4)), ([[0]], (1.0,))],
)
def test_stationary_known_values(block, expected):
    np.testing.assert_allclose(gen.stationary_distribution(block), expected, atol=1e-10, rtol=0)


def test_stationary_not_irreducible():
    with pytest.raises(NotIrreducible):
        gen.stationary_distribution([[-1, 1], [0, 0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_stationary_matches_matrix_exponential(m, seed):
    Q = random_generator(np.random.default_rng(seed), m)
    mu = gen.stationary_distribution(Q)
    assert np.all(mu > 0) and mu.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.abs(mu @ Q).max() <= 1e-10 * max(1.0, np.abs(Q).max())
    if m > 1:
        t = 50 / np.abs(np.diag(Q)).min()
        rows = scipy.linalg.expm(t * Q)
        np.testing.assert_allclose(rows, np.tile(mu, (m, 1)), atol=1e-6)


def test_irreducibility_structural():
    assert gen.is_irreducible(FAST61[:2, :2])
    assert not gen.is_irreducible(FAST61)


# aggregation

def _fraction_aggregate():
    # independent exact evaluation of diag(mu) Qhat diag(1)
    mu = [[Fraction(2, 3), Fraction(1, 3)], [Fraction(3, 4), Fraction(1, 4)]]
    clusters = [(0, 1), (2, 3)]
    out = [[Fraction(0)] * 2 for _ in range(2)]
    for k, ck in enumerate(clusters):
        for kk, ckk in enumerate(clusters):
            out[k][kk] = sum(mu[k][a] * Fraction(int(SLOW61[i, j])) for a, i in enumerate(ck) for j in ckk)
    return np.array([[float(v) for v in row] for row in out])


def test_aggregate_example61_exact():
    mu = gen.cluster_stationary(FAST61, PART61)
    Qbar = gen.aggregate_generator(mu, SLOW61, PART61)
    expected = _fraction_aggregate()
    np.testing.assert_allclose(expected, [[-5 / 3, 5 / 3], [1.5, -1.5]], atol=1e-15)
    np.testing.assert_allclose(Qbar, expected, atol=1e-12)


def test_aggregate_trivial_cases():
    mu = gen.cluster_stationary(FAST61, PART61)
    np.testing.assert_array_equal(gen.aggregate_generator(mu, np.zeros((4, 4)), PART61), np.zeros((2, 2)))
    one = gen.Partition(((0, 1, 2, 3),))
    mu1 = [gen.stationary_distribution(random_generator(np.random.default_rng(0), 4))]
    np.testing.assert_array_equal(gen.aggregate_generator(mu1, SLOW61, one), [[0.0]])


def test_aggregate_rejects_transient_partition():
    p = gen.Partition(((0,), (1,)), transient=(2,))
    with pytest.raises(DimensionMismatch):
        gen.aggregate_generator([np.ones(1), np.ones(1)], np.zeros((3, 3)), p)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
def test_aggregate_equals_triple_product(sizes, seed):
    rng = np.random.default_rng(seed)
    clusters, start = [], 0
    for s in sizes:
        clusters.append(tuple(range(start, start + s)))
        start += s
    part = gen.Partition(tuple(clusters))
    mu = [rng.dirichlet(np.ones(s)) for s in sizes]
    slow = random_generator(rng, start)
    brute = np.zeros((len(sizes), len(sizes)))
    for k, ck in enumerate(clusters):
        for kk, ckk in enumerate(clusters):
            brute[k, kk] = sum(mu[k][a] * slow[i, j] for a, i in enumerate(ck) for j in ckk)
    np.testing.assert_allclose(gen.aggregate_generator(mu, slow, part), brute, atol=1e-12, rtol=0)


# transient machinery

def test_absorption_weights_one_by_one():
    a = gen.transient_absorption_weights([[-2.0]], [[[1.0]], [[1.0]]])
    np.testing.assert_array_equal(a, [[0.5], [0.5]])


def test_absorption_not_hurwitz():
    with pytest.raises(NotHurwitz):
        gen.transient_absorption_weights([[0.0]], [[[0.0]]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_absorption_columns_sum_to_one(ms, l, seed):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, 3, size=l)
    width = ms + int(sizes.sum())
    rows = rng.uniform(0.1, 2.0, size=(ms, width))
    Q_star = rows[:, :ms].copy()
    np.fill_diagonal(Q_star, 0.0)
    np.fill_diagonal(Q_star, -(Q_star.sum(axis=1) + rows[:, ms:].sum(axis=1)))
    blocks, start = [], ms
    for s in sizes:
        blocks.append(rows[:, start : start + s])
        start += s
    a = gen.transient_absorption_weights(Q_star, blocks)
    assert a.shape == (l, ms)
    assert np.all((a >= 0) & (a <= 1))
    np.testing.assert_allclose(a.sum(axis=0), 1.0, atol=1e-10)


def test_absorption_example62_against_hitting_probabilities(model62):
    # hitting probabilities of each cluster from each transient state, by
    # solving the embedded jump chain independently
    fast = model62.fast
    tr = list(model62.partition.transient)
    P = fast / -np.diag(fast)[:, None]
    np.fill_diagonal(P, 0.0)
    for k, c in enumerate(model62.partition.clusters):
        A = np.eye(len(tr)) - P[np.ix_(tr, tr)]
        b = P[np.ix_(tr, list(c))].sum(axis=1)
        np.testing.assert_allclose(model62.weights[k], np.linalg.solve(A, b), atol=1e-12)


def test_transient_aggregate_all_mass_on_first_cluster():
    part = gen.Partition(((0, 1), (2,)), transient=(3,))
    rng = np.random.default_rng(3)
    slow = random_generator(rng, 4)
    slow[:3, 3] = 0.0
    np.fill_diagonal(slow, 0.0)
    np.fill_diagonal(slow, -slow.sum(axis=1))
    mu = [np.array([0.4, 0.6]), np.array([1.0])]
    weights = np.array([[1.0], [0.0]])
    got = gen.aggregate_generator_transient(mu, slow, part, weights)
    rec = gen.Partition(((0, 1), (2,)))
    sub = slow[:3, :3].copy()
    np.fill_diagonal(sub, 0.0)
    np.fill_diagonal(sub, -sub.sum(axis=1))
    np.testing.assert_allclose(got, gen.aggregate_generator(mu, sub, rec), atol=1e-12)


def test_transient_aggregate_three_state():
    part = gen.Partition(((0,), (1,)), transient=(2,))
    slow = np.array([[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]])
    got = gen.aggregate_generator_transient([np.ones(1), np.ones(1)], slow, part, [[0.5], [0.5]])
    np.testing.assert_allclose(got, [[-1, 1], [1, -1]], atol=1e-15)


def test_transient_aggregate_rejects_no_transient():
    with pytest.raises(DimensionMismatch):
        gen.aggregate_generator_transient([np.ones(1)], np.zeros((1, 1)), gen.Partition(((0,),)), None)


# coefficients

def test_aggregate_coefficients_example61(model61):
    cc = model61.cluster_coeffs
    np.testing.assert_allclose(cc.r, [0.3, 0.35], atol=1e-14)
    np.testing.assert_allclose(cc.B[:, 0], [4 / 3, -5 / 4], atol=1e-14)
    np.testing.assert_allclose(cc.sigma2[:, 0, 0], [1.0, 1.0], atol=1e-14)


def test_aggregate_coefficients_bounds_and_identity(model61):
    cc = model61.cluster_coeffs
    for k, c in enumerate(model61.partition.clusters):
        r = model61.coeffs.r[list(c)]
        B = model61.coeffs.B[list(c), 0]
        assert r.min() <= cc.r[k] <= r.max()
        assert B.min() <= cc.B[k, 0] <= B.max()
    from mvswitch.model import RegimeCoefficients

    coeffs = RegimeCoefficients(r=[0.1, 0.2, 0.3], B=[1.0, 2.0, 3.0], sigma=[1.0, 2.0, 0.5])
    single = gen.Partition(((0,), (1,), (2,)))
    out = gen.aggregate_coefficients(coeffs, [np.ones(1)] * 3, single)
    np.testing.assert_array_equal(out.r, coeffs.r)
    np.testing.assert_array_equal(out.B, coeffs.B)
    np.testing.assert_array_equal(out.sigma2, coeffs.a)


def test_tolerance_knob_is_global():
    near_zero = [[-1.0, 1.0 + 1e-9], [1.0, -1.0]]
    with pytest.raises(RowSumNonzero):
        gen.validate_generator(near_zero)
    with numerics.tolerances(row_sum=1e-8):
        gen.validate_generator(near_zero)
    assert numerics.TOL.row_sum == 1e-12
