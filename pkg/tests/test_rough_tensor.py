import itertools

import numpy as np
import pytest

from errors import DomainError
from rough_tensor import (ALGEBRA_TOL, PiecewiseLinearPath, _concat_arrays, _segment_arrays, chen_concat,
                          dyadic_signature_table, fine_level_closed_form, group_inverse, identity,
                          lift_piecewise_linear, lift_sample, refinement_delta_level2, refinement_delta_level3,
                          refinement_delta_level3_local, segment_signature, table_records)
from tfbm_sampler import DyadicGrid, restrict, sample_tfbm

ATOL = 1e-10


def _close(a, b, atol=ATOL):
    return all(np.allclose(x, y, rtol=0.0, atol=atol) for x, y in zip(a.levels(), b.levels()))


def test_segment_signature_levels():
    """A straight segment has levels δ, δ⊗δ/2 and δ⊗δ⊗δ/6."""
    delta = np.array([0.5, -1.0])
    sig = segment_signature(delta)
    assert np.array_equal(sig.level1, delta)
    assert np.allclose(sig.level2, np.outer(delta, delta) / 2.0)
    assert np.allclose(sig.level3, np.einsum("i,j,k->ijk", delta, delta, delta) / 6.0)


def test_chen_concat_matches_direct_lift():
    """Concatenating two segments gives the lift of the two-piece path."""
    path = PiecewiseLinearPath([0.0, 0.5, 1.0], [[0.0, 0.0], [1.0, 0.5], [0.2, 2.0]])
    left = segment_signature(path.values[1] - path.values[0], 0.0, 0.5)
    right = segment_signature(path.values[2] - path.values[1], 0.5, 1.0)
    joined = chen_concat(left, right)
    assert (joined.s, joined.t) == (0.0, 1.0)
    assert _close(joined, lift_piecewise_linear(path, 0.0, 1.0))


def test_chen_concat_is_associative(rng):
    sigs = [segment_signature(rng.normal(size=3)) for _ in range(3)]
    a = chen_concat(chen_concat(sigs[0], sigs[1]), sigs[2])
    b = chen_concat(sigs[0], chen_concat(sigs[1], sigs[2]))
    assert _close(a, b, 1e-13)


def test_chen_concat_rejects_mismatches():
    with pytest.raises(DomainError):
        chen_concat(identity(2), identity(3))
    with pytest.raises(DomainError):
        chen_concat(segment_signature([1.0], 0.0, 0.5), segment_signature([1.0], 0.6, 1.0))


def test_group_inverse(rng):
    """S ⊗ S^{-1} and S^{-1} ⊗ S are the identity, and the inverse swaps endpoints."""
    path = PiecewiseLinearPath(np.linspace(0.0, 1.0, 6), rng.normal(size=(6, 2)))
    sig = lift_piecewise_linear(path, 0.0, 1.0)
    inv = group_inverse(sig)
    assert (inv.s, inv.t) == (1.0, 0.0)
    unit = identity(2)
    assert _close(chen_concat(sig, inv), unit, 1e-12)
    assert _close(chen_concat(inv, sig), unit, 1e-12)


def test_inverse_is_the_reversed_path(rng):
    values = rng.normal(size=(5, 2))
    times = np.linspace(0.0, 1.0, 5)
    forward = lift_piecewise_linear(PiecewiseLinearPath(times, values), 0.0, 1.0)
    backward = lift_piecewise_linear(PiecewiseLinearPath(times, values[::-1]), 0.0, 1.0)
    assert _close(group_inverse(forward), backward, 1e-12)


def test_shuffle_identities(table_l8_d2):
    """Geometric signatures satisfy the level-2 and level-3 shuffle relations."""
    sig = table_l8_d2.query(3, 200)
    x = sig.level1
    assert np.allclose(sig.level2 + sig.level2.T, np.outer(x, x), atol=ATOL)
    sym = sum(np.transpose(sig.level3, perm) for perm in itertools.permutations(range(3)))
    assert np.allclose(sym, np.einsum("i,j,k->ijk", x, x, x), atol=ATOL)


def test_table_query_matches_direct_lift(sample_l8_d3):
    """Prefix-table queries agree with lifting the path segment by segment."""
    table = lift_sample(sample_l8_d3, 8)
    path = PiecewiseLinearPath.from_sample(sample_l8_d3)
    for i, j in [(0, 256), (17, 18), (40, 131), (128, 256)]:
        direct = lift_piecewise_linear(path, path.times[i], path.times[j])
        assert _close(table.query(i, j), direct)


def test_table_entries_satisfy_chen(table_l8_d2):
    """X_{n-1,k} = X_{n,2k-1} ⊗ X_{n,2k} across the whole table."""
    for n in range(1, 9):
        for k in (1, 2 ** (n - 1)):
            parent = table_l8_d2.entry(n - 1, k)
            assert _close(chen_concat(table_l8_d2.entry(n, 2 * k - 1), table_l8_d2.entry(n, 2 * k)), parent)


def _relative_residual(residual, reference):
    return np.max(np.abs(residual)) / (1.0 + np.max(np.abs(reference)))


@pytest.fixture(scope="module")
def depth8_samples():
    return [sample_tfbm(DyadicGrid(8), 0.3, 1.0, 3, seed=seed) for seed in range(20)]


def test_geometric_identities_on_every_dyadic_interval(depth8_samples):
    """X² + (X²)ᵀ = x⊗x and the level-3 shuffle hold for every entry of every table."""
    perms = list(itertools.permutations(range(3)))
    for sample in depth8_samples:
        table = lift_sample(sample, 8)
        for n in range(9):
            x1, x2, x3 = table.level_arrays(n)
            square = np.einsum("ki,kj->kij", x1, x1)
            assert _relative_residual(x2 + x2.transpose(0, 2, 1) - square, x2) <= ALGEBRA_TOL
            sym = sum(np.transpose(x3, (0,) + tuple(a + 1 for a in perm)) for perm in perms)
            cube = np.einsum("ki,kj,kl->kijl", x1, x1, x1)
            assert _relative_residual(sym - cube, x3) <= ALGEBRA_TOL


def test_chen_on_every_dyadic_interval(depth8_samples):
    """Folding the segment signatures pairwise reproduces the table at every level."""
    for sample in depth8_samples:
        table = lift_sample(sample, 8)
        levels = _segment_arrays(np.diff(sample.values, axis=0))
        for n in range(8, -1, -1):
            for built, stored in zip(levels, table.level_arrays(n)):
                assert _relative_residual(built - stored, stored) <= ALGEBRA_TOL
            levels = _concat_arrays(*(a[0::2] for a in levels), *(a[1::2] for a in levels))


def test_refinement_deltas_on_random_triples(sample_l8_d2):
    """The closed forms match the lifted-table differences on random (m, n, k)."""
    rng = np.random.default_rng(8)
    for _ in range(100):
        m = int(rng.integers(1, 8))
        n = int(rng.integers(0, m + 1))
        k = int(rng.integers(1, 2 ** n + 1))
        fine = lift_sample(restrict(sample_l8_d2, m + 1), n).entry(n, k)
        coarse = lift_sample(restrict(sample_l8_d2, m), n).entry(n, k)
        assert np.allclose(fine.level1, coarse.level1, rtol=0.0, atol=ALGEBRA_TOL)
        delta2 = refinement_delta_level2(sample_l8_d2, m, n, k)
        delta3 = refinement_delta_level3(sample_l8_d2, m, n, k)
        assert np.allclose(delta2, fine.level2 - coarse.level2, rtol=0.0, atol=ALGEBRA_TOL)
        assert np.allclose(delta3, fine.level3 - coarse.level3, rtol=0.0, atol=ALGEBRA_TOL)


def test_level_arrays_shapes(table_l8_d2):
    x1, x2, x3 = table_l8_d2.level_arrays(4)
    assert x1.shape == (16, 2) and x2.shape == (16, 2, 2) and x3.shape == (16, 2, 2, 2)
    assert np.allclose(x1.sum(axis=0), table_l8_d2.entry(0, 1).level1, atol=ATOL)


def test_table_index_checks(table_l8_d2):
    assert table_l8_d2.index_of(0.5) == 128
    with pytest.raises(DomainError):
        table_l8_d2.index_of(0.5 + 1e-4)
    with pytest.raises(DomainError):
        table_l8_d2.query(10, 5)
    with pytest.raises(DomainError):
        table_l8_d2.entry(3, 9)
    with pytest.raises(DomainError):
        table_l8_d2.stride(9)


def test_table_deeper_than_path(sample_l8_d2):
    """Below the path level every dyadic interval is a straight piece."""
    coarse = restrict(sample_l8_d2, 4)
    table = lift_sample(coarse, 6)
    assert (table.depth, table.path_level) == (6, 4)
    x1, x2, x3 = table.level_arrays(6)
    assert np.allclose(x2, np.einsum("ki,kj->kij", x1, x1) / 2.0, atol=1e-12)
    assert np.allclose(x3, np.einsum("ki,kj,kl->kijl", x1, x1, x1) / 6.0, atol=1e-12)


def test_table_construction_checks():
    uneven = PiecewiseLinearPath([0.0, 0.3, 1.0], [[0.0], [1.0], [0.0]])
    with pytest.raises(DomainError):
        dyadic_signature_table(uneven, 1)
    even = PiecewiseLinearPath([0.0, 0.5, 1.0], [[0.0], [1.0], [0.0]])
    with pytest.raises(DomainError):
        dyadic_signature_table(even, 13)
    with pytest.raises(DomainError):
        dyadic_signature_table(even, -1)


def test_lift_rejects_outside_interval():
    path = PiecewiseLinearPath([0.0, 1.0], [[0.0], [1.0]])
    with pytest.raises(DomainError):
        lift_piecewise_linear(path, -0.5, 0.5)


def test_signature_distance():
    a = segment_signature([1.0, 0.0])
    b = segment_signature([1.0, 0.5])
    assert a.distance(a) == 0.0
    assert a.distance(b) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        a.distance(segment_signature([1.0]))


@pytest.mark.parametrize("m, n, k", [(4, 2, 3), (5, 5, 7), (6, 1, 2), (3, 0, 1)])
def test_refinement_deltas_match_table_differences(sample_l8_d2, m, n, k):
    """Closed-form refinement deltas equal the difference of the two lifted tables."""
    fine = lift_sample(restrict(sample_l8_d2, m + 1), n).entry(n, k)
    coarse = lift_sample(restrict(sample_l8_d2, m), n).entry(n, k)
    assert np.allclose(fine.level1, coarse.level1, atol=ATOL)
    assert np.allclose(refinement_delta_level2(sample_l8_d2, m, n, k), fine.level2 - coarse.level2, atol=ATOL)
    assert np.allclose(refinement_delta_level3(sample_l8_d2, m, n, k), fine.level3 - coarse.level3, atol=ATOL)


def test_local_part_is_full_delta_on_one_cell(sample_l8_d3):
    """With a single coarse cell there are no Chen cross terms."""
    full = refinement_delta_level3(sample_l8_d3, 5, 5, 11)
    local = refinement_delta_level3_local(sample_l8_d3, 5, 5, 11)
    assert np.allclose(full, local, atol=1e-15)


def test_level2_delta_is_antisymmetric(sample_l8_d3):
    delta = refinement_delta_level2(sample_l8_d3, 6, 2, 4)
    assert np.allclose(delta, -delta.T)


def test_refinement_delta_checks(sample_l8_d2):
    with pytest.raises(DomainError):
        refinement_delta_level2(sample_l8_d2, 3, 4, 1)
    with pytest.raises(DomainError):
        refinement_delta_level2(sample_l8_d2, 8, 2, 1)
    with pytest.raises(DomainError):
        refinement_delta_level3(sample_l8_d2, 4, 2, 5)


@pytest.mark.parametrize("m, n, k", [(3, 5, 1), (3, 5, 19), (5, 8, 200)])
def test_fine_level_closed_form(sample_l8_d2, m, n, k):
    """Inside a coarse cell the lift is a scaled copy of the cell's increment."""
    table = lift_sample(restrict(sample_l8_d2, m), n)
    closed = fine_level_closed_form(sample_l8_d2, m, n, k)
    assert _close(closed, table.entry(n, k))
    assert closed.s == pytest.approx((k - 1) / 2 ** n)
    with pytest.raises(DomainError):
        fine_level_closed_form(sample_l8_d2, m, m, 1)


def test_table_records_layout(table_l6_d2):
    """One row per (n, k, level, flat index), for n = 0..n_max."""
    records = table_records(table_l6_d2, 3)
    d = table_l6_d2.dim
    expected_rows = sum(2 ** n for n in range(4)) * (d + d ** 2 + d ** 3)
    assert all(len(col) == expected_rows for col in records.values())
    assert set(np.unique(records["level"])) == {1, 2, 3}
    first = (records["n"] == 0) & (records["level"] == 1)
    assert np.allclose(records["value"][first], table_l6_d2.entry(0, 1).level1)
