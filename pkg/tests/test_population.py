import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import morans_i_loops
from spatialsurvey.population import (GridSpec, PopulationGrid, build_weight_matrix, generate_population,
                                      morans_i, sar_field)


def _neighbour_dict(w):
    m = w.matrix.tocoo()
    out = {i: {} for i in range(w.n_cells)}
    for i, j, v in zip(m.row, m.col, m.data):
        out[int(i)][int(j)] = float(v)
    return out


def test_grid_spec_centroids_and_bounds():
    spec = GridSpec(3, 4, 2.0)
    c = spec.centroids()
    assert c.shape == (12, 2)
    assert np.allclose(c[spec.flat(1, 2)], [5.0, 3.0])
    assert spec.unflat(spec.flat(2, 3)) == (2, 3)
    with pytest.raises(ValueError):
        GridSpec(1, 5)
    with pytest.raises(ValueError):
        GridSpec(3, 3, 0.0)


def test_rook_2x2_has_two_neighbours_each():
    w = build_weight_matrix(GridSpec(2, 2), "rook", row_standardized=False)
    assert list(w.neighbour_counts()) == [2, 2, 2, 2]


def test_queen_3x3_centre_has_eight():
    w = build_weight_matrix(GridSpec(3, 3), "queen", row_standardized=False)
    assert w.neighbour_counts()[4] == 8
    assert w.matrix.diagonal().sum() == 0


def test_row_standardized_rows_sum_to_one():
    w = build_weight_matrix(GridSpec(3, 3), "rook", row_standardized=True)
    assert np.allclose(np.asarray(w.matrix.sum(axis=1)).ravel(), 1.0)


def test_unknown_scheme():
    with pytest.raises(ValueError, match="rook"):
        build_weight_matrix(GridSpec(3, 3), "bishop")


def test_checkerboard_moran_is_minus_one():
    w = build_weight_matrix(GridSpec(2, 2), "rook", row_standardized=False)
    values = [1, 0, 0, 1]
    assert morans_i(values, w) == pytest.approx(-1.0)
    assert morans_i_loops(values, _neighbour_dict(w)) == pytest.approx(-1.0)


def test_constant_field_rejected():
    w = build_weight_matrix(GridSpec(3, 3), "queen")
    with pytest.raises(ValueError, match="constant field"):
        morans_i(np.full(9, 4.0), w)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.sampled_from(["rook", "queen"]), st.booleans(),
       st.integers(0, 2**32 - 1))
def test_morans_i_matches_loop_oracle(rows, cols, scheme, std, seed):
    spec = GridSpec(rows, cols)
    w = build_weight_matrix(spec, scheme, std)
    x = np.random.default_rng(seed).normal(size=spec.n_cells)
    assert morans_i(x, w) == pytest.approx(morans_i_loops(x, _neighbour_dict(w)), rel=1e-9, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_morans_i_invariant_under_transpose_relabelling(seed):
    # transposing a square lattice maps rook/queen neighbourhoods onto themselves
    spec = GridSpec(5, 5)
    w = build_weight_matrix(spec, "queen", True)
    x = np.random.default_rng(seed).normal(size=25)
    xt = x.reshape(5, 5).T.ravel()
    assert morans_i(x, w) == pytest.approx(morans_i(xt, w), rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.floats(0.0, 0.95), st.integers(1, 5000), st.integers(0, 2**31))
def test_generate_population_conserves_total(rows, cols, rho, total, seed):
    g = generate_population(GridSpec(rows, cols), rho, total, seed)
    assert g.total == total
    assert (g.counts >= 0).all()


def test_tiny_population():
    g = generate_population(GridSpec(2, 2), 0.0, 4, 7)
    assert g.total == 4 and (g.counts >= 0).all()


def test_population_preconditions():
    with pytest.raises(ValueError):
        generate_population(GridSpec(), 1.0, 100, 0)
    with pytest.raises(ValueError):
        generate_population(GridSpec(), 0.3, 0, 0)


def test_population_is_deterministic():
    a = generate_population(GridSpec(), 0.5, 20000, 99)
    b = generate_population(GridSpec(), 0.5, 20000, 99)
    assert np.array_equal(a.counts, b.counts)


def test_sar_field_solves_system():
    spec = GridSpec(6, 7)
    w = build_weight_matrix(spec, "rook", True).matrix
    z = sar_field(spec, 0.6, np.random.default_rng(3))
    eps = np.random.default_rng(3).standard_normal(spec.n_cells)
    assert np.allclose(z - 0.6 * (w @ z), eps)


def test_independent_field_has_moran_near_zero():
    w = build_weight_matrix(GridSpec(), "queen", True)
    vals = [morans_i(generate_population(GridSpec(), 0.0, 20000, s).counts, w) for s in range(20)]
    assert all(abs(v) <= 0.08 for v in vals)
    assert abs(np.mean(vals)) < 0.03


@pytest.mark.slow
def test_moran_increases_with_rho():
    w = build_weight_matrix(GridSpec(), "queen", True)
    means = [np.mean([morans_i(generate_population(GridSpec(), rho, 20000, s).counts, w) for s in range(100)])
             for rho in (0.3, 0.5, 0.7)]
    assert means[0] < means[1] < means[2]


def test_csv_round_trip(tmp_path):
    g = generate_population(GridSpec(4, 5), 0.3, 500, 1)
    g.to_csv(tmp_path / "g.csv")
    h = PopulationGrid.from_csv(tmp_path / "g.csv", 1.0, 0.3)
    assert h.spec == g.spec and np.array_equal(h.counts, g.counts)
    assert (tmp_path / "g.csv").read_bytes().count(b"\r") == 0


def test_null_band_from_permutation_distribution():
    # the +-0.08 band for an uncorrelated field lies beyond the 99% point of the permutation null
    w = build_weight_matrix(GridSpec(), "queen", True)
    counts = generate_population(GridSpec(), 0.0, 20000, 0).counts
    rng = np.random.default_rng(1)
    null = np.array([morans_i(rng.permutation(counts), w) for _ in range(2000)])
    assert np.quantile(np.abs(null), 0.99) < 0.08
