import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import RHO_LEVELS
from oracles import meeting_infection_probability
from spatialsurvey.epidemic import (DEFAULT_PHASES, DiseaseParams, FrameSnapshot, HealthState, PhaseParams,
                                    _meetings, init_epidemic, moran_segments, moran_series, moving_average,
                                    read_frame_csv, run_epidemic, snapshot_frame, step_day, take_snapshot,
                                    write_daily_csv, write_frame_csv)
from spatialsurvey.population import GridSpec, PopulationGrid, generate_population

S, E, I, A, R, D = (int(s) for s in HealthState)


def small_grid(total=400, seed=0):
    return generate_population(GridSpec(6, 6), 0.5, total, seed)


def test_transition_matrix_rows():
    t = DiseaseParams().transition_matrix()
    assert np.allclose(t[1:].sum(axis=1), 1.0)
    assert t[E, I] == 0.25 and t[E, A] == 0.75 and t[I, D] == 0.15 and t[A, R] == 1.0


def test_parameter_validation():
    with pytest.raises(ValueError):
        DiseaseParams(p_E_to_I=0.5, p_E_to_A=0.4)
    with pytest.raises(ValueError):
        PhaseParams(10, 0.6, 0.5, 1.0, 1.0, 1)
    with pytest.raises(ValueError):
        PhaseParams(10, 0.1, 0.1, 0.0, 1.0, 1)


def test_init_counts_and_determinism():
    grid = generate_population(GridSpec(), 0.3, 20000, 1)
    a = init_epidemic(grid, 10, 5)
    counts = a.state_counts()
    assert counts[E] == 10 and counts[S] == 19990
    b = init_epidemic(grid, 10, 5)
    assert np.array_equal(a.state, b.state)
    with pytest.raises(ValueError):
        init_epidemic(grid, 0, 5)
    with pytest.raises(ValueError):
        init_epidemic(grid, 20001, 5)


def test_no_source_no_new_exposures():
    state = init_epidemic(small_grid(), 1, 0)
    state.state[:] = S
    nxt = step_day(state, DEFAULT_PHASES[0], DiseaseParams(), np.random.default_rng(0))
    assert nxt.state_counts()[E] == 0


def test_zero_infections_per_meeting_blocks_spread():
    phase = PhaseParams(30, 0.1, 0.05, 5.0, 5.0, 0)
    snaps = run_epidemic(small_grid(), [phase], DiseaseParams(), 5, 3, count_exposed=True)
    assert snaps[-1].state_counts[S] == 400 - 5
    assert snaps[-1].state_counts[E] + snaps[-1].state_counts[I] + snaps[-1].state_counts[A] \
        + snaps[-1].state_counts[R] + snaps[-1].state_counts[D] == 5


@pytest.mark.parametrize("c_n,c_p", [(1.0, 1.0), (0.5, 2.0), (3.0, 6.0)])
def test_meeting_process_matches_enumeration(c_n, c_p):
    loc = np.zeros(2, np.int64)
    state = np.array([S, A], np.int8)
    reps = 100_000
    hits = sum(bool(_meetings(loc, state, 4, c_n, c_p, 1, r)[0]) for r in range(reps))
    p = meeting_infection_probability(c_n, c_p)
    assert abs(hits / reps - p) < 4 * np.sqrt(p * (1 - p) / reps)


def test_symptomatic_and_dead_do_not_meet():
    loc = np.zeros(2, np.int64)
    for source in (I, D):
        state = np.array([S, source], np.int8)
        assert not any(_meetings(loc, state, 1, 5.0, 5.0, 2, r)[0] for r in range(200))


def test_exposed_today_are_not_reinfected_or_contagious():
    # one A with many S in one cell, i_m large: exposures bounded by participants, never counted twice
    loc = np.zeros(50, np.int64)
    state = np.zeros(50, np.int8)
    state[0] = A
    for r in range(50):
        ex = _meetings(loc, state, 1, 20.0, 10.0, 100, r)
        assert not ex[0]
        assert ex.sum() <= 49


def test_no_asymptomatics_when_all_become_symptomatic():
    disease = DiseaseParams(p_E_to_I=1.0, p_E_to_A=0.0)
    snaps = run_epidemic(small_grid(2000), DEFAULT_PHASES, disease, 10, 4)
    assert all(s.state_counts[A] == 0 for s in snaps)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_population_is_conserved_and_frames_are_consistent(seed):
    grid = small_grid(300, seed % 7)
    snaps = run_epidemic(grid, [PhaseParams(12, 0.1, 0.05, 4.0, 4.0, 2)], DiseaseParams(), 5, seed)
    deaths = 0
    for day, snap in enumerate(snaps, start=1):
        assert snap.day == day
        assert snap.state_counts.sum() == 300
        assert snap.counts.sum() == 300 - snap.state_counts[D]
        assert (snap.verified <= snap.infected).all() and (snap.infected <= snap.counts).all()
        assert snap.state_counts[D] >= deaths
        deaths = snap.state_counts[D]
        assert snap.total_infected == snap.state_counts[I] + snap.state_counts[A]
        assert snap.total_verified == snap.state_counts[I]


def test_count_exposed_toggle():
    grid = small_grid(500)
    a = run_epidemic(grid, DEFAULT_PHASES[:1], DiseaseParams(), 5, 1, count_exposed=True)
    for snap in a:
        sc = snap.state_counts
        assert snap.total_infected == sc[E] + sc[I] + sc[A]


def test_run_is_deterministic():
    grid = small_grid(500)
    a = run_epidemic(grid, DEFAULT_PHASES, DiseaseParams(), 5, 11)
    b = run_epidemic(grid, DEFAULT_PHASES, DiseaseParams(), 5, 11)
    assert all(np.array_equal(x.infected, y.infected) for x, y in zip(a, b))


def test_snapshot_frame_range():
    snaps = run_epidemic(small_grid(), [PhaseParams(5, 0.1, 0.0, 1.0, 2.0, 1)], DiseaseParams(), 2, 0)
    assert snapshot_frame(snaps, 3).day == 3
    with pytest.raises(ValueError):
        snapshot_frame(snaps, 6)
    with pytest.raises(ValueError):
        snapshot_frame(snaps, 0)


def test_default_runs_day15_frame(default_frames, default_runs):
    for rho in RHO_LEVELS:
        f = default_frames[rho][15]
        assert f.total_infected >= f.total_verified > 0
        grid, snaps = default_runs[rho]
        assert f.counts.sum() == grid.total - f.state_counts[D]
        assert len(snaps) == 70


def test_default_curve_rises_then_declines(default_runs):
    for rho in RHO_LEVELS:
        _, snaps = default_runs[rho]
        curve = np.array([s.total_infected for s in snaps])
        peak = int(np.argmax(curve))
        assert curve[peak] > 10 * curve[0]
        assert 14 <= peak + 1 <= 50
        assert curve[-1] < 0.5 * curve[peak]


def test_frame_csv_round_trip(tmp_path, default_runs):
    _, snaps = default_runs[0.5]
    write_frame_csv(snaps[:3], tmp_path / "f.csv")
    back = read_frame_csv(tmp_path / "f.csv", GridSpec())
    for a, b in zip(snaps[:3], back):
        assert a.day == b.day
        assert np.array_equal(a.counts, b.counts)
        assert np.array_equal(a.verified, b.verified)
        assert np.array_equal(a.infected, b.infected)
    write_daily_csv(snaps[:3], tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0].startswith("day,S,E,I,A,R,D") and len(lines) == 4


def test_from_counts_rejects_inconsistent():
    with pytest.raises(ValueError):
        FrameSnapshot.from_counts(1, GridSpec(2, 2), [3, 3, 3, 3], [2, 0, 0, 0], [1, 0, 0, 0])


def test_frame_rejects_verified_uninfected():
    with pytest.raises(ValueError, match="verified"):
        FrameSnapshot(1, GridSpec(2, 2), [0, 1], [0, 0], [1, 0])


def test_moving_average_and_segments_on_synthetic_series():
    t = np.arange(60, dtype=float)
    series = np.where(t < 20, t / 20, np.where(t < 30, 1 - (t - 20) / 15, 0.33 + (t - 30) / 40))
    series[:2] = np.nan
    totals = -np.abs(t - 28)
    out = moran_segments(series, totals)
    assert out["ok"]
    assert out["first_max"] < out["dip"] < out["second_max"]
    assert np.isnan(moving_average(series)[0])
    assert moving_average(np.ones(9))[4] == 1.0


def test_moran_series_undefined_when_constant():
    spec = GridSpec(2, 2)
    snap = FrameSnapshot.from_counts(1, spec, [2, 2, 2, 2], [0, 0, 0, 0], [0, 0, 0, 0])
    assert np.isnan(moran_series([snap])[0])
