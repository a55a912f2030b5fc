"""Agent-based SEIARD epidemic on a population lattice.

Each simulated day runs four steps: mobility, meetings inside cells,
return to the home cell, then clock updates and state transitions. The
survey frame of a day is a :class:`FrameSnapshot` holding, for every
living resident, the home cell, the infection flag ``y`` and the
verification flag ``v``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .population import GridSpec, PopulationGrid, SpatialWeights, build_weight_matrix, morans_i


class HealthState(IntEnum):
    S = 0
    E = 1
    I = 2
    A = 3
    R = 4
    D = 5


MOBILE_STATES = (HealthState.S, HealthState.E, HealthState.A, HealthState.R)


@dataclass(frozen=True)
class PhaseParams:
    duration_days: int
    m1_frac: float
    m2_frac: float
    c_n: float
    c_p: float
    i_m: int

    def __post_init__(self):
        if self.duration_days < 1:
            raise ValueError("phase duration must be positive")
        if not (0 <= self.m1_frac <= 1 and 0 <= self.m2_frac <= 1):
            raise ValueError("mobility fractions must lie in [0, 1]")
        if self.m1_frac + self.m2_frac > 1 + 1e-12:
            raise ValueError("m1_frac + m2_frac must not exceed 1")
        if self.c_n <= 0 or self.c_p <= 0:
            raise ValueError("Poisson means c_n and c_p must be positive")
        if self.i_m < 0:
            raise ValueError("i_m must be nonnegative")


# Normal mobility for four weeks, then six weeks of lockdown.
DEFAULT_PHASES = (
    PhaseParams(duration_days=28, m1_frac=0.10, m2_frac=0.05, c_n=5, c_p=5, i_m=2),
    PhaseParams(duration_days=42, m1_frac=0.01, m2_frac=0.00, c_n=2, c_p=3, i_m=1),
)


@dataclass(frozen=True)
class DiseaseParams:
    exposed_duration: int = 5
    infectious_duration: int = 14
    p_E_to_I: float = 0.25
    p_E_to_A: float = 0.75
    p_I_to_D: float = 0.15
    p_I_to_R: float = 0.85

    def __post_init__(self):
        if abs(self.p_E_to_I + self.p_E_to_A - 1) > 1e-12:
            raise ValueError("p_E_to_I + p_E_to_A must equal 1")
        if abs(self.p_I_to_D + self.p_I_to_R - 1) > 1e-12:
            raise ValueError("p_I_to_D + p_I_to_R must equal 1")
        if self.exposed_duration < 1 or self.infectious_duration < 1:
            raise ValueError("state durations must be positive")

    def transition_matrix(self) -> np.ndarray:
        """Rows/cols ordered S, E, I, A, R, D. The S row is left empty:
        S -> E is driven by contacts, not by a fixed probability."""
        t = np.zeros((6, 6))
        t[HealthState.E, HealthState.I] = self.p_E_to_I
        t[HealthState.E, HealthState.A] = self.p_E_to_A
        t[HealthState.I, HealthState.R] = self.p_I_to_R
        t[HealthState.I, HealthState.D] = self.p_I_to_D
        t[HealthState.A, HealthState.R] = 1.0
        t[HealthState.R, HealthState.R] = 1.0
        t[HealthState.D, HealthState.D] = 1.0
        return t


@dataclass
class EpidemicState:
    spec: GridSpec
    day: int
    home: np.ndarray
    state: np.ndarray
    days_in_state: np.ndarray
    location: np.ndarray

    @property
    def n_persons(self) -> int:
        return self.home.shape[0]

    def state_counts(self) -> np.ndarray:
        return np.bincount(self.state, minlength=6)

    def copy(self) -> "EpidemicState":
        return EpidemicState(
            self.spec, self.day, self.home.copy(), self.state.copy(),
            self.days_in_state.copy(), self.location.copy(),
        )


@dataclass
class FrameSnapshot:
    """Survey frame for one day: living residents indexed by home cell."""

    day: int
    spec: GridSpec
    person_cell: np.ndarray
    y: np.ndarray
    v: np.ndarray
    person_id: np.ndarray | None = None
    state_counts: np.ndarray | None = None
    person_xy: np.ndarray | None = None
    counts: np.ndarray = field(init=False, repr=False)
    verified: np.ndarray = field(init=False, repr=False)
    infected: np.ndarray = field(init=False, repr=False)
    _order: np.ndarray = field(init=False, repr=False)
    _offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.person_cell = np.asarray(self.person_cell, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int8)
        self.v = np.asarray(self.v, dtype=np.int8)
        if not (self.person_cell.shape == self.y.shape == self.v.shape):
            raise ValueError("person arrays must have equal length")
        if np.any(self.v > self.y):
            raise ValueError("a verified person must be infected (v=1 implies y=1)")
        m = self.spec.n_cells
        self.counts = np.bincount(self.person_cell, minlength=m).astype(np.int64)
        self.verified = np.bincount(self.person_cell, weights=self.v, minlength=m).astype(np.int64)
        self.infected = np.bincount(self.person_cell, weights=self.y, minlength=m).astype(np.int64)
        self._order = np.argsort(self.person_cell, kind="stable")
        self._offsets = np.concatenate([[0], np.cumsum(self.counts)])

    @property
    def n_clusters(self) -> int:
        return self.spec.n_cells

    @property
    def total_verified(self) -> int:
        return int(self.verified.sum())

    @property
    def total_infected(self) -> int:
        return int(self.infected.sum())

    def members(self, cluster: int) -> np.ndarray:
        """Frame positions of the residents of ``cluster``."""
        return self._order[self._offsets[cluster]:self._offsets[cluster + 1]]

    def coords(self) -> np.ndarray:
        return self.spec.centroids()

    @classmethod
    def from_counts(cls, day: int, spec: GridSpec, counts, verified, infected) -> "FrameSnapshot":
        """Frame with exchangeable residents rebuilt from per-cell N_i, V_i, Y_i."""
        counts = np.asarray(counts, dtype=np.int64)
        verified = np.asarray(verified, dtype=np.int64)
        infected = np.asarray(infected, dtype=np.int64)
        if np.any(verified > infected) or np.any(infected > counts):
            raise ValueError("per-cell counts must satisfy V_i <= Y_i <= N_i")
        cell = np.repeat(np.arange(counts.size, dtype=np.int64), counts)
        rank = np.arange(cell.size) - np.repeat(np.cumsum(counts) - counts, counts)
        y = (rank < infected[cell]).astype(np.int8)
        v = (rank < verified[cell]).astype(np.int8)
        return cls(day, spec, cell, y, v)

    def with_labels(self, v: np.ndarray) -> "FrameSnapshot":
        return FrameSnapshot(
            self.day, self.spec, self.person_cell, self.y, v,
            self.person_id, self.state_counts, self.person_xy,
        )


def init_epidemic(grid: PopulationGrid, seed_cases: int, rng_seed: int) -> EpidemicState:
    n = grid.total
    if seed_cases < 1:
        raise ValueError("seed_cases must be at least 1")
    if seed_cases > n:
        raise ValueError(f"seed_cases={seed_cases} exceeds population size {n}")
    rng = np.random.default_rng(rng_seed)
    home = np.repeat(np.arange(grid.spec.n_cells, dtype=np.int64), grid.counts)
    state = np.full(n, HealthState.S, dtype=np.int8)
    state[rng.choice(n, size=seed_cases, replace=False)] = HealthState.E
    return EpidemicState(grid.spec, 0, home, state, np.zeros(n, dtype=np.int32), home.copy())


_QUEEN = np.array([(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)])


def _mobility(state: EpidemicState, phase: PhaseParams, rng: np.random.Generator) -> np.ndarray:
    spec = state.spec
    loc = state.home.copy()
    mobile = np.flatnonzero(np.isin(state.state, MOBILE_STATES))
    if mobile.size == 0:
        return loc
    mobile = rng.permutation(mobile)
    n1 = int(round(phase.m1_frac * mobile.size))
    n2 = min(int(round(phase.m2_frac * mobile.size)), mobile.size - n1)
    to_centre, to_neighbour = mobile[:n1], mobile[n1:n1 + n2]
    central = spec.central_cells()
    loc[to_centre] = central[rng.integers(central.size, size=n1)]
    r, c = np.divmod(state.home[to_neighbour], spec.cols)
    step = _QUEEN[rng.integers(8, size=n2)]
    r = np.clip(r + step[:, 0], 0, spec.rows - 1)
    c = np.clip(c + step[:, 1], 0, spec.cols - 1)
    loc[to_neighbour] = r * spec.cols + c
    return loc


@njit(cache=True)
def _meetings(loc, state, n_cells, c_n, c_p, i_m, seed):
    """Poisson meetings in every cell; returns the newly exposed mask.

    Persons exposed today are not contagious until tomorrow and cannot be
    infected twice.
    """
    np.random.seed(seed)
    n = loc.shape[0]
    counts = np.zeros(n_cells + 1, np.int64)
    for k in range(n):
        s = state[k]
        if s != 2 and s != 5:
            counts[loc[k] + 1] += 1
    for c in range(n_cells):
        counts[c + 1] += counts[c]
    fill = counts[:-1].copy()
    present = np.empty(counts[n_cells], np.int64)
    for k in range(n):
        s = state[k]
        if s != 2 and s != 5:
            present[fill[loc[k]]] = k
            fill[loc[k]] += 1
    exposed = np.zeros(n, np.bool_)
    for c in range(n_cells):
        lo = counts[c]
        occ = counts[c + 1] - lo
        n_meet = np.random.poisson(c_n)
        for _ in range(n_meet):
            size = min(np.random.poisson(c_p), occ)
            if size < 2:
                continue
            # partial Fisher-Yates inside the cell's slice
            for t in range(size):
                j = lo + t + np.random.randint(occ - t)
                tmp = present[lo + t]
                present[lo + t] = present[j]
                present[j] = tmp
            contagious = False
            for t in range(size):
                s = state[present[lo + t]]
                if s == 1 or s == 3:
                    contagious = True
                    break
            if not contagious:
                continue
            infected = 0
            for t in range(size):
                if infected >= i_m:
                    break
                p = present[lo + t]
                if state[p] == 0 and not exposed[p]:
                    exposed[p] = True
                    infected += 1
    return exposed


def step_day(state: EpidemicState, phase: PhaseParams, disease: DiseaseParams,
             rng: np.random.Generator) -> EpidemicState:
    new = state.copy()
    new.day = state.day + 1
    new.location = _mobility(state, phase, rng)
    seed = int(rng.integers(2**31 - 1))
    exposed = _meetings(new.location, new.state, state.spec.n_cells,
                        float(phase.c_n), float(phase.c_p), int(phase.i_m), seed)

    st, days = new.state, new.days_in_state
    days[st != HealthState.S] += 1
    done_e = np.flatnonzero((st == HealthState.E) & (days >= disease.exposed_duration))
    done_i = np.flatnonzero((st == HealthState.I) & (days >= disease.infectious_duration))
    done_a = np.flatnonzero((st == HealthState.A) & (days >= disease.infectious_duration))
    u_e = rng.random(done_e.size)
    u_i = rng.random(done_i.size)
    st[done_e] = np.where(u_e < disease.p_E_to_I, HealthState.I, HealthState.A)
    st[done_i] = np.where(u_i < disease.p_I_to_D, HealthState.D, HealthState.R)
    st[done_a] = HealthState.R
    changed = np.concatenate([done_e, done_i, done_a])
    days[changed] = 0
    st[exposed] = HealthState.E
    days[exposed] = 0
    new.location = new.home.copy()
    return new


def take_snapshot(state: EpidemicState, infected_states=(HealthState.I, HealthState.A)) -> FrameSnapshot:
    alive = np.flatnonzero(state.state != HealthState.D)
    st = state.state[alive]
    y = np.isin(st, infected_states).astype(np.int8)
    v = (st == HealthState.I).astype(np.int8)
    return FrameSnapshot(
        day=state.day, spec=state.spec, person_cell=state.home[alive], y=y, v=v,
        person_id=alive, state_counts=state.state_counts(),
    )


def run_epidemic(grid: PopulationGrid, phases: Sequence[PhaseParams] = DEFAULT_PHASES,
                 disease: DiseaseParams = DiseaseParams(), seed_cases: int = 10,
                 rng_seed: int = 0, count_exposed: bool = False) -> list[FrameSnapshot]:
    """Simulate the whole phase schedule; one snapshot per day 1..horizon.

    ``count_exposed`` adds E persons to the survey target ``y``
    (by default the target is I + A).
    """
    if not phases:
        raise ValueError("at least one phase is required")
    infected_states = (HealthState.E, HealthState.I, HealthState.A) if count_exposed else (
        HealthState.I, HealthState.A)
    ss = np.random.SeedSequence(rng_seed)
    init_seed, dyn_seed = ss.spawn(2)
    state = init_epidemic(grid, seed_cases, int(init_seed.generate_state(1)[0]))
    rng = np.random.default_rng(dyn_seed)
    snapshots = []
    for phase in phases:
        for _ in range(phase.duration_days):
            state = step_day(state, phase, disease, rng)
            snapshots.append(take_snapshot(state, infected_states))
    return snapshots


def snapshot_frame(snapshots: Sequence[FrameSnapshot], day: int) -> FrameSnapshot:
    if not 1 <= day <= len(snapshots):
        raise ValueError(f"day {day} outside simulated horizon 1..{len(snapshots)}")
    snap = snapshots[day - 1]
    assert snap.day == day
    return snap


def moran_series(snapshots: Sequence[FrameSnapshot], weights: SpatialWeights | None = None,
                 verified_only: bool = False) -> np.ndarray:
    """Daily Moran's I of per-cell infected counts (NaN where the field is constant)."""
    if weights is None:
        weights = build_weight_matrix(snapshots[0].spec, "queen", row_standardized=True)
    out = np.full(len(snapshots), np.nan)
    for t, snap in enumerate(snapshots):
        values = snap.verified if verified_only else snap.infected
        try:
            out[t] = morans_i(values, weights)
        except ValueError:
            pass
    return out


def write_daily_csv(snapshots: Sequence[FrameSnapshot], path, weights: SpatialWeights | None = None) -> None:
    known = moran_series(snapshots, weights, verified_only=True)
    total = moran_series(snapshots, weights)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["day", "S", "E", "I", "A", "R", "D", "moran_I_known", "moran_I_total"])
        for snap, mk, mt in zip(snapshots, known, total):
            writer.writerow([snap.day, *map(int, snap.state_counts), _fmt(mk), _fmt(mt)])


def write_frame_csv(snapshots: Sequence[FrameSnapshot], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["day", "cell", "N_i", "V_i", "Y_i"])
        for snap in snapshots:
            for i in range(snap.n_clusters):
                writer.writerow([snap.day, i, int(snap.counts[i]), int(snap.verified[i]), int(snap.infected[i])])


def read_frame_csv(path, spec: GridSpec) -> list[FrameSnapshot]:
    """Frames written by ``write_frame_csv``, residents rebuilt per cell."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    frames = []
    for day in np.unique(data[:, 0]):
        rows = data[data[:, 0] == day]
        n, v, y = (np.zeros(spec.n_cells, np.int64) for _ in range(3))
        n[rows[:, 1]], v[rows[:, 1]], y[rows[:, 1]] = rows[:, 2], rows[:, 3], rows[:, 4]
        frames.append(FrameSnapshot.from_counts(int(day), spec, n, v, y))
    return frames


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def moving_average(x, window: int = 5) -> np.ndarray:
    """Centered moving average ignoring NaNs; edges use the available points."""
    x = np.asarray(x, dtype=np.float64)
    ok = ~np.isnan(x)
    kernel = np.ones(window)
    num = np.convolve(np.where(ok, x, 0.0), kernel, mode="same")
    den = np.convolve(ok.astype(np.float64), kernel, mode="same")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    out[~ok] = np.nan
    return out


def moran_segments(series, totals, window: int = 5, peak_tol: int = 10, min_len: int = 3) -> dict:
    """Rise / dip / rise decomposition of a smoothed daily Moran's I series.

    The dip is the minimum within ``peak_tol`` days of the infection peak,
    the first rise ends at the maximum before it and the second rise at
    the maximum after it. ``ok`` is True when all three segments are at
    least ``min_len`` days long and their net changes have signs +, -, +.
    """
    s = moving_average(series, window)
    totals = np.asarray(totals, dtype=np.float64)
    defined = np.flatnonzero(~np.isnan(s))
    start = int(defined[0])
    peak = int(np.argmax(totals))
    lo, hi = max(start + 1, peak - peak_tol), min(len(s) - 1, peak + peak_tol)
    dip = lo + int(np.nanargmin(s[lo:hi + 1]))
    top1 = start + int(np.nanargmax(s[start:dip + 1]))
    top2 = dip + int(np.nanargmax(s[dip:]))
    d = np.diff(s)
    rises = (float(np.nansum(d[start:top1])), float(np.nansum(d[top1:dip])), float(np.nansum(d[dip:top2])))
    ok = (top1 - start >= min_len and dip - top1 >= min_len and top2 - dip >= min_len
          and rises[0] > 0 and rises[1] < 0 and rises[2] > 0)
    return {"start": start, "first_max": top1, "dip": dip, "second_max": top2, "peak": peak,
            "changes": rises, "smoothed": s, "ok": bool(ok)}
