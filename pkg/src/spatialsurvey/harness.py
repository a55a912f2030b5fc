"""Monte Carlo evaluation of the first-stage designs on simulated survey frames."""

from __future__ import annotations

import csv
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .sampling import DesignKind, make_design, replicate_seeds
from .seeding import derive_seed

TABLE_DESIGNS = (DesignKind.FPPS, DesignKind.LP, DesignKind.LCBV, DesignKind.LCBG, DesignKind.LCBVG)


@dataclass
class ExperimentConfig:
    rho_levels: tuple = (0.3, 0.5, 0.7)
    survey_days: tuple = (15, 29, 43)
    designs: tuple = tuple(DesignKind)
    m_levels: tuple = (20, 40, 80, 160)
    n_bar_levels: tuple = (1, 3, 5, 7)
    replicates: int = 10_000
    master_seed: int = 0
    lpm_variant: str = "nearest"
    geo_quadratic: bool = False
    keep_samples: bool = True
    track_joint: bool = False
    threads: int = 1
    smoke: bool = False

    def __post_init__(self):
        self.designs = tuple(DesignKind(d) for d in self.designs)
        if self.replicates < 2:
            raise ValueError(f"replicates={self.replicates}: the standard error is undefined")
        if self.replicates < 1000 and not self.smoke:
            raise ValueError(f"replicates={self.replicates}: at least 1000 are needed for SE claims")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        for m in self.m_levels:
            if m < 1:
                raise ValueError("m levels must be positive")
        for n in self.n_bar_levels:
            if n < 1:
                raise ValueError("n_bar levels must be positive")


@dataclass
class CellResult:
    design: DesignKind
    day: int
    rho: float
    m: int
    n_bar: int
    true_value: float
    mean_estimate: float
    rab: float
    rel_se: float
    inclusion: np.ndarray
    sizes: np.ndarray
    entropy: float | None = None
    block_entropy: float | None = None
    joint: np.ndarray | None = None
    seed: int = 0


@dataclass
class MCReport:
    config: ExperimentConfig
    cells: dict = field(default_factory=dict)

    def key(self, design, day, rho, m, n_bar):
        return (DesignKind(design), int(day), float(rho), int(m), int(n_bar))

    def get(self, design, day, rho, m, n_bar) -> CellResult:
        return self.cells[self.key(design, day, rho, m, n_bar)]

    def add(self, cell: CellResult) -> None:
        self.cells[self.key(cell.design, cell.day, cell.rho, cell.m, cell.n_bar)] = cell

    def seeds(self) -> dict:
        return {"|".join(map(str, (k[0].value, *k[1:]))): c.seed for k, c in self.cells.items()}


def _run_cell(plan, frame, n_bar, seeds, keep, joint, threads):
    m = plan.pi.size
    args = plan.kernel_args()
    counts, infected = frame.counts, frame.infected
    samples = np.zeros((seeds.size if keep else 0, m), dtype=np.bool_)
    jt = np.zeros((m, m) if joint else (0, 0), dtype=np.int64)
    if threads == 1:
        est, sizes, incl = K.replicate(*args, seeds, counts, infected, n_bar, samples, jt)
        return est, sizes, incl, samples, jt
    # contiguous chunks, each replicate reseeded, so results do not depend on threads
    bounds = np.linspace(0, seeds.size, threads + 1).astype(int)

    def work(t):
        lo, hi = bounds[t], bounds[t + 1]
        sub = samples[lo:hi] if keep else samples
        jj = np.zeros_like(jt)
        out = K.replicate(*args, seeds[lo:hi], counts, infected, n_bar, sub, jj)
        return out, jj

    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(work, range(threads)))
    est = np.concatenate([p[0][0] for p in parts])
    sizes = np.concatenate([p[0][1] for p in parts])
    incl = sum(p[0][2] for p in parts)
    for p in parts:
        jt += p[1]
    return est, sizes, incl, samples, jt


def evaluate_cell(kind, frame, m: int, n_bar: int, replicates: int, seed: int,
                  lpm_variant: str = "nearest", geo_quadratic: bool = False,
                  keep_samples: bool = False, track_joint: bool = False, threads: int = 1,
                  rho: float = float("nan"), block: tuple = (2, 2)) -> CellResult:
    """Repeated two-stage draws of one design on one frame."""
    plan = make_design(kind, frame, m, n_bar, lpm_variant=lpm_variant, geo_quadratic=geo_quadratic)
    seeds = replicate_seeds(seed, replicates)
    est, sizes, incl, samples, joint = _run_cell(plan, frame, n_bar, seeds, keep_samples,
                                                 track_joint, threads)
    y = float(frame.total_infected)
    mean = float(est.mean())
    rab = abs(mean - y) / y if y > 0 else float("nan")
    rel_se = math.sqrt(float(np.mean((est - y) ** 2))) / y if y > 0 else float("nan")
    cell = CellResult(DesignKind(kind), frame.day, float(rho), m, n_bar, y, mean, rab, rel_se,
                      incl / replicates, sizes, seed=seed)
    if keep_samples:
        cell.entropy = empirical_entropy(samples)
        cell.block_entropy = block_entropy(samples, frame.spec.rows, frame.spec.cols, block)
    if track_joint:
        cell.joint = joint / replicates
    return cell


def run_experiment(config: ExperimentConfig, snapshots, progress=None) -> MCReport:
    """Evaluate every (design, day, rho, m, n_bar) cell of ``config``.

    ``snapshots`` maps each rho level to the list of daily frames of its
    epidemic run (or to a dict day -> frame).
    """
    report = MCReport(config)
    for rho in config.rho_levels:
        frames = _frames_for(snapshots, rho)
        for day in config.survey_days:
            if day not in frames:
                raise KeyError(f"no frame for day {day} at rho={rho}")
            frame = frames[day]
            for m in config.m_levels:
                for n_bar in config.n_bar_levels:
                    for kind in config.designs:
                        seed = derive_seed(config.master_seed, "mc", kind.value, day, float(rho), m, n_bar)
                        cell = evaluate_cell(kind, frame, m, n_bar, config.replicates, seed,
                                             config.lpm_variant, config.geo_quadratic,
                                             config.keep_samples, config.track_joint,
                                             config.threads, rho=rho)
                        report.add(cell)
                        if progress is not None:
                            progress(cell)
    return report


def _frames_for(snapshots, rho):
    if rho in snapshots:
        frames = snapshots[rho]
    else:
        match = [k for k in snapshots if abs(float(k) - float(rho)) < 1e-12]
        if not match:
            raise KeyError(f"no snapshots for rho={rho}")
        frames = snapshots[match[0]]
    if isinstance(frames, dict):
        return frames
    return {f.day: f for f in frames}


# ------------------------------------------------------------------ entropy

def _plugin(codes) -> float:
    _, freq = np.unique(codes, return_counts=True, axis=0)
    p = freq / freq.sum()
    return float(-(p * np.log(p)).sum())


def empirical_entropy(draws) -> float:
    """Plug-in entropy (natural log) of the observed first-stage samples.

    ``draws`` is an (R, M) indicator matrix or a sequence of index sets.
    """
    if isinstance(draws, np.ndarray) and draws.ndim == 2:
        if draws.shape[0] == 0:
            return 0.0
        freq = np.unique(np.packbits(draws.astype(np.bool_), axis=1), return_counts=True, axis=0)[1]
    else:
        freq = np.array(list(Counter(frozenset(int(i) for i in s) for s in draws).values()))
        if freq.size == 0:
            return 0.0
    p = freq / freq.sum()
    return max(0.0, float(-(p * np.log(p)).sum()))


def block_entropy(draws: np.ndarray, rows: int, cols: int, block: tuple = (2, 2)) -> float:
    """Sum of plug-in entropies of the selection pattern on each lattice block.

    The blocks tile the grid (edge blocks may be smaller). By
    subadditivity the sum bounds the design entropy from above, and unlike
    the full plug-in estimate it does not saturate at log(R).
    """
    draws = np.asarray(draws, dtype=np.bool_)
    grid = draws.reshape(draws.shape[0], rows, cols)
    br, bc = block
    total = 0.0
    for r0 in range(0, rows, br):
        for c0 in range(0, cols, bc):
            sub = grid[:, r0:r0 + br, c0:c0 + bc].reshape(draws.shape[0], -1)
            code = sub.astype(np.int64) @ (1 << np.arange(sub.shape[1], dtype=np.int64))
            total += _plugin(code)
    return total


def relative_entropy_table(report: MCReport, m: int = 80, n_bar: int = 3, designs=TABLE_DESIGNS,
                           measure: str = "block_entropy") -> list:
    """Rows (day, rho, {design: I(FPPS) / I(design)}) in the layout of the entropy table.

    A zero denominator gives ``inf``; a missing entropy gives ``nan``.
    """
    out = []
    cfg = report.config
    for day in cfg.survey_days:
        for rho in cfg.rho_levels:
            base = getattr(report.get(DesignKind.FPPS, day, rho, m, n_bar), measure)
            ratios = {}
            for d in designs:
                if d == DesignKind.FPPS:
                    continue
                key = report.key(d, day, rho, m, n_bar)
                if key not in report.cells:
                    continue
                h = getattr(report.cells[key], measure)
                if h is None or base is None:
                    ratios[d] = float("nan")
                elif h == 0:
                    ratios[d] = float("inf")
                else:
                    ratios[d] = base / h
            out.append((day, rho, ratios))
    return out


# ------------------------------------------------------------------ screening

@dataclass(frozen=True)
class ScreeningScenario:
    """Per-quadrant relabelling of who is verified.

    Each rule is (action, fraction): "hide" turns that fraction of the
    verified into unverified infected, "reveal" turns that fraction of the
    unverified infected into verified. Quadrants: 1 top-right, 2 top-left,
    3 bottom-left, 4 bottom-right, with row 0 at the top of the map.
    """

    rules: tuple = ((1, "hide", 0.8), (2, "reveal", 0.8), (3, "hide", 0.8), (4, "reveal", 0.5))

    def __post_init__(self):
        for q, action, frac in self.rules:
            if q not in (1, 2, 3, 4):
                raise ValueError(f"unknown quadrant {q}")
            if action not in ("hide", "reveal"):
                raise ValueError(f"unknown screening action {action!r}")
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"screening fraction {frac} outside [0, 1]")

    @classmethod
    def identity(cls) -> "ScreeningScenario":
        return cls(rules=())


def quadrant_of_cells(spec) -> np.ndarray:
    r, c = np.divmod(np.arange(spec.n_cells), spec.cols)
    top = r < spec.rows // 2
    right = c >= spec.cols // 2
    return np.select([top & right, top & ~right, ~top & ~right], [1, 2, 3], 4)


def apply_screening(frame, scenario: ScreeningScenario, rng):
    """Frame with verification labels changed per quadrant; infections are untouched."""
    spec = frame.spec
    if spec.rows % 2 or spec.cols % 2:
        raise ValueError("the map must split evenly into 4 quadrants")
    rng = np.random.default_rng(rng)
    quad = quadrant_of_cells(spec)[frame.person_cell]
    v = frame.v.copy()
    for q, action, frac in scenario.rules:
        if action == "hide":
            pool = np.flatnonzero((quad == q) & (frame.v == 1))
            new = 0
        else:
            pool = np.flatnonzero((quad == q) & (frame.y == 1) & (frame.v == 0))
            new = 1
        k = int(round(frac * pool.size))
        if k:
            v[rng.choice(pool, size=k, replace=False)] = new
    return frame.with_labels(v)


# ------------------------------------------------------------------ tables

RESULT_HEADER = ["day", "rho", "design", "m", "n_bar", "true", "estimate", "rab", "se"]


def _fmt(x) -> str:
    return repr(float(x))


def summarize_tables(report: MCReport) -> list:
    """Result rows day,rho,design,m,n_bar,true,estimate,rab,se in a fixed order."""
    cfg = report.config
    rows = []
    for day in cfg.survey_days:
        for rho in cfg.rho_levels:
            for m in cfg.m_levels:
                for n_bar in cfg.n_bar_levels:
                    for d in cfg.designs:
                        key = report.key(d, day, rho, m, n_bar)
                        if key not in report.cells:
                            continue
                        c = report.cells[key]
                        rows.append([day, f"{rho:g}", d.value, m, n_bar, _fmt(c.true_value),
                                     _fmt(c.mean_estimate), _fmt(c.rab), _fmt(c.rel_se)])
    return rows


def _write(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_results(report: MCReport, path) -> None:
    _write(path, RESULT_HEADER, summarize_tables(report))


def write_table3(report: MCReport, path, m: int = 80, n_bar: int = 3) -> None:
    designs = [d for d in TABLE_DESIGNS if d != DesignKind.FPPS and d in report.config.designs]
    header = ["day", "rho"] + [f"FPPS/{d.value}" for d in designs] + [f"plugin_FPPS/{d.value}" for d in designs]
    block = relative_entropy_table(report, m, n_bar, measure="block_entropy")
    plug = relative_entropy_table(report, m, n_bar, measure="entropy")
    rows = []
    for (day, rho, rb), (_, _, rp) in zip(block, plug):
        rows.append([day, f"{rho:g}"] + [_fmt(rb[d]) for d in designs] + [_fmt(rp[d]) for d in designs])
    _write(path, header, rows)


def write_table4(report: MCReport, path, day: int = 15, m: int = 80, n_bar: int = 3) -> None:
    rows = [r for r in summarize_tables(report) if r[0] == day and r[3] == m and r[4] == n_bar]
    _write(path, RESULT_HEADER, rows)


def write_table5(report: MCReport, path, m: int = 80, n_bar: int = 3) -> None:
    cfg = report.config
    cols = [(rho, day) for rho in cfg.rho_levels for day in cfg.survey_days]
    header = ["design"] + [f"rho={rho:g}/day={day}" for rho, day in cols]
    rows = []
    for d in reversed([d for d in TABLE_DESIGNS if d in cfg.designs]):
        rows.append([d.value] + [_fmt(report.get(d, day, rho, m, n_bar).rel_se) for rho, day in cols])
    _write(path, header, rows)


def write_table6(cells: list, path) -> None:
    """``cells`` holds (screening label, CellResult) pairs."""
    header = ["screening", "design", "true", "estimate", "rab", "se"]
    rows = [[label, c.design.value, _fmt(c.true_value), _fmt(c.mean_estimate), _fmt(c.rab), _fmt(c.rel_se)]
            for label, c in cells]
    _write(path, header, rows)


def screening_experiment(frame, scenario: ScreeningScenario, designs, m: int, n_bar: int,
                         replicates: int, master_seed: int, threads: int = 1,
                         lpm_variant: str = "nearest", smoke: bool = False) -> list:
    """Homogeneous and heterogeneous-screening results for each design on one frame."""
    if replicates < 2 or (replicates < 1000 and not smoke):
        raise ValueError(f"replicates={replicates}: at least 1000 are needed for SE claims")
    hetero = apply_screening(frame, scenario, derive_seed(master_seed, "screening", frame.day))
    out = []
    for label, fr in (("homogeneous", frame), ("heterogeneous", hetero)):
        for d in designs:
            seed = derive_seed(master_seed, "table6", label, DesignKind(d).value, frame.day, m, n_bar)
            out.append((label, evaluate_cell(d, fr, m, n_bar, replicates, seed, lpm_variant,
                                             threads=threads)))
    return out
