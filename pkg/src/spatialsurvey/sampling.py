"""First-stage designs (cube, local pivotal, local cube) and second-stage SRSWOR."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels as K


class DesignKind(str, Enum):
    FPPS = "FPPS"
    CBV = "CBV"
    LP = "LP"
    LCBV = "LCBV"
    LCBG = "LCBG"
    LCBVG = "LCBVG"


# kind -> (kernel, balancing columns after pi)
_DESIGNS = {
    DesignKind.FPPS: (K.CUBE, ()),
    DesignKind.CBV: (K.CUBE, ("verified",)),
    DesignKind.LP: (K.PIVOTAL, ()),
    DesignKind.LCBV: (K.LOCAL_CUBE, ("verified",)),
    DesignKind.LCBG: (K.LOCAL_CUBE, ("x", "y")),
    DesignKind.LCBVG: (K.LOCAL_CUBE, ("verified", "x", "y")),
}

_METHOD_NAMES = {"cube": K.CUBE, "pivotal": K.PIVOTAL, "local_cube": K.LOCAL_CUBE}


@dataclass(frozen=True)
class DesignSpec:
    kind: DesignKind
    m: int
    n_bar: int

    def __post_init__(self):
        object.__setattr__(self, "kind", DesignKind(self.kind))
        if self.m < 1 or self.n_bar < 1:
            raise ValueError("m and n_bar must be positive")


@dataclass(frozen=True)
class InclusionPlan:
    """First-stage inclusion probabilities with a balancing matrix.

    ``balance`` holds one row d_i per cluster; the first column is ``pi``
    itself, which fixes the sample size. ``method`` names the selection
    algorithm: "cube", "pivotal" or "local_cube".
    """

    pi: np.ndarray
    balance: np.ndarray
    coords: np.ndarray | None = None
    method: str = "cube"
    kind: DesignKind | None = None
    n_bar: int | None = None
    lpm_variant: str = "nearest"
    column_names: tuple = ()
    dropped: tuple = ()
    _scaled: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.float64)
        d = np.asarray(self.balance, dtype=np.float64)
        if d.ndim == 1:
            d = d[:, None]
        if d.shape[0] != pi.shape[0]:
            raise ValueError("balance must have one row per cluster")
        if np.any(pi < 0) or np.any(pi > 1 + 1e-12):
            raise ValueError("inclusion probabilities must lie in [0, 1]")
        if self.method not in _METHOD_NAMES:
            raise ValueError(f"unknown method {self.method!r}")
        if self.lpm_variant not in ("nearest", "mutual"):
            raise ValueError("lpm_variant must be 'nearest' or 'mutual'")
        if self.method != "cube" and self.coords is None:
            raise ValueError(f"method {self.method!r} needs cluster coordinates")
        object.__setattr__(self, "pi", np.minimum(pi, 1.0))
        object.__setattr__(self, "balance", d)
        if self.coords is not None:
            object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.float64))
        object.__setattr__(self, "_scaled", _scaled_ratios(self.pi, d))

    @property
    def H(self) -> int:
        return self.balance.shape[1]

    @property
    def m_expected(self) -> float:
        return float(self.pi.sum())

    @property
    def fixed_size(self) -> bool:
        return abs(self.m_expected - round(self.m_expected)) < 1e-8

    def neighbours(self):
        """Sorted neighbour table of the cluster coordinates (cached)."""
        cached = self.__dict__.get("_nbr")
        if cached is None:
            if self.coords is None:
                cached = (np.zeros((1, 1), np.int64), np.zeros((1, 1)))
            else:
                cached = K.neighbour_table(self.coords)
            object.__setattr__(self, "_nbr", cached)
        return cached

    def kernel_args(self):
        nbr, nd = self.neighbours()
        return (_METHOD_NAMES[self.method], self.pi, self._scaled, nbr, nd, self.H,
                self.lpm_variant == "mutual")


def _scaled_ratios(pi: np.ndarray, d: np.ndarray) -> np.ndarray:
    a = np.zeros_like(d)
    pos = pi > 0
    a[pos] = d[pos] / pi[pos, None]
    scale = np.abs(a).max(axis=0)
    scale[scale == 0] = 1.0
    return np.ascontiguousarray(a / scale)


def prune_balance(pi: np.ndarray, d: np.ndarray, names=None, tol: float = 1e-9):
    """Drop balancing columns that are linearly dependent on earlier ones.

    Dependence is judged on the undecided clusters (0 < pi < 1), where the
    balancing equations actually bind. Returns (kept matrix, kept names,
    dropped names).
    """
    d = np.atleast_2d(np.asarray(d, dtype=np.float64).T).T
    names = list(names) if names is not None else [f"d{h}" for h in range(d.shape[1])]
    live = (pi > 0) & (pi < 1)
    a = _scaled_ratios(pi, d)[live]
    keep = []
    for h in range(d.shape[1]):
        cols = a[:, keep + [h]]
        if cols.size and np.linalg.matrix_rank(cols, tol=tol * max(1.0, np.sqrt(cols.shape[0]))) == len(keep) + 1:
            keep.append(h)
    dropped = tuple(n for h, n in enumerate(names) if h not in keep)
    if dropped:
        warnings.warn(f"dropping linearly dependent balancing variables: {', '.join(dropped)}",
                      RuntimeWarning, stacklevel=3)
    if not keep:
        keep = [0]
    return d[:, keep], tuple(names[h] for h in keep), dropped


def pps_probabilities(counts, m: int) -> InclusionPlan:
    """PPS inclusion probabilities m N_i / N with truncation at 1.

    Clusters pushed above 1 are fixed at 1 and the remaining sample size is
    spread over the others in proportion to N_i, until nothing exceeds 1.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.sum() <= 0:
        raise ValueError("total size must be positive")
    if m < 1:
        raise ValueError("m must be at least 1")
    nonempty = counts > 0
    if m > nonempty.sum():
        raise ValueError(f"m={m} exceeds the number of nonempty clusters ({int(nonempty.sum())})")
    pi = np.zeros_like(counts)
    capped = np.zeros(counts.shape, dtype=bool)
    while True:
        free = nonempty & ~capped
        pi[capped] = 1.0
        pi[free] = (m - capped.sum()) * counts[free] / counts[free].sum()
        over = free & (pi >= 1.0)
        if not over.any():
            break
        capped |= over
    pi[capped] = 1.0
    return InclusionPlan(pi=pi, balance=pi[:, None].copy(), column_names=("pi",))


def make_design(kind, frame, m: int, n_bar: int, lpm_variant: str = "nearest",
                geo_quadratic: bool = False) -> InclusionPlan:
    """Inclusion plan for one of the named designs on a survey frame.

    All designs use PPS probabilities. The balancing matrix starts with the
    pi column; CBV/LCBV add the verified counts, LCBG adds the centroid
    coordinates and LCBVG adds both. ``geo_quadratic`` appends x^2, y^2
    and xy to the geographic designs.
    """
    kind = DesignKind(kind)
    method, extra = _DESIGNS[kind]
    base = pps_probabilities(frame.counts, m)
    coords = frame.coords()
    columns = {"verified": frame.verified.astype(np.float64), "x": coords[:, 0], "y": coords[:, 1]}
    names = ["pi", *extra]
    if geo_quadratic and "x" in extra:
        columns.update(xx=coords[:, 0] ** 2, yy=coords[:, 1] ** 2, xy=coords[:, 0] * coords[:, 1])
        names += ["xx", "yy", "xy"]
    d = np.column_stack([base.pi] + [columns[n] for n in names[1:]])
    kept, kept_names, dropped = prune_balance(base.pi, d, names)
    method_name = {K.CUBE: "cube", K.PIVOTAL: "pivotal", K.LOCAL_CUBE: "local_cube"}[method]
    return InclusionPlan(pi=base.pi, balance=kept, coords=coords, method=method_name, kind=kind,
                         n_bar=n_bar, lpm_variant=lpm_variant, column_names=kept_names,
                         dropped=dropped)


def _seed(rng) -> int:
    return int(np.random.default_rng(rng).integers(2**31 - 1))


def cube_flight(plan: InclusionPlan, rng) -> np.ndarray:
    """Flight phase of the cube method in a random visiting order.

    At most H coordinates of the returned vector are fractional.
    """
    rng = np.random.default_rng(rng)
    p = plan.pi.copy()
    order = rng.permutation(p.size)
    K.seed(_seed(rng))
    K.flight(p, plan._scaled, order, plan.H)
    return p


def cube_landing(flight_result: np.ndarray, plan: InclusionPlan, rng) -> np.ndarray:
    """Settle the fractional coordinates left by the flight; returns selected indices."""
    p = np.asarray(flight_result, dtype=np.float64).copy()
    K.seed(_seed(rng))
    K.landing(p, plan._scaled, np.arange(p.size), plan.H)
    return np.flatnonzero(p > 0.5)


def local_pivotal(plan: InclusionPlan, coords=None, rng=None) -> np.ndarray:
    """Local pivotal draw; returns selected indices."""
    nbr, nd = K.neighbour_table(coords) if coords is not None else plan.neighbours()
    p = plan.pi.copy()
    K.seed(_seed(rng))
    K.local_pivotal(p, nbr, nd, plan.lpm_variant == "mutual")
    return np.flatnonzero(p > 0.5)


def local_cube(plan: InclusionPlan, coords=None, rng=None) -> np.ndarray:
    """Local cube draw (flight on neighbourhoods, then landing); returns selected indices."""
    nbr, nd = K.neighbour_table(coords) if coords is not None else plan.neighbours()
    p = plan.pi.copy()
    K.seed(_seed(rng))
    K.local_cube(p, plan._scaled, nbr, nd, plan.H)
    return np.flatnonzero(p > 0.5)


def draw_first_stage(plan: InclusionPlan, rng) -> np.ndarray:
    """Selected cluster indices for one draw of ``plan``."""
    return np.flatnonzero(K.draw_one(*plan.kernel_args(), _seed(rng)))


def draw_many(plan: InclusionPlan, n: int, seed: int) -> np.ndarray:
    """``n`` independent first-stage draws as an (n, M) boolean matrix."""
    seeds = replicate_seeds(seed, n)
    out = np.zeros((n, plan.pi.size), dtype=np.bool_)
    counts = np.zeros(plan.pi.size, dtype=np.int64)
    K.replicate(*plan.kernel_args(), seeds, counts, counts, 1, out, np.zeros((0, 0), np.int64))
    return out


def replicate_seeds(seed: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence(seed)).integers(0, 2**31 - 1, size=n)


# ---------------------------------------------------------------- second stage

def second_stage_srswor(frame, cluster: int, n_bar: int, rng: np.random.Generator):
    """SRSWOR of min(n_bar, N_i) residents; returns (frame positions, pi_II)."""
    members = frame.members(cluster)
    n_i = members.size
    if n_i == 0:
        raise ValueError(f"cluster {cluster} is empty")
    take = min(n_bar, n_i)
    chosen = np.sort(rng.choice(members, size=take, replace=False))
    return chosen, take / n_i


@dataclass
class SampleDraw:
    first_stage: np.ndarray
    second_stage: dict
    w_I: dict
    w_II: dict

    def person_weights(self):
        """(frame positions, final weights w_I * w_II) for every sampled person."""
        persons, weights = [], []
        for i in self.first_stage:
            people = self.second_stage[int(i)]
            persons.append(people)
            weights.append(np.full(people.size, self.w_I[int(i)] * self.w_II[int(i)]))
        if not persons:
            return np.zeros(0, np.int64), np.zeros(0)
        return np.concatenate(persons), np.concatenate(weights)


def draw_sample(plan: InclusionPlan, frame, n_bar: int | None = None, rng=None) -> SampleDraw:
    """One two-stage sample: first stage by ``plan``, then SRSWOR in each cluster."""
    rng = np.random.default_rng(rng)
    n_bar = n_bar if n_bar is not None else plan.n_bar
    if n_bar is None:
        raise ValueError("n_bar is required")
    clusters = draw_first_stage(plan, rng)
    second, w1, w2 = {}, {}, {}
    for i in clusters:
        people, pi2 = second_stage_srswor(frame, int(i), n_bar, rng)
        second[int(i)] = people
        w1[int(i)] = 1.0 / plan.pi[i]
        w2[int(i)] = 1.0 / pi2
    return SampleDraw(clusters, second, w1, w2)


def census_draw(frame) -> SampleDraw:
    clusters = np.flatnonzero(frame.counts > 0)
    return SampleDraw(
        clusters,
        {int(i): frame.members(int(i)) for i in clusters},
        {int(i): 1.0 for i in clusters},
        {int(i): 1.0 for i in clusters},
    )
