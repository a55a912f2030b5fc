"""Horvitz-Thompson estimation, spatial working models and anticipated variance."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .epidemic import FrameSnapshot
from .population import GridSpec
from .sampling import InclusionPlan, pps_probabilities, replicate_seeds


def ht_estimate(draw, frame, values=None) -> float:
    """Two-stage HT estimate sum_i w_Ii sum_j w_IIi y_ij.

    ``values`` overrides the frame's infection indicators (one per person).
    """
    y = frame.y if values is None else np.asarray(values, dtype=np.float64)
    if y.shape[0] != frame.person_cell.shape[0]:
        raise ValueError("values must have one entry per frame person")
    persons, weights = draw.person_weights()
    sampled = np.asarray(y[persons], dtype=np.float64)
    if np.isnan(sampled).any():
        raise ValueError("missing y value for a sampled person")
    return float(sampled @ weights)


# ------------------------------------------------------------------ working model

@dataclass(frozen=True)
class CovarianceModel:
    """Isotropic correlation rho(d) with variance scale sigma_u2.

    power: rho_base ** d. gaussian: exp(-3 (d / alpha)^2) + tau2, so the
    correlation falls below 0.05 at the range alpha when tau2 = 0.
    """

    kind: str = "gaussian"
    sigma_u2: float = 1.0
    rho_base: float = 0.5
    alpha: float = 1.0
    tau2: float = 0.0

    def __post_init__(self):
        if self.kind not in ("power", "gaussian"):
            raise ValueError(f"unknown covariance kind {self.kind!r}; expected 'power' or 'gaussian'")
        if self.sigma_u2 < 0:
            raise ValueError("sigma_u2 must be nonnegative")
        if not -1.0 <= self.rho_base <= 1.0:
            raise ValueError("rho_base must lie in [-1, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.tau2 < 0:
            raise ValueError("tau2 must be nonnegative")

    @property
    def phi_decay(self) -> float:
        return 1.0 / self.alpha

    def correlation(self, d):
        d = np.asarray(d, dtype=np.float64)
        if np.any(d < 0):
            raise ValueError("distances must be nonnegative")
        if self.kind == "gaussian":
            return np.exp(-3.0 * (d / self.alpha) ** 2) + self.tau2
        if self.rho_base < 0:
            k = np.rint(d)
            if np.any(np.abs(d - k) > 1e-12):
                raise ValueError("negative rho_base needs integer distances")
            return np.power(self.rho_base, k)
        return np.power(self.rho_base, d)


def covariance_at(model: CovarianceModel, d: float) -> float:
    """Correlation rho(d) of the model (multiply by sigma_u2 for the covariance)."""
    return float(model.correlation(d))


@dataclass(frozen=True)
class WorkingModel:
    """Superpopulation model y_ij = m(x_ij; beta) + u_ij.

    ``x`` holds one row per frame person; when None the design row is
    (1, x, y) of the person's coordinates. ``mean`` is "linear" or
    "logistic".
    """

    beta: np.ndarray
    cov: CovarianceModel = field(default_factory=CovarianceModel)
    x: np.ndarray | None = None
    mean: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64).ravel())
        if self.mean not in ("linear", "logistic"):
            raise ValueError(f"unknown mean function {self.mean!r}")

    def design(self, frame) -> np.ndarray:
        if self.x is not None:
            x = np.asarray(self.x, dtype=np.float64)
            if x.ndim == 1:
                x = x[:, None]
        else:
            xy = person_coords(frame)
            x = np.column_stack([np.ones(xy.shape[0]), xy])
        if x.shape != (frame.person_cell.shape[0], self.beta.size):
            raise ValueError(f"x must be (persons, {self.beta.size}); got {x.shape}")
        return x

    def fitted(self, frame) -> np.ndarray:
        """Model expectations y~_ij for every frame person."""
        eta = self.design(frame) @ self.beta
        if self.mean == "logistic":
            return 1.0 / (1.0 + np.exp(-eta))
        return eta


def person_coords(frame) -> np.ndarray:
    """Person locations; residents sit at their cell centroid unless the frame has its own."""
    if getattr(frame, "person_xy", None) is not None:
        return np.asarray(frame.person_xy, dtype=np.float64)
    return frame.coords()[frame.person_cell]


def toy_frame(rows: int, cols: int, sizes, jitter: float = 0.4, seed: int = 0):
    """Small frame with ``sizes[i]`` residents scattered around each cell centre."""
    spec = GridSpec(rows, cols)
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.shape != (spec.n_cells,):
        raise ValueError("sizes must have one entry per cell")
    cell = np.repeat(np.arange(spec.n_cells), sizes)
    rng = np.random.default_rng(seed)
    xy = spec.centroids()[cell] + rng.uniform(-jitter, jitter, (cell.size, 2)) * spec.cell_side
    zeros = np.zeros(cell.size, np.int8)
    return FrameSnapshot(0, spec, cell, zeros, zeros, person_xy=xy)


# ------------------------------------------------------------ first-stage residuals

def dt_residuals(frame, plan: InclusionPlan, model_totals):
    """Balancing residuals eta_i of the model totals for a balanced design.

    The regression runs on the expanded vectors d_i / pi_i against
    Y_i / pi_i with weights pi_i (1 - pi_i); eta_i = Y_i - d_i' phi, so
    eta vanishes whenever the totals are a linear combination of the
    balancing columns. Returns (eta, phi).
    """
    y = np.asarray(model_totals, dtype=np.float64)
    pi = plan.pi
    if y.shape != pi.shape:
        raise ValueError("model_totals must have one entry per cluster")
    if frame is not None and frame.n_clusters != pi.size:
        raise ValueError("plan and frame disagree on the number of clusters")
    live = (pi > 0) & (pi < 1)
    z = np.zeros_like(plan.balance)
    z[pi > 0] = plan.balance[pi > 0] / pi[pi > 0, None]
    c = np.where(live, pi * (1 - pi), 0.0)
    delta = (z * c[:, None]).T @ z
    rhs = (z * c[:, None]).T @ np.where(live, y / np.where(pi > 0, pi, 1.0), 0.0)
    try:
        phi = np.linalg.solve(delta, rhs)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("balancing matrix singular after pruning") from None
    if not np.all(np.isfinite(phi)) or np.linalg.cond(delta) > 1e14:
        raise np.linalg.LinAlgError("balancing matrix singular after pruning")
    eta = np.where(pi > 0, y - plan.balance @ phi, 0.0)
    return eta, phi


# --------------------------------------------------------------- anticipated variance

@dataclass
class AVReport:
    av_total: float
    sigma2: np.ndarray
    F: float
    components: dict
    pi: np.ndarray
    eta: np.ndarray

    def to_csv(self, path) -> None:
        keys = ["av_total", "F", *self.components]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            w.writerow([repr(float(self.av_total)), repr(float(self.F))]
                       + [repr(float(v)) for v in self.components.values()])

    def clusters_to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cluster", "pi", "eta", "sigma2"])
            for i in range(self.pi.size):
                w.writerow([i, repr(float(self.pi[i])), repr(float(self.eta[i])),
                            repr(float(self.sigma2[i]))])


def correlation_sums(frame, cov: CovarianceModel):
    """Pure-correlation pair sums between and within clusters.

    Returns an (M, M) matrix whose off-diagonal entries are
    sum_j sum_k rho(d(ij, lk)) and whose diagonal holds the within-cluster
    sums over j != k. Without person coordinates everyone sits at the
    cell centroid.
    """
    counts = frame.counts.astype(np.float64)
    m = counts.size
    if getattr(frame, "person_xy", None) is None:
        xy = frame.coords()
        d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
        out = np.outer(counts, counts) * cov.correlation(d)
        out[np.diag_indices(m)] = counts * (counts - 1) * cov.correlation(0.0)
        return out
    xy = np.asarray(frame.person_xy, dtype=np.float64)
    cell = frame.person_cell
    out = np.zeros((m, m))
    for i in np.flatnonzero(counts):
        mem = frame.members(int(i))
        d = np.sqrt(((xy[mem, None, :] - xy[None, :, :]) ** 2).sum(-1))
        r = cov.correlation(d)
        r[np.arange(mem.size), mem] = 0.0  # drop j == k
        out[i] = np.bincount(cell, weights=r.sum(axis=0), minlength=m)
    return out


def anticipated_variance(frame, plan: InclusionPlan, joint_pi, model: WorkingModel,
                         n_bar: int, exact: bool = False) -> AVReport:
    """Anticipated variance E_P E_M (Y_hat - Y)^2 of the two-stage HT estimator.

    Clusters smaller than ``n_bar`` are taken whole. With ``exact`` the
    M/(M-H) factor (M counting clusters with 0 < pi < 1) and the SRSWOR
    pair factor N_i (n_i - 1) / (n_i (N_i - 1)) are kept instead of being
    set to 1.
    """
    pi = plan.pi
    m = pi.size
    joint = np.asarray(joint_pi, dtype=np.float64)
    if joint.shape != (m, m):
        raise ValueError(f"joint_pi must be {m}x{m}")
    if frame.n_clusters != m:
        raise ValueError("plan and frame disagree on the number of clusters")
    if not np.allclose(joint, joint.T, atol=1e-12):
        raise ValueError("joint_pi must be symmetric")
    if not np.allclose(np.diag(joint), pi, atol=1e-9):
        raise ValueError("joint_pi diagonal must equal pi")
    counts = frame.counts.astype(np.float64)
    if np.any((counts > 0) & (pi <= 0)):
        raise ValueError("every nonempty cluster needs pi > 0")
    s2 = model.cov.sigma_u2

    fitted = model.fitted(frame)
    totals = np.bincount(frame.person_cell, weights=fitted, minlength=m)
    eta, _ = dt_residuals(frame, plan, totals)
    live = (pi > 0) & (pi < 1)
    c_dt = live.sum() / (live.sum() - plan.H) if exact and live.sum() > plan.H else 1.0

    sq = np.bincount(frame.person_cell, weights=fitted ** 2, minlength=m)
    ss = np.maximum(sq - np.where(counts > 0, totals ** 2 / np.maximum(counts, 1), 0.0), 0.0)
    var_within = np.where(counts > 1, ss / np.maximum(counts - 1, 1), 0.0)

    n_i = np.minimum(float(n_bar), counts)
    safe_n = np.maximum(n_i, 1.0)
    srswor = var_within * counts * (counts - n_i) / safe_n
    unit = counts ** 2 * s2 / safe_n
    pair_factor = np.ones(m)
    if exact:
        big = counts > 1
        pair_factor[big] = counts[big] * (n_i[big] - 1) / (n_i[big] * (counts[big] - 1))

    rho = correlation_sums(frame, model.cov)
    rho_ii = np.diag(rho).copy()
    rho_off = rho - np.diag(rho_ii)
    safe_pi = np.where(pi > 0, pi, 1.0)
    between = (joint / safe_pi[None, :] * rho_off).sum(axis=1) * s2

    sigma2 = c_dt * eta ** 2 + srswor + unit + pair_factor * s2 * rho_ii + between
    sigma2 = np.where(counts > 0, sigma2, 0.0)
    F = float((c_dt * eta ** 2 + counts * s2 + s2 * rho_ii + s2 * rho_off.sum(axis=1)).sum())
    inv = np.where(pi > 0, 1.0 / safe_pi, 0.0)
    components = {
        "eta2": float(c_dt * ((inv - 1) * eta ** 2).sum()),
        "srswor_term": float((inv * srswor).sum()),
        "unit_var_term": float((inv * unit).sum() - (counts * s2).sum()),
        "within_corr_term": float(s2 * ((inv * pair_factor - 1) * rho_ii).sum()),
        "between_corr_term": float(s2 * (((joint * inv[:, None] * inv[None, :]) - 1) * rho_off).sum()),
    }
    av = float((inv * sigma2).sum() - F)
    return AVReport(av, sigma2, F, components, pi.copy(), eta)


def empirical_joint_probs(plan: InclusionPlan, n_draws: int, seed: int) -> np.ndarray:
    """Monte Carlo first- and second-order inclusion frequencies (M x M)."""
    m = plan.pi.size
    joint = np.zeros((m, m), dtype=np.int64)
    zeros = np.zeros(m, dtype=np.int64)
    K.replicate(*plan.kernel_args(), replicate_seeds(seed, n_draws), zeros, zeros, 0,
                np.zeros((0, m), np.bool_), joint)
    return joint / n_draws


# ------------------------------------------------------------------ efficiency

def efficient_av(frame_or_counts, model, m: int, n_bar: int, pi=None) -> float:
    """AV of a fully spread and balanced design with PPS (or given) probabilities.

    sum_i N_i^2 sigma_u^2 / (n_bar pi_i) minus the model variance floor
    sum_i N_i sigma_u^2 of the person-level residuals.
    """
    counts = np.asarray(getattr(frame_or_counts, "counts", frame_or_counts), dtype=np.float64)
    s2 = model.sigma_u2 if isinstance(model, CovarianceModel) else model.cov.sigma_u2
    if pi is None:
        pi = pps_probabilities(counts, m).pi
    pi = np.asarray(pi, dtype=np.float64)
    nz = counts > 0
    return float((counts[nz] ** 2 * s2 / (n_bar * pi[nz])).sum() - (counts[nz] * s2).sum())


class SideConditionError(ValueError):
    def __init__(self, clusters):
        self.clusters = np.asarray(clusters, dtype=np.int64)
        super().__init__(f"PPS optimum exceeds 1 for clusters {self.clusters.tolist()}")


def optimal_first_stage_probs(counts, m: int, sigma_u: float, n_bar: int) -> np.ndarray:
    """Minimiser of the efficient AV under sum(pi) = m, i.e. PPS.

    The sigma_u / sqrt(n_bar) factor cancels. Raises SideConditionError
    naming the clusters whose unconstrained optimum exceeds 1.
    """
    counts = np.asarray(counts, dtype=np.float64)
    scale = sigma_u / np.sqrt(n_bar) if sigma_u > 0 else 1.0
    raw = m * counts * scale / (counts * scale).sum()
    over = np.flatnonzero(raw > 1.0 + 1e-12)
    if over.size:
        raise SideConditionError(over)
    return raw


def pps_optimality_gap(counts, m: int, sigma_u2: float, n_bar: int, step: float = 0.05,
                       n_directions: int = 200, seed: int = 0) -> float:
    """Smallest relative change of the efficient AV over random perturbations.

    Each perturbation moves the PPS vector by +-step along a random
    direction with zero sum (so sum(pi) = m is kept) and stays inside
    (0, 1]. A nonnegative result means no perturbation beat PPS.
    """
    counts = np.asarray(counts, dtype=np.float64)
    cov = CovarianceModel("gaussian", sigma_u2)
    pi0 = optimal_first_stage_probs(counts, m, np.sqrt(sigma_u2), n_bar)
    base = efficient_av(counts, cov, m, n_bar, pi0)
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n_directions):
        u = rng.standard_normal(counts.size)
        u -= u.mean()
        u /= np.abs(u).max()
        for s in (-step, step):
            p = pi0 + s * u
            if np.any(p <= 0) or np.any(p > 1):
                continue
            worst = min(worst, (efficient_av(counts, cov, m, n_bar, p) - base) / abs(base))
    return float(worst)
