"""Synthetic resident populations on a regular lattice, plus Moran's I."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg


@dataclass(frozen=True)
class GridSpec:
    rows: int = 20
    cols: int = 20
    cell_side: float = 1.0

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2 rows and 2 columns")
        if self.cell_side <= 0:
            raise ValueError("cell_side must be positive")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def flat(self, row: int, col: int) -> int:
        return row * self.cols + col

    def unflat(self, index: int) -> tuple[int, int]:
        return divmod(int(index), self.cols)

    def centroids(self) -> np.ndarray:
        """(M, 2) array of cell centres as (x, y), row-major."""
        r, c = np.divmod(np.arange(self.n_cells), self.cols)
        return np.column_stack([(c + 0.5) * self.cell_side, (r + 0.5) * self.cell_side])

    def central_cells(self) -> np.ndarray:
        """Flat indices of the 2x2 block (or single row/col pair) at the map centre."""
        rr = sorted({(self.rows - 1) // 2, self.rows // 2})
        cc = sorted({(self.cols - 1) // 2, self.cols // 2})
        return np.array([self.flat(r, c) for r in rr for c in cc], dtype=np.int64)


@dataclass(frozen=True)
class PopulationGrid:
    spec: GridSpec
    counts: np.ndarray
    rho_target: float = 0.0

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (self.spec.n_cells,):
            raise ValueError("counts must have one entry per cell")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def as_matrix(self) -> np.ndarray:
        return self.counts.reshape(self.spec.rows, self.spec.cols)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row", "col", "count"])
            for i, n in enumerate(self.counts):
                r, c = self.spec.unflat(i)
                writer.writerow([r, c, int(n)])

    @classmethod
    def from_csv(cls, path, cell_side: float = 1.0, rho_target: float = 0.0) -> "PopulationGrid":
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        rows, cols = int(data[:, 0].max()) + 1, int(data[:, 1].max()) + 1
        spec = GridSpec(rows, cols, cell_side)
        counts = np.zeros(spec.n_cells, dtype=np.int64)
        counts[data[:, 0] * cols + data[:, 1]] = data[:, 2]
        return cls(spec, counts, rho_target)


@dataclass(frozen=True)
class SpatialWeights:
    scheme: str
    row_standardized: bool
    matrix: sparse.csr_matrix

    @property
    def n_cells(self) -> int:
        return self.matrix.shape[0]

    def neighbour_counts(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)


_OFFSETS = {
    "rook": [(-1, 0), (1, 0), (0, -1), (0, 1)],
    "queen": [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
}


def build_weight_matrix(spec: GridSpec, scheme: str = "queen", row_standardized: bool = True) -> SpatialWeights:
    """Contiguity weights on the lattice (rook = 4-neighbourhood, queen = 8)."""
    try:
        offsets = _OFFSETS[scheme]
    except KeyError:
        raise ValueError(f"unknown weights scheme {scheme!r}; expected 'rook' or 'queen'") from None
    src, dst = [], []
    for r in range(spec.rows):
        for c in range(spec.cols):
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if 0 <= rr < spec.rows and 0 <= cc < spec.cols:
                    src.append(spec.flat(r, c))
                    dst.append(spec.flat(rr, cc))
    vals = np.ones(len(src))
    w = sparse.csr_matrix((vals, (src, dst)), shape=(spec.n_cells, spec.n_cells))
    if row_standardized:
        rs = np.asarray(w.sum(axis=1)).ravel()
        rs[rs == 0] = 1.0
        w = sparse.diags(1.0 / rs) @ w
    return SpatialWeights(scheme, row_standardized, w.tocsr())


def morans_i(values, weights: SpatialWeights) -> float:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.shape[0] != weights.n_cells:
        raise ValueError("values must have one entry per cell")
    z = x - x.mean()
    denom = float(z @ z)
    if denom <= 1e-12 * max(1.0, float(np.abs(x).max()) ** 2):
        raise ValueError("Moran's I undefined for constant field")
    w = weights.matrix
    s0 = float(w.sum())
    return float(x.size / s0 * (z @ (w @ z)) / denom)


def sar_field(spec: GridSpec, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Latent field z = (I - rho W)^-1 eps with row-standardised rook W."""
    w = build_weight_matrix(spec, "rook", row_standardized=True).matrix
    system = (sparse.identity(spec.n_cells, format="csc") - rho * w).tocsc()
    eps = rng.standard_normal(spec.n_cells)
    try:
        lu = splinalg.splu(system)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError("autoregressive system singular") from exc
    z = lu.solve(eps)
    if not np.all(np.isfinite(z)):
        raise np.linalg.LinAlgError("autoregressive system singular")
    return z


def generate_population(spec: GridSpec, rho: float, total: int, rng_seed: int) -> PopulationGrid:
    """Spatially autocorrelated resident counts summing exactly to ``total``.

    Cell shares are proportional to exp(z) for a SAR latent field z; the
    counts are one multinomial draw with those shares.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    if total < 1:
        raise ValueError("total must be at least 1")
    rng = np.random.default_rng(rng_seed)
    z = sar_field(spec, rho, rng)
    p = np.exp(z - z.max())
    p /= p.sum()
    counts = rng.multinomial(total, p)
    return PopulationGrid(spec, counts, rho)
