"""Masked unbalanced entropic coupling solver on sparse supports.

Solves ``min_{gamma >= 0 on mask}  sum C_ij gamma_ij + KL(gamma 1 || w0)
+ KL(gamma^T 1 || w1)`` with the generalized KL ``sum a ln(a/b) - a + b`` and
the convention ``0 ln 0 = 0``. The algorithm is log-domain scaling iteration
with KL marginal penalties, stabilized by an auxiliary entropic term that is
annealed geometrically; every reduction runs over stored entries only, so
masked-out pairs cost nothing.

The entropic term is ``eps * KL(gamma || w0 (x) w1 / sqrt(sum w0 sum w1))``.
That reference measure makes the iteration exactly conjugate under joint
rescaling of the marginals, so the optimal plan scales linearly with them at
every eps (not just in the eps -> 0 limit).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .geometry import cos_clamped


class SolverConvergenceWarning(RuntimeWarning):
    """Emitted when the final annealing stage hits max_iters."""


@dataclass(frozen=True)
class SolverOptions:
    """Tuning knobs for the annealed masked solver.

    marginal_coef multiplies both KL marginal penalties; 1.0 is the canonical
    objective above, large values approach hard marginal constraints.
    row_floor of None means extraction uses 1e-12 * total_mass / n_rows.
    """

    final_eps: float = 1e-3
    tolerance: float = 1e-9
    max_iters: int = 10_000
    anneal_ratio: float = 0.2
    stage_tol_factor: float = 0.02
    marginal_coef: float = 1.0
    row_floor: float | None = None


class SupportMask:
    """Sparse set of admissible (row, col) pairs, stored sorted by (row, col)."""

    __slots__ = ("rows", "cols", "ii", "jj")

    def __init__(self, rows: int, cols: int, ii, jj, _trusted: bool = False):
        self.rows = int(rows)
        self.cols = int(cols)
        ii = np.asarray(ii, dtype=np.int64)
        jj = np.asarray(jj, dtype=np.int64)
        if ii.shape != jj.shape or ii.ndim != 1:
            raise ValueError("index arrays must be 1-D and equal length")
        if not _trusted:
            if ii.size and (
                ii.min() < 0 or ii.max() >= rows or jj.min() < 0 or jj.max() >= cols
            ):
                raise ValueError("mask indices out of range")
            order = np.lexsort((jj, ii))
            ii, jj = ii[order], jj[order]
            if ii.size:
                dup = (ii[1:] == ii[:-1]) & (jj[1:] == jj[:-1])
                if np.any(dup):
                    raise ValueError("duplicate mask entries")
        self.ii = ii
        self.jj = jj

    @classmethod
    def full(cls, rows: int, cols: int) -> "SupportMask":
        ii = np.repeat(np.arange(rows, dtype=np.int64), cols)
        jj = np.tile(np.arange(cols, dtype=np.int64), rows)
        return cls(rows, cols, ii, jj, _trusted=True)

    @classmethod
    def from_dense(cls, dense) -> "SupportMask":
        dense = np.asarray(dense)
        ii, jj = np.nonzero(dense)
        return cls(dense.shape[0], dense.shape[1], ii, jj, _trusted=True)

    @property
    def nnz(self) -> int:
        return self.ii.size

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=bool)
        out[self.ii, self.jj] = True
        return out

    def same_support(self, other: "SupportMask") -> bool:
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.nnz == other.nnz
            and np.array_equal(self.ii, other.ii)
            and np.array_equal(self.jj, other.jj)
        )


@dataclass
class CostMatrix:
    """Per-entry costs over a support mask; +inf marks unusable pairs."""

    mask: SupportMask
    values: np.ndarray


@dataclass
class SparseCoupling:
    """Non-negative mass values aligned with a support mask."""

    mask: SupportMask
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mask.nnz,):
            raise ValueError("values must align with the mask entries")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("coupling values must be finite and non-negative")

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.mask.ii, weights=self.values, minlength=self.mask.rows)

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.mask.jj, weights=self.values, minlength=self.mask.cols)

    def total_mass(self) -> float:
        return float(self.values.sum())

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.mask.rows, self.mask.cols))
        out[self.mask.ii, self.mask.jj] = self.values
        return out


@dataclass
class SemiCoupling:
    """Starting/ending normalizations of a coupling, on a shared pattern."""

    gamma0: SparseCoupling
    gamma1: SparseCoupling
    death_rows: np.ndarray
    birth_cols: np.ndarray


def build_cost(centroids0, centroids1, mask: SupportMask, delta: float) -> CostMatrix:
    """Angular transport cost -2 ln cos(d / (2 delta)) on the mask entries.

    Pairs separated by pi * delta or more get +inf (the clamped cosine hits
    zero there).
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    c0 = np.asarray(centroids0, dtype=float)
    c1 = np.asarray(centroids1, dtype=float)
    if c0.shape[1] != c1.shape[1]:
        raise ValueError("centroid dimensions differ")
    d = np.linalg.norm(c0[mask.ii] - c1[mask.jj], axis=1)
    ang = d / (2.0 * delta)
    with np.errstate(divide="ignore"):
        vals = np.where(ang >= np.pi / 2, np.inf, -2.0 * np.log(cos_clamped(ang)))
    return CostMatrix(mask=mask, values=vals)


def _segments(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(present values, segment starts, per-entry segment id) for sorted keys."""
    present, starts = np.unique(keys, return_index=True)
    seg_id = np.searchsorted(present, keys)
    return present, starts, seg_id


def _segment_logsumexp(vals, starts, seg_id):
    top = np.maximum.reduceat(vals, starts)
    safe = np.where(np.isfinite(top), top, 0.0)
    sums = np.add.reduceat(np.exp(vals - safe[seg_id]), starts)
    return np.where(np.isfinite(top), safe + np.log(sums), -np.inf)


def _anneal_schedule(final_eps: float, ratio: float) -> list[float]:
    if not (0 < final_eps <= 1.0):
        raise ValueError("final_eps must lie in (0, 1]")
    if not (0 < ratio < 1):
        raise ValueError("anneal_ratio must lie in (0, 1)")
    out = []
    eps = 1.0
    while eps > final_eps * (1 + 1e-12):
        out.append(eps)
        eps *= ratio
    out.append(final_eps)
    return out


def solve_masked_oet(
    cost: CostMatrix,
    w0,
    w1,
    mask: SupportMask | None = None,
    options: SolverOptions | None = None,
) -> SparseCoupling:
    """Minimize the masked objective; returns a coupling on cost.mask.

    An empty (or fully infinite-cost) support returns the zero coupling,
    which is the optimum there. Deterministic: fixed entry order, single
    threaded numpy reductions.
    """
    options = options or SolverOptions()
    if mask is not None and not mask.same_support(cost.mask):
        raise ValueError("mask does not match the cost support")
    mask = cost.mask
    w0 = np.asarray(w0, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    if w0.shape != (mask.rows,) or w1.shape != (mask.cols,):
        raise ValueError("marginal lengths do not match the mask shape")
    if np.any(w0 < 0) or np.any(w1 < 0) or w0.max(initial=0) <= 0 or w1.max(initial=0) <= 0:
        raise ValueError("marginals must be non-negative with a positive entry each")

    # Entries with infinite cost or zero endpoint weight can never carry mass.
    active = np.isfinite(cost.values) & (w0[mask.ii] > 0) & (w1[mask.jj] > 0)
    if not np.any(active):
        return SparseCoupling(mask, np.zeros(mask.nnz))

    idx = np.nonzero(active)[0]
    ii, jj, c = mask.ii[idx], mask.jj[idx], cost.values[idx]
    rows_p, row_starts, row_seg = _segments(ii)
    col_order = np.lexsort((ii, jj))
    ii_c, jj_c, c_c = ii[col_order], jj[col_order], c[col_order]
    cols_p, col_starts, col_seg = _segments(jj_c)

    with np.errstate(divide="ignore"):
        lw0, lw1 = np.log(w0), np.log(w1)
    ln_scale = 0.5 * (np.log(w0.sum()) + np.log(w1.sum()))
    rho = options.marginal_coef
    if rho <= 0:
        raise ValueError("marginal_coef must be positive")

    f = np.zeros(mask.rows)
    g = np.zeros(mask.cols)
    schedule = _anneal_schedule(options.final_eps, options.anneal_ratio)
    converged = True
    for stage, eps in enumerate(schedule):
        fi = rho / (rho + eps)
        last = stage == len(schedule) - 1
        stage_tol = options.tolerance if last else max(
            options.tolerance, options.stage_tol_factor * schedule[stage + 1]
        )
        converged = False
        for _ in range(options.max_iters):
            vals = (g[jj] - c) / eps + lw1[jj]
            f_new = fi * eps * (ln_scale - _segment_logsumexp(vals, row_starts, row_seg))
            change = np.max(np.abs(f_new - f[rows_p]))
            f[rows_p] = f_new
            vals = (f[ii_c] - c_c) / eps + lw0[ii_c]
            g_new = fi * eps * (ln_scale - _segment_logsumexp(vals, col_starts, col_seg))
            change = max(change, np.max(np.abs(g_new - g[cols_p])))
            g[cols_p] = g_new
            if change < stage_tol:
                converged = True
                break
        residual = change
    if not converged:
        warnings.warn(
            f"final annealing stage stopped at max_iters={options.max_iters} "
            f"with residual {residual:.3e} > tolerance {options.tolerance:.1e}",
            SolverConvergenceWarning,
            stacklevel=2,
        )

    eps = schedule[-1]
    plan = np.exp((f[ii] + g[jj] - c) / eps + lw0[ii] + lw1[jj] - ln_scale)
    values = np.zeros(mask.nnz)
    values[idx] = plan
    return SparseCoupling(mask, values)


def generalized_kl(a, b) -> float:
    """sum a ln(a/b) - a + b with 0 ln 0 = 0; +inf where a > 0 but b = 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pos = a > 0
    if np.any(b[pos] == 0):
        return float("inf")
    with np.errstate(divide="ignore"):
        terms = a[pos] * np.log(a[pos] / b[pos])
    return float(terms.sum() - a.sum() + b.sum())


def oet_objective(gamma: SparseCoupling, cost: CostMatrix, w0, w1) -> float:
    """Objective value of a coupling; +inf if mass sits on an infinite cost."""
    if not gamma.mask.same_support(cost.mask):
        raise ValueError("coupling and cost are on different supports")
    w0 = np.asarray(w0, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    carrying = gamma.values > 0
    if np.any(np.isinf(cost.values[carrying])):
        return float("inf")
    linear = float(gamma.values[carrying] @ cost.values[carrying])
    return (
        linear
        + generalized_kl(gamma.row_sums(), w0)
        + generalized_kl(gamma.col_sums(), w1)
    )


def extract_semi_coupling(
    gamma: SparseCoupling,
    mu0,
    mu1,
    options: SolverOptions | None = None,
) -> SemiCoupling:
    """Row- and column-normalize a coupling onto the prescribed marginals.

    gamma0 rescales each row to mu0, gamma1 each column to mu1. Rows and
    columns whose coupled mass falls below the floor become death_rows /
    birth_cols and are dropped from the shared sparsity pattern.
    """
    options = options or SolverOptions()
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    mask = gamma.mask
    if mu0.shape != (mask.rows,) or mu1.shape != (mask.cols,):
        raise ValueError("marginal lengths do not match the coupling shape")
    floor_r = options.row_floor if options.row_floor is not None else 1e-12 * mu0.sum() / max(mask.rows, 1)
    floor_c = options.row_floor if options.row_floor is not None else 1e-12 * mu1.sum() / max(mask.cols, 1)
    # Dropping entries that sit in a dead row or birth column shrinks the
    # surviving rows/columns, which can push more of them under the floor;
    # iterate until the alive sets stabilize so normalization uses exactly
    # the mass that remains on the shared pattern.
    alive_row = gamma.row_sums() >= floor_r
    alive_col = gamma.col_sums() >= floor_c
    while True:
        keep = alive_row[mask.ii] & alive_col[mask.jj]
        r = np.bincount(mask.ii[keep], weights=gamma.values[keep], minlength=mask.rows)
        s = np.bincount(mask.jj[keep], weights=gamma.values[keep], minlength=mask.cols)
        row_next = alive_row & (r >= floor_r)
        col_next = alive_col & (s >= floor_c)
        if np.array_equal(row_next, alive_row) and np.array_equal(col_next, alive_col):
            break
        alive_row, alive_col = row_next, col_next

    shared = SupportMask(mask.rows, mask.cols, mask.ii[keep], mask.jj[keep], _trusted=True)
    vals = gamma.values[keep]
    with np.errstate(invalid="ignore", divide="ignore"):
        row_scale = np.where(alive_row, mu0 / np.where(r > 0, r, 1.0), 0.0)
        col_scale = np.where(alive_col, mu1 / np.where(s > 0, s, 1.0), 0.0)
    g0 = SparseCoupling(shared, vals * row_scale[shared.ii])
    g1 = SparseCoupling(shared, vals * col_scale[shared.jj])
    return SemiCoupling(
        gamma0=g0,
        gamma1=g1,
        death_rows=np.nonzero(~alive_row)[0],
        birth_cols=np.nonzero(~alive_col)[0],
    )


def write_coupling(path, coupling: SparseCoupling) -> None:
    """Coordinate-triplet text format: header `rows cols nnz`, lines `i j value`."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{coupling.mask.rows} {coupling.mask.cols} {coupling.mask.nnz}\n")
        for i, j, v in zip(coupling.mask.ii, coupling.mask.jj, coupling.values):
            fh.write(f"{i} {j} {v:.17g}\n")


def read_coupling(path) -> SparseCoupling:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: malformed header")
        rows, cols, nnz = (int(x) for x in header)
        ii = np.empty(nnz, dtype=np.int64)
        jj = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        for k in range(nnz):
            parts = fh.readline().split()
            if len(parts) != 3:
                raise ValueError(f"{path}: truncated at entry {k}")
            ii[k], jj[k], vals[k] = int(parts[0]), int(parts[1]), float(parts[2])
    mask = SupportMask(rows, cols, ii, jj)
    order = np.lexsort((jj, ii))
    return SparseCoupling(mask, vals[order])
