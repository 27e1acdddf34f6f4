"""Evaluation metrics: objective gap, assignment accuracy, exact W1, mass error.

All metrics are pure functions; the report type carries the standard summary
(gap, three accuracy levels, wall time) and serializes to key = value lines
plus an appendable tab-separated results row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix, vstack

from .hierarchy import DiscreteMeasure
from .solver import CostMatrix, SparseCoupling, generalized_kl, oet_objective


@dataclass
class CouplingReport:
    """Benchmark summary; objective_gap is a ratio, printed as percent."""

    objective_gap: float
    point_acc: float
    micro_acc: float
    macro_acc: float
    wall_time_seconds: float

    def to_lines(self) -> list[str]:
        return [
            f"objective_gap_percent = {100.0 * self.objective_gap:.6g}",
            f"point_acc = {self.point_acc:.6g}",
            f"micro_acc = {self.micro_acc:.6g}",
            f"macro_acc = {self.macro_acc:.6g}",
            f"wall_time_seconds = {self.wall_time_seconds:.6g}",
        ]


RESULTS_HEADER = "objective_gap\tpoint_acc\tmicro_acc\tmacro_acc\twall_time_seconds"


def append_results_row(path, report: CouplingReport) -> None:
    """Append one machine-readable row, writing the header on first use."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            has_header = fh.readline().strip() == RESULTS_HEADER
    except FileNotFoundError:
        has_header = False
    with open(path, "a", encoding="ascii") as fh:
        if not has_header:
            fh.write(RESULTS_HEADER + "\n")
        fh.write(
            f"{report.objective_gap:.12g}\t{report.point_acc:.12g}\t"
            f"{report.micro_acc:.12g}\t{report.macro_acc:.12g}\t"
            f"{report.wall_time_seconds:.6g}\n"
        )


def objective_gap(
    gamma: SparseCoupling,
    gamma_truth: SparseCoupling,
    cost: CostMatrix,
    w0,
    w1,
) -> float:
    """(objective(gamma) - objective(truth)) / scale, as a plain ratio.

    The scale is the truth objective, falling back to total marginal mass
    when the truth objective is zero (it is exactly zero for a cost-free
    perfect pairing with matched marginals).
    """
    if not (
        gamma.mask.rows == gamma_truth.mask.rows
        and gamma.mask.cols == gamma_truth.mask.cols
        and cost.mask.rows == gamma.mask.rows
        and cost.mask.cols == gamma.mask.cols
    ):
        raise ValueError("couplings and cost live on different index spaces")
    obj = _objective_on_own_support(gamma, cost, w0, w1)
    obj_truth = _objective_on_own_support(gamma_truth, cost, w0, w1)
    scale = obj_truth if obj_truth != 0 else float(np.sum(w0) + np.sum(w1))
    return (obj - obj_truth) / scale


def _objective_on_own_support(gamma: SparseCoupling, cost: CostMatrix, w0, w1) -> float:
    """Objective for a coupling whose support may differ from the cost mask.

    Entries outside the cost mask are treated as infinite cost (the mask is
    exactly the finite-cost region by construction). Lookup is by binary
    search on flattened (row, col) keys, which are strictly increasing for a
    lexsorted duplicate-free mask.
    """
    if gamma.mask.same_support(cost.mask):
        return oet_objective(gamma, cost, w0, w1)
    cols = np.int64(cost.mask.cols)
    cost_keys = cost.mask.ii.astype(np.int64) * cols + cost.mask.jj
    keys = gamma.mask.ii.astype(np.int64) * cols + gamma.mask.jj
    pos = np.searchsorted(cost_keys, keys)
    inside = pos < cost_keys.size
    inside[inside] = cost_keys[pos[inside]] == keys[inside]
    c = np.full(keys.size, np.inf)
    c[inside] = cost.values[pos[inside]]
    carrying = gamma.values > 0
    if np.any(np.isinf(c[carrying])):
        return float("inf")
    linear = float(gamma.values[carrying] @ c[carrying])
    return (
        linear
        + generalized_kl(gamma.row_sums(), np.asarray(w0, float))
        + generalized_kl(gamma.col_sums(), np.asarray(w1, float))
    )


def row_argmax(gamma: SparseCoupling) -> np.ndarray:
    """Per-row argmax column, ties to the smallest column, -1 for zero rows."""
    mask, v = gamma.mask, gamma.values
    row_max = np.zeros(mask.rows)
    np.maximum.at(row_max, mask.ii, v)
    cand = (v > 0) & (v == row_max[mask.ii])
    sentinel = np.iinfo(np.int64).max
    best = np.full(mask.rows, sentinel, dtype=np.int64)
    np.minimum.at(best, mask.ii[cand], mask.jj[cand])
    out = np.where(best == sentinel, -1, best)
    return out


def assignment_accuracy(
    gamma: SparseCoupling,
    truth_pairs,
    labels_micro,
    labels_macro,
    source_weights=None,
) -> tuple[float, float, float]:
    """Point / micro / macro accuracy of the hard row assignment.

    truth_pairs[i] is the ground-truth target index of source i; the label
    arrays are target-side. Rows with no mass are wrong at every level.
    Fractions are weighted by source_weights (uniform when omitted).
    """
    truth = np.asarray(truth_pairs, dtype=np.int64)
    n = gamma.mask.rows
    if truth.shape != (n,):
        raise ValueError("truth_pairs must give one partner per source element")
    labels_micro = np.asarray(labels_micro)
    labels_macro = np.asarray(labels_macro)
    w = np.ones(n) if source_weights is None else np.asarray(source_weights, dtype=float)
    total = w.sum()
    assigned = row_argmax(gamma)
    ok = assigned >= 0
    point = (assigned == truth) & ok
    micro = np.zeros(n, dtype=bool)
    macro = np.zeros(n, dtype=bool)
    micro[ok] = labels_micro[assigned[ok]] == labels_micro[truth[ok]]
    macro[ok] = labels_macro[assigned[ok]] == labels_macro[truth[ok]]
    return (
        float(w[point].sum() / total),
        float(w[micro].sum() / total),
        float(w[macro].sum() / total),
    )


def truth_from_labels(source_labels, target_labels) -> np.ndarray:
    """truth[i] = target index carrying the same label; labels must be unique."""
    src = np.asarray([str(v) for v in source_labels])
    tgt = np.asarray([str(v) for v in target_labels])
    order = np.argsort(tgt)
    pos = np.searchsorted(tgt[order], src)
    if np.any(pos >= tgt.size) or np.any(tgt[order][np.minimum(pos, tgt.size - 1)] != src):
        raise ValueError("some source labels have no target partner")
    uniq, counts = np.unique(tgt, return_counts=True)
    if np.any(counts > 1):
        raise ValueError("target labels are not unique")
    return order[pos]


@dataclass(frozen=True)
class W1Options:
    max_support: int = 512
    seed: int = 0


def w1_distance(a: DiscreteMeasure, b: DiscreteMeasure,
                options: W1Options | None = None) -> float:
    """Exact 1-Wasserstein distance with Euclidean ground cost.

    Both measures are normalized to probabilities. Supports larger than
    options.max_support are reduced by weighted subsampling without
    replacement (fixed seed, then uniform weights). Equal-size uniform
    instances go through optimal assignment; the general case solves the
    transport linear program exactly.
    """
    options = options or W1Options()
    xa, pa = _normalized(a, options)
    xb, pb = _normalized(b, options)
    dist = np.linalg.norm(xa[:, None, :] - xb[None, :, :], axis=2)
    n, m = dist.shape
    if n == m and np.allclose(pa, 1.0 / n) and np.allclose(pb, 1.0 / m):
        rows, cols = linear_sum_assignment(dist)
        return float(dist[rows, cols].sum() / n)
    c = dist.reshape(-1)
    row_ind = np.repeat(np.arange(n), m)
    col_ind = np.tile(np.arange(m), n)
    data = np.ones(n * m)
    a_rows = coo_matrix((data, (row_ind, np.arange(n * m))), shape=(n, n * m))
    # One marginal constraint is redundant; dropping it keeps the LP full rank.
    keep = col_ind < m - 1
    a_cols = coo_matrix((data[keep], (col_ind[keep], np.arange(n * m)[keep])),
                        shape=(max(m - 1, 0), n * m))
    a_eq = vstack([a_rows, a_cols])
    b_eq = np.concatenate([pa, pb[:-1]])
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _normalized(measure: DiscreteMeasure, options: W1Options):
    w = measure.weights
    total = w.sum()
    if total <= 0:
        raise ValueError("measure has no mass")
    p = w / total
    pts = measure.points
    if pts.shape[0] > options.max_support:
        rng = np.random.default_rng(options.seed)
        keep = rng.choice(pts.shape[0], size=options.max_support, replace=False, p=p)
        pts = pts[keep]
        p = np.full(options.max_support, 1.0 / options.max_support)
    return pts, p


def relative_mass_error(predicted, target: DiscreteMeasure) -> float:
    """|predicted total mass - target total mass| / target total mass."""
    pred_total = float(np.sum(getattr(predicted, "masses", getattr(predicted, "weights", predicted))))
    tgt_total = float(target.weights.sum())
    if tgt_total <= 0:
        raise ValueError("target has no mass")
    return abs(pred_total - tgt_total) / tgt_total
