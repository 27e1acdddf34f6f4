"""Multiscale weighted measures and coarse-to-fine coupling.

A hierarchy groups a weighted point set into nested clusterings, level 1
(coarsest) through L (finest, one singleton per point). Couplings are solved
level by level: each level's admissible support is the AND of an optional
binary prior with the pairs whose parent-level transition probability clears
a threshold. The finest level is either solved explicitly on the propagated
sparse support or handled implicitly by lifting the level-(L-1) coupling with
within-block product weights; the implicit route never materializes a
points-by-points matrix.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .solver import (
    CostMatrix,
    SemiCoupling,
    SolverConvergenceWarning,
    SolverOptions,
    SparseCoupling,
    SupportMask,
    build_cost,
    extract_semi_coupling,
    solve_masked_oet,
)


class EmptyMaskError(ValueError):
    """A level's admissible set is empty: prior and propagation exclude everything."""


@dataclass
class DiscreteMeasure:
    """Weighted point cloud; weights are unnormalized counts, not probabilities."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.points.shape[0] != self.weights.shape[0]:
            raise ValueError("points and weights length mismatch")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")
        if np.any(self.weights < 0) or self.weights.max(initial=0) <= 0:
            raise ValueError("weights must be non-negative with a positive entry")

    @property
    def size(self) -> int:
        return self.weights.shape[0]


class HierarchyView:
    """Nested clusterings of one measure, levels 1..L with L the singletons.

    Per level (list index l-1): assignments maps each element to its cluster,
    label_values holds the original sorted label codes, centroids are
    mass-weighted means, weights are member mass sums, and parents maps each
    cluster to its cluster at the level above (parents[0] is None).
    """

    def __init__(self, measure: DiscreteMeasure, assignments: list[np.ndarray],
                 label_values: list[np.ndarray]):
        self.measure = measure
        self.assignments = assignments
        self.label_values = label_values
        self.levels = len(assignments)
        self.centroids: list[np.ndarray] = []
        self.weights: list[np.ndarray] = []
        self.parents: list[np.ndarray | None] = [None]
        for l, codes in enumerate(assignments):
            k = len(label_values[l])
            w = np.bincount(codes, weights=measure.weights, minlength=k)
            cent = np.zeros((k, measure.points.shape[1]))
            np.add.at(cent, codes, measure.weights[:, None] * measure.points)
            # Zero-weight clusters fall back to the plain member mean so the
            # centroid stays finite; they carry no mass either way.
            counts = np.bincount(codes, minlength=k)
            plain = np.zeros_like(cent)
            np.add.at(plain, codes, measure.points)
            safe_w = np.where(w > 0, w, 1.0)
            safe_n = np.maximum(counts, 1)
            self.centroids.append(
                np.where((w > 0)[:, None], cent / safe_w[:, None], plain / safe_n[:, None])
            )
            self.weights.append(w)
            if l > 0:
                pa = np.full(k, -1, dtype=np.int64)
                pa[codes] = assignments[l - 1]
                self.parents.append(pa)

    def cluster_count(self, level: int) -> int:
        return len(self.label_values[level - 1])

    def members(self, level: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Element indices grouped by level cluster: (order, starts, counts)."""
        codes = self.assignments[level - 1]
        k = self.cluster_count(level)
        order = np.argsort(codes, kind="stable")
        counts = np.bincount(codes, minlength=k)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        return order, starts, counts


def build_hierarchy(measure: DiscreteMeasure, labels) -> HierarchyView:
    """Derive a hierarchy from per-level label columns (coarsest first).

    Label codes are compared as strings, so integer and string columns behave
    identically. Nesting must be consistent: every fine cluster's members must
    agree on the coarser label, otherwise the offending level and label are
    reported.
    """
    cols = np.asarray(labels)
    if cols.ndim == 1:
        cols = cols[:, None]
    if cols.shape[0] != measure.size:
        raise ValueError("label rows do not match the measure size")
    assignments: list[np.ndarray] = []
    label_values: list[np.ndarray] = []
    for l in range(cols.shape[1]):
        col = np.asarray([str(v) for v in cols[:, l]])
        values, codes = np.unique(col, return_inverse=True)
        assignments.append(codes.astype(np.int64))
        label_values.append(values)
        if l > 0:
            parent_of = {}
            for fine, coarse in zip(codes, assignments[l - 1]):
                seen = parent_of.setdefault(fine, coarse)
                if seen != coarse:
                    raise ValueError(
                        f"inconsistent nesting at level {l + 1}: cluster "
                        f"{values[fine]!r} has parents {label_values[l - 1][seen]!r} "
                        f"and {label_values[l - 1][coarse]!r}"
                    )
    return HierarchyView(measure, assignments, label_values)


def kmeans_labels(points, weights, sizes: list[int], seed: int) -> np.ndarray:
    """Nested weighted k-means labels for unlabeled data (fixed 50 iterations).

    sizes gives the total cluster count per level, coarsest first. Each level
    splits every existing group, allocating clusters proportionally to group
    mass. Returns an element-by-level label array usable by build_hierarchy.
    """
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    rng = np.random.default_rng(seed)
    out = np.zeros((pts.shape[0], len(sizes)), dtype=np.int64)
    groups: list[np.ndarray] = [np.arange(pts.shape[0])]
    for lvl, k_total in enumerate(sizes):
        if k_total < len(groups):
            raise ValueError("sizes must be non-decreasing across levels")
        masses = np.array([w[g].sum() for g in groups])
        alloc = np.maximum(1, np.floor(k_total * masses / masses.sum()).astype(int))
        while alloc.sum() < k_total:
            alloc[np.argmax(masses / alloc)] += 1
        while alloc.sum() > k_total:
            big = np.argmax(np.where(alloc > 1, masses / alloc, -np.inf))
            alloc[big] -= 1
        next_groups: list[np.ndarray] = []
        code = 0
        for g, k in zip(groups, alloc):
            sub = _weighted_kmeans(pts[g], w[g], min(k, len(g)), rng)
            for c in range(sub.max() + 1):
                members = g[sub == c]
                out[members, lvl] = code
                next_groups.append(members)
                code += 1
        groups = next_groups
    return out


def _weighted_kmeans(pts, w, k, rng) -> np.ndarray:
    if k <= 1 or len(pts) <= k:
        return np.arange(len(pts)) % max(k, 1)
    p = w / w.sum() if w.sum() > 0 else None
    centers = pts[rng.choice(len(pts), size=k, replace=False, p=p)]
    assign = np.zeros(len(pts), dtype=np.int64)
    for _ in range(50):
        d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
        assign = np.argmin(d, axis=1)
        for c in range(k):
            sel = assign == c
            if not np.any(sel):
                centers[c] = pts[np.argmax(d.min(axis=1))]
            elif w[sel].sum() > 0:
                centers[c] = np.average(pts[sel], axis=0, weights=w[sel])
            else:
                centers[c] = pts[sel].mean(axis=0)
    return assign


class TransitionPrior:
    """Optional binary admissibility matrices per level, 1..L-1."""

    def __init__(self, matrices: dict[int, np.ndarray]):
        self.matrices = {}
        for level, mat in matrices.items():
            mat = np.asarray(mat)
            if not np.all((mat == 0) | (mat == 1)):
                raise ValueError(f"prior at level {level} must be binary")
            self.matrices[int(level)] = mat.astype(bool)

    def matrix(self, level: int) -> np.ndarray | None:
        return self.matrices.get(level)


def load_prior(path, source: HierarchyView, target: HierarchyView) -> TransitionPrior:
    """Read a prior file: JSON {level: [[source_label, target_label], ...]}.

    Levels absent from the file are all-allowed. Labels are matched as
    strings against the hierarchy's label values; unknown labels are errors.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    matrices = {}
    for key, pairs in raw.items():
        level = int(key)
        if not 1 <= level <= source.levels - 1:
            raise ValueError(f"prior level {level} outside 1..{source.levels - 1}")
        src_vals = list(source.label_values[level - 1])
        tgt_vals = list(target.label_values[level - 1])
        mat = np.zeros((len(src_vals), len(tgt_vals)), dtype=bool)
        for a, b in pairs:
            a, b = str(a), str(b)
            if a not in src_vals:
                raise ValueError(f"prior level {level}: unknown source label {a!r}")
            if b not in tgt_vals:
                raise ValueError(f"prior level {level}: unknown target label {b!r}")
            mat[src_vals.index(a), tgt_vals.index(b)] = True
        matrices[level] = mat
    return TransitionPrior(matrices)


def write_prior(path, pairs_per_level: dict[int, list[tuple]]) -> None:
    data = {str(k): [[str(a), str(b)] for a, b in v] for k, v in pairs_per_level.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


def build_mask(
    prior_matrix: np.ndarray | None,
    parent_coupling: SparseCoupling | None,
    parent_weights0: np.ndarray | None,
    parents0: np.ndarray | None,
    parents1: np.ndarray | None,
    epsilon: float,
    shape: tuple[int, int],
) -> SupportMask:
    """Admissible pairs at one level: binary prior AND propagated parent support.

    A child pair is propagated iff its parent pair carries at least epsilon of
    the parent row's mass (ties included). With no parent coupling (level 1)
    the mask is the prior alone, or full if that is also absent.
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0,1), got {epsilon}")
    k0, k1 = shape
    if prior_matrix is not None and prior_matrix.shape != shape:
        raise ValueError("prior shape does not match cluster counts")
    if parent_coupling is None:
        if prior_matrix is None:
            return SupportMask.full(k0, k1)
        return SupportMask.from_dense(prior_matrix)

    w0 = np.asarray(parent_weights0, dtype=float)
    pmask = parent_coupling.mask
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(w0[pmask.ii] > 0, parent_coupling.values / w0[pmask.ii], 0.0)
    keep = share >= epsilon
    allowed = np.zeros((pmask.rows, pmask.cols), dtype=bool)
    allowed[pmask.ii[keep], pmask.jj[keep]] = True

    # Expand each allowed parent pair to the product of its child index sets.
    kids0 = [np.nonzero(parents0 == pa)[0] for pa in range(pmask.rows)]
    kids1 = [np.nonzero(parents1 == pa)[0] for pa in range(pmask.cols)]
    ii_parts, jj_parts = [], []
    for pi, pj in zip(*np.nonzero(allowed)):
        a, b = kids0[pi], kids1[pj]
        if a.size and b.size:
            ii_parts.append(np.repeat(a, b.size))
            jj_parts.append(np.tile(b, a.size))
    if not ii_parts:
        return SupportMask(k0, k1, np.empty(0, np.int64), np.empty(0, np.int64), _trusted=True)
    ii = np.concatenate(ii_parts)
    jj = np.concatenate(jj_parts)
    if prior_matrix is not None:
        sel = prior_matrix[ii, jj]
        ii, jj = ii[sel], jj[sel]
    order = np.lexsort((jj, ii))
    return SupportMask(k0, k1, ii[order], jj[order], _trusted=True)


@dataclass
class MultiscaleConfig:
    """Controls for the level-by-level solve."""

    delta: float
    mask_epsilon: float = 1e-3
    finest_mode: str = "sparse"
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.finest_mode not in ("sparse", "independent"):
            raise ValueError(f"finest_mode must be 'sparse' or 'independent', got {self.finest_mode!r}")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


def solve_multiscale(
    source: HierarchyView,
    target: HierarchyView,
    prior: TransitionPrior | None,
    config: MultiscaleConfig,
) -> list[SparseCoupling]:
    """Couple two hierarchies coarse to fine; one coupling per solved level.

    Levels 1..L-1 are always solved; 'sparse' mode also solves level L over
    the support propagated from level L-1, 'independent' stops at L-1 (the
    finest step is then handled by lifting). L=1 degenerates to a single flat
    solve on the full (or prior-restricted) support.
    """
    if source.levels != target.levels:
        raise ValueError("hierarchies have different level counts")
    levels = source.levels
    top = levels if (config.finest_mode == "sparse" or levels == 1) else levels - 1
    couplings: list[SparseCoupling] = []
    prev: SparseCoupling | None = None
    for l in range(1, top + 1):
        b = prior.matrix(l) if prior is not None else None
        mask = build_mask(
            b,
            prev,
            source.weights[l - 2] if prev is not None else None,
            source.parents[l - 1] if l > 1 else None,
            target.parents[l - 1] if l > 1 else None,
            config.mask_epsilon,
            (source.cluster_count(l), target.cluster_count(l)),
        )
        if mask.nnz == 0:
            raise EmptyMaskError(f"level {l}: no admissible pairs remain")
        cost = build_cost(source.centroids[l - 1], target.centroids[l - 1], mask, config.delta)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SolverConvergenceWarning)
            gamma = solve_masked_oet(cost, source.weights[l - 1], target.weights[l - 1],
                                     options=config.solver)
        for item in caught:
            warnings.warn(f"level {l}: {item.message}", SolverConvergenceWarning, stacklevel=2)
        couplings.append(gamma)
        prev = gamma
    return couplings


def _children_of_parents(view: HierarchyView, level: int) -> list[np.ndarray]:
    """Cluster indices at `level` grouped under each cluster one level up."""
    pa = view.parents[level - 1]
    k = view.cluster_count(level - 1)
    order = np.argsort(pa, kind="stable")
    counts = np.bincount(pa, minlength=k)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return [order[starts[p]: starts[p] + counts[p]] for p in range(k)]


def lift_coupling(parent: SparseCoupling, source: HierarchyView,
                  target: HierarchyView) -> SparseCoupling:
    """Spread each parent entry over its child block by product weight shares.

    Entry (i,j) inside block (I,J) gets gamma_IJ * (w0_i/w0_I) * (w1_j/w1_J),
    so each block's total is exactly the parent entry. Zero-weight children
    get zero. Only sensible for small finest levels; the sampler route covers
    the large case without materializing this.
    """
    lev = source.levels
    kids0 = _children_of_parents(source, lev)
    kids1 = _children_of_parents(target, lev)
    w0 = source.weights[lev - 1]
    w1 = target.weights[lev - 1]
    pw0 = source.weights[lev - 2]
    pw1 = target.weights[lev - 2]
    ii_parts, jj_parts, val_parts = [], [], []
    for e in range(parent.mask.nnz):
        pi, pj, g = parent.mask.ii[e], parent.mask.jj[e], parent.values[e]
        a_idx = kids0[pi]
        b_idx = kids1[pj]
        if not (a_idx.size and b_idx.size):
            continue
        a = w0[a_idx] / pw0[pi] if pw0[pi] > 0 else np.zeros(a_idx.size)
        b = w1[b_idx] / pw1[pj] if pw1[pj] > 0 else np.zeros(b_idx.size)
        ii_parts.append(np.repeat(a_idx, b_idx.size))
        jj_parts.append(np.tile(b_idx, a_idx.size))
        val_parts.append(g * np.outer(a, b).ravel())
    n0, n1 = source.cluster_count(lev), target.cluster_count(lev)
    if not ii_parts:
        empty = np.empty(0, np.int64)
        return SparseCoupling(SupportMask(n0, n1, empty, empty, _trusted=True), np.empty(0))
    ii = np.concatenate(ii_parts)
    jj = np.concatenate(jj_parts)
    vals = np.concatenate(val_parts)
    order = np.lexsort((jj, ii))
    mask = SupportMask(n0, n1, ii[order], jj[order], _trusted=True)
    return SparseCoupling(mask, vals[order])


class LiftedSampler:
    """Implicit finest-level pair sampler built from a level-(L-1) coupling.

    Stores the parent starting semi-coupling, the per-block endpoint mass
    ratio rho = gamma1/gamma0, and normalized within-block child weights for
    both sides. Memory is O(nnz(parent) + points), never points-by-points.
    Death rows and birth columns become stationary pseudo-pairs: (x0, x0)
    with m1 = 0, and (x1, x1) with m0 = 0, weighted by their marginal mass.
    """

    def __init__(self, semi: SemiCoupling, rho: np.ndarray,
                 source: HierarchyView, target: HierarchyView,
                 mu0_parent: np.ndarray, mu1_parent: np.ndarray):
        self.semi = semi
        self.rho = rho
        self.source = source
        self.target = target
        # The parent coupling indexes level L-1 clusters; member draws must
        # group elements by that level, not by the finest singletons.
        self._blocks0 = _BlockCdf(source, source.levels - 1)
        self._blocks1 = _BlockCdf(target, target.levels - 1)
        g0 = semi.gamma0.values
        death_w = mu0_parent[semi.death_rows]
        birth_w = mu1_parent[semi.birth_cols]
        weights = np.concatenate([g0, death_w, birth_w])
        total = weights.sum()
        if total <= 0:
            raise ValueError("sampler has no mass to draw from")
        self._probs = weights / total
        self._n_pairs = g0.size
        self._n_death = death_w.size

    def alpha(self, parent: int) -> np.ndarray:
        """Normalized source child weights of one parent block."""
        return self._blocks0.block_probs(parent)

    def beta(self, parent: int) -> np.ndarray:
        return self._blocks1.block_probs(parent)

    def sample(self, count: int, seed: int):
        """(x0, x1, m0, m1) arrays; identical output for identical seeds."""
        rng = np.random.default_rng(seed)
        pick = rng.choice(self._probs.size, size=count, p=self._probs)
        u0 = rng.random(count)
        u1 = rng.random(count)
        d = self.source.measure.points.shape[1]
        x0 = np.zeros((count, d))
        x1 = np.zeros((count, d))
        m0 = np.ones(count)
        m1 = np.zeros(count)

        mask = self.semi.gamma0.mask
        transported = pick < self._n_pairs
        if np.any(transported):
            e = pick[transported]
            i = self._blocks0.draw(mask.ii[e], u0[transported])
            j = self._blocks1.draw(mask.jj[e], u1[transported])
            x0[transported] = self.source.measure.points[i]
            x1[transported] = self.target.measure.points[j]
            m1[transported] = self.rho[e]
        dying = (pick >= self._n_pairs) & (pick < self._n_pairs + self._n_death)
        if np.any(dying):
            blk = self.semi.death_rows[pick[dying] - self._n_pairs]
            i = self._blocks0.draw(blk, u0[dying])
            x0[dying] = self.source.measure.points[i]
            x1[dying] = self.source.measure.points[i]
            m1[dying] = 0.0
        born = pick >= self._n_pairs + self._n_death
        if np.any(born):
            blk = self.semi.birth_cols[pick[born] - self._n_pairs - self._n_death]
            j = self._blocks1.draw(blk, u1[born])
            x0[born] = self.target.measure.points[j]
            x1[born] = self.target.measure.points[j]
            m0[born] = 0.0
            m1[born] = 1.0
        return x0, x1, m0, m1


class _BlockCdf:
    """Inverse-CDF tables for drawing a member element within each cluster."""

    def __init__(self, view: HierarchyView, level: int):
        order, starts, counts = view.members(level)
        w = view.measure.weights[order].astype(float)
        k = counts.size
        cum = np.empty(w.size)
        self._order = order
        self._starts = starts
        self._counts = counts
        for blk in range(k):
            lo, n = starts[blk], counts[blk]
            if n == 0:
                continue
            seg = w[lo: lo + n]
            tot = seg.sum()
            if tot <= 0:
                # Massless block: uniform over members so draws stay defined.
                c = np.arange(1, n + 1) / n
            else:
                c = np.cumsum(seg) / tot
            c[-1] = 1.0
            cum[lo: lo + n] = blk + c
        self._cum = cum

    def block_probs(self, blk: int) -> np.ndarray:
        lo, n = self._starts[blk], self._counts[blk]
        c = self._cum[lo: lo + n] - blk
        return np.diff(np.concatenate(([0.0], c)))

    def draw(self, blocks: np.ndarray, u: np.ndarray) -> np.ndarray:
        if np.any(self._counts[blocks] == 0):
            raise ValueError("cannot draw from an empty cluster")
        pos = np.searchsorted(self._cum, blocks + u, side="right")
        return self._order[pos]


def build_lifted_sampler(
    parent: SparseCoupling,
    mu0_parent,
    mu1_parent,
    source: HierarchyView,
    target: HierarchyView,
    options: SolverOptions | None = None,
) -> LiftedSampler:
    """Normalize the parent coupling into semi-couplings and wrap a sampler.

    rho is the per-block ratio of ending to starting normalized mass; it is
    constant across child pairs within a block, so every pair drawn from one
    block reports the same relative endpoint mass.
    """
    mu0_parent = np.asarray(mu0_parent, dtype=float)
    mu1_parent = np.asarray(mu1_parent, dtype=float)
    semi = extract_semi_coupling(parent, mu0_parent, mu1_parent, options)
    g0 = semi.gamma0.values
    g1 = semi.gamma1.values
    # Zero entries inside alive blocks carry no sample mass; drop them so rho
    # stays finite and positive on the stored support.
    keep = g0 > 0
    if not np.all(keep):
        m = semi.gamma0.mask
        shared = SupportMask(m.rows, m.cols, m.ii[keep], m.jj[keep], _trusted=True)
        semi = SemiCoupling(
            gamma0=SparseCoupling(shared, g0[keep]),
            gamma1=SparseCoupling(shared, g1[keep]),
            death_rows=semi.death_rows,
            birth_cols=semi.birth_cols,
        )
        g0, g1 = semi.gamma0.values, semi.gamma1.values
    rho = g1 / g0
    return LiftedSampler(semi, rho, source, target, mu0_parent, mu1_parent)


def sample_pairs(sampler: LiftedSampler, count: int, rng_seed: int):
    """Draw (x0, x1, m0, m1) training pairs from the implicit lifted coupling."""
    return sampler.sample(count, rng_seed)


def sample_pairs_explicit(
    semi: SemiCoupling,
    coords0,
    coords1,
    count: int,
    rng_seed: int,
    row_floor: float = 0.0,
    mu0=None,
    mu1=None,
):
    """Draw pairs directly from an explicit finest-level semi-coupling.

    Pair probability follows gamma0 entries (entries at or below row_floor are
    skipped); m1 is the entrywise gamma1/gamma0 ratio. Death rows and birth
    columns contribute stationary pseudo-pairs weighted by their marginal
    mass, matching the implicit sampler's convention; the marginals are only
    required when such rows/columns exist.
    """
    coords0 = np.atleast_2d(np.asarray(coords0, dtype=float))
    coords1 = np.atleast_2d(np.asarray(coords1, dtype=float))
    g0 = semi.gamma0.values
    g1 = semi.gamma1.values
    mask = semi.gamma0.mask
    live = g0 > row_floor
    if len(semi.death_rows) and mu0 is None:
        raise ValueError("death rows present: mu0 is required to weight them")
    if len(semi.birth_cols) and mu1 is None:
        raise ValueError("birth columns present: mu1 is required to weight them")
    death_w = np.asarray(mu0, dtype=float)[semi.death_rows] if len(semi.death_rows) else np.zeros(0)
    birth_w = np.asarray(mu1, dtype=float)[semi.birth_cols] if len(semi.birth_cols) else np.zeros(0)
    weights = np.concatenate([g0[live], death_w, birth_w])
    if weights.sum() <= 0:
        raise ValueError("no sampleable mass in the semi-coupling")
    probs = weights / weights.sum()
    rng = np.random.default_rng(rng_seed)
    pick = rng.choice(probs.size, size=count, p=probs)

    live_idx = np.nonzero(live)[0]
    n_pairs = live_idx.size
    n_death = death_w.size
    d = coords0.shape[1]
    x0 = np.zeros((count, d))
    x1 = np.zeros((count, d))
    m0 = np.ones(count)
    m1 = np.zeros(count)
    t = pick < n_pairs
    if np.any(t):
        e = live_idx[pick[t]]
        x0[t] = coords0[mask.ii[e]]
        x1[t] = coords1[mask.jj[e]]
        m1[t] = g1[e] / g0[e]
    dy = (pick >= n_pairs) & (pick < n_pairs + n_death)
    if np.any(dy):
        i = semi.death_rows[pick[dy] - n_pairs]
        x0[dy] = coords0[i]
        x1[dy] = coords0[i]
    bn = pick >= n_pairs + n_death
    if np.any(bn):
        j = semi.birth_cols[pick[bn] - n_pairs - n_death]
        x0[bn] = coords1[j]
        x1[bn] = coords1[j]
        m0[bn] = 0.0
        m1[bn] = 1.0
    return x0, x1, m0, m1
