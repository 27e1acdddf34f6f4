"""Synthetic benchmarks and snapshot table I/O.

Three generators: a two-snapshot multiscale benchmark (3 coarse groups of 9
subgroups each, second snapshot an exact translation of the first), a
two-component unbalanced toy whose components grow by different known
ratios, and a three-snapshot crossing toy where two lineages swap sides so
that unsupervised pairing prefers the geometrically shorter but biologically
wrong match. Tables round-trip through a plain CSV schema
`x0..x{D-1}, t, l1..lL, w`.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np

from .hierarchy import DiscreteMeasure


@dataclass
class SnapshotTable:
    """Point rows tagged with a time index and L nested label columns."""

    points: np.ndarray
    time_index: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    time_grid: tuple
    pairing: np.ndarray | None = None
    mass_ratios: dict | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.time_index = np.asarray(self.time_index, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=object)
        if self.labels.ndim == 1:
            self.labels = self.labels[:, None]
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.points.shape[0]
        if not (self.time_index.shape[0] == self.labels.shape[0] == self.weights.shape[0] == n):
            raise ValueError("column lengths disagree")
        if self.time_index.min(initial=0) < 0 or self.time_index.max(initial=0) >= len(self.time_grid):
            raise ValueError("time index outside the declared grid")

    @property
    def levels(self) -> int:
        return self.labels.shape[1]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def rows_at(self, k: int) -> np.ndarray:
        return np.nonzero(self.time_index == k)[0]

    def measure_at(self, k: int) -> DiscreteMeasure:
        rows = self.rows_at(k)
        return DiscreteMeasure(self.points[rows], self.weights[rows])

    def labels_at(self, k: int) -> np.ndarray:
        return self.labels[self.rows_at(k)]

    def count_summary(self) -> dict:
        """Row counts keyed by (time value, coarsest label)."""
        out: dict = {}
        for k, t in enumerate(self.time_grid):
            rows = self.rows_at(k)
            for lab in np.unique(self.labels[rows, 0].astype(str)):
                out[(t, lab)] = int(np.sum(self.labels[rows, 0].astype(str) == lab))
        return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Multiscale benchmark layout; defaults give the canonical instance."""

    per_micro: int = 1000
    noise: float = 0.1
    anchor: tuple = (2.0, 2.0)
    macro_offsets: tuple = (5.0, 0.0, -5.0)
    micro_offsets: tuple = (
        (0, 0), (0, 1), (0, -1), (-1, 0), (1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1),
    )
    shift: tuple = (5.0, 0.0)
    seed: int = 0


def generate_multiscale(spec: SyntheticSpec) -> SnapshotTable:
    """Two snapshots: Gaussian blobs on the nested grid, then a pure shift.

    Labels: l1 the coarse group, l2 the subgroup, l3 a per-pair cell id kept
    identical across the two snapshots; pairing is therefore the identity on
    row order and is recorded as ground truth.
    """
    if spec.per_micro < 1:
        raise ValueError("per_micro must be at least 1")
    if spec.noise <= 0:
        raise ValueError("noise must be positive")
    rng = np.random.default_rng(spec.seed)
    a, b = spec.anchor
    pts, l1, l2, l3 = [], [], [], []
    cell = 0
    for m, dm in enumerate(spec.macro_offsets):
        for r, off in enumerate(spec.micro_offsets):
            center = np.array([a + off[0], b + dm + off[1]], dtype=float)
            pts.append(center + spec.noise * rng.standard_normal((spec.per_micro, 2)))
            l1 += [f"M{m}"] * spec.per_micro
            l2 += [f"M{m}.R{r}"] * spec.per_micro
            l3 += [f"C{cell + i:06d}" for i in range(spec.per_micro)]
            cell += spec.per_micro
    x0 = np.concatenate(pts)
    x1 = x0 + np.asarray(spec.shift, dtype=float)
    n = x0.shape[0]
    labels = np.array([l1 + l1, l2 + l2, l3 + l3], dtype=object).T
    return SnapshotTable(
        points=np.concatenate([x0, x1]),
        time_index=np.concatenate([np.zeros(n, np.int64), np.ones(n, np.int64)]),
        labels=labels,
        weights=np.ones(2 * n),
        time_grid=(0.0, 1.0),
        pairing=np.arange(n),
    )


@dataclass(frozen=True)
class UnbalancedToySpec:
    """Two drifting components whose counts change by different factors."""

    centers0: tuple = ((0.0, 0.0), (3.0, 0.0))
    centers1: tuple = ((1.0, 0.0), (4.0, 0.0))
    counts0: tuple = (150, 150)
    counts1: tuple = (150, 300)
    noise: float = 0.1
    seed: int = 0


def generate_unbalanced_toy(spec: UnbalancedToySpec) -> SnapshotTable:
    """Unpaired snapshots with known per-component mass ratios.

    Component separation (3 units) is intentionally much larger than the
    within-component travel (1 unit) so that a transport scale delta below
    3/pi makes cross-component movement infinitely expensive.
    """
    rng = np.random.default_rng(spec.seed)
    pts, times, l1, l2, cell = [], [], [], [], 0
    for t, (centers, counts) in enumerate(
        [(spec.centers0, spec.counts0), (spec.centers1, spec.counts1)]
    ):
        for g, (cen, cnt) in enumerate(zip(centers, counts)):
            pts.append(np.asarray(cen, float) + spec.noise * rng.standard_normal((cnt, 2)))
            times += [t] * cnt
            l1 += [f"G{g}"] * cnt
            l2 += [f"C{cell + i:06d}" for i in range(cnt)]
            cell += cnt
    ratios = {
        f"G{g}": spec.counts1[g] / spec.counts0[g] for g in range(len(spec.counts0))
    }
    return SnapshotTable(
        points=np.concatenate(pts),
        time_index=np.asarray(times, np.int64),
        labels=np.array([l1, l2], dtype=object).T,
        weights=np.ones(len(times)),
        time_grid=(0.0, 1.0),
        mass_ratios=ratios,
    )


@dataclass(frozen=True)
class CrossingToySpec:
    """Two lineages whose straight-line paths cross at the middle time."""

    count: int = 100
    start_a: tuple = (0.0, 0.0)
    end_a: tuple = (4.0, 2.0)
    start_b: tuple = (0.0, 2.0)
    end_b: tuple = (4.0, 0.0)
    noise: float = 0.1
    seed: int = 0


def generate_crossing_toy(spec: CrossingToySpec) -> SnapshotTable:
    """Three snapshots at t = 0, 0.5, 1 with the true midpoints coinciding.

    Swapped endpoints are geometrically cheaper (4 + 4 beats 2 sqrt(20)), so
    a coupling without lineage priors crosses the trajectories; the held-out
    middle snapshot then sits far from the crossed prediction.
    """
    rng = np.random.default_rng(spec.seed)
    ends = {
        "A": (np.asarray(spec.start_a, float), np.asarray(spec.end_a, float)),
        "B": (np.asarray(spec.start_b, float), np.asarray(spec.end_b, float)),
    }
    pts, times, l1, l2, cell = [], [], [], [], 0
    for k, frac in enumerate((0.0, 0.5, 1.0)):
        for lab, (p0, p1) in ends.items():
            center = (1 - frac) * p0 + frac * p1
            pts.append(center + spec.noise * rng.standard_normal((spec.count, 2)))
            times += [k] * spec.count
            l1 += [lab] * spec.count
            l2 += [f"C{cell + i:06d}" for i in range(spec.count)]
            cell += spec.count
    return SnapshotTable(
        points=np.concatenate(pts),
        time_index=np.asarray(times, np.int64),
        labels=np.array([l1, l2], dtype=object).T,
        weights=np.ones(len(times)),
        time_grid=(0.0, 0.5, 1.0),
    )


def save_snapshots(path, table: SnapshotTable) -> None:
    """Write the canonical CSV: x0..x{D-1}, t, l1..lL, w."""
    d, levels = table.dim, table.levels
    header = [f"x{i}" for i in range(d)] + ["t"] + [f"l{i + 1}" for i in range(levels)] + ["w"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in range(table.points.shape[0]):
            row = [f"{v:.17g}" for v in table.points[r]]
            row.append(f"{table.time_grid[table.time_index[r]]:.17g}")
            row += [str(v) for v in table.labels[r]]
            row.append(f"{table.weights[r]:.17g}")
            writer.writerow(row)


def load_snapshots(path, time_grid=None) -> SnapshotTable:
    """Parse the canonical CSV; every complaint names the offending line.

    The weight column is optional and defaults to 1. If time_grid is given,
    every time value must belong to it; otherwise the grid is the sorted set
    of distinct times in the file.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        coord_cols = sorted(
            (int(m.group(1)), i) for i, h in enumerate(header)
            if (m := re.fullmatch(r"x(\d+)", h))
        )
        label_cols = sorted(
            (int(m.group(1)), i) for i, h in enumerate(header)
            if (m := re.fullmatch(r"l(\d+)", h))
        )
        if not coord_cols:
            raise ValueError(f"{path}: no coordinate columns x0..")
        if not label_cols:
            raise ValueError(f"{path}: no label columns l1..")
        if "t" not in header:
            raise ValueError(f"{path}: missing time column t")
        t_col = header.index("t")
        w_col = header.index("w") if "w" in header else None
        width = len(header)

        pts, times, labs, wts = [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ValueError(
                    f"{path}:{line_no}: expected {width} fields, got {len(row)}"
                )
            try:
                pts.append([float(row[i]) for _, i in coord_cols])
                times.append(float(row[t_col]))
                wts.append(float(row[w_col]) if w_col is not None else 1.0)
            except ValueError:
                raise ValueError(f"{path}:{line_no}: non-numeric value") from None
            lab = [row[i].strip() for _, i in label_cols]
            if any(v == "" for v in lab):
                missing = [f"l{num}" for (num, i), v in zip(label_cols, lab) if v == ""]
                raise ValueError(f"{path}:{line_no}: missing label {missing[0]}")
            labs.append(lab)
    if not pts:
        raise ValueError(f"{path}: no data rows")
    times = np.asarray(times)
    if time_grid is None:
        grid = tuple(np.unique(times))
    else:
        grid = tuple(float(t) for t in time_grid)
        unknown = set(np.unique(times)) - set(grid)
        if unknown:
            raise ValueError(f"{path}: times {sorted(unknown)} outside the declared grid")
    time_index = np.searchsorted(np.asarray(grid), times)
    return SnapshotTable(
        points=np.asarray(pts, dtype=float),
        time_index=time_index,
        labels=np.asarray(labs, dtype=object),
        weights=np.asarray(wts, dtype=float),
        time_grid=grid,
    )


def identity_prior_pairs(table: SnapshotTable) -> dict[int, list[tuple[str, str]]]:
    """Label-preserving prior pairs for every level except the finest."""
    out: dict[int, list[tuple[str, str]]] = {}
    for level in range(1, table.levels):
        values = np.unique(table.labels[:, level - 1].astype(str))
        out[level] = [(v, v) for v in values]
    return out
