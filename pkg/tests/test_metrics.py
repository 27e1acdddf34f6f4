"""Objective gap, assignment accuracy, exact W1, mass error, report output."""

import numpy as np
import pytest

import oracles
from popflow.hierarchy import DiscreteMeasure
from popflow.metrics import (
    RESULTS_HEADER,
    CouplingReport,
    W1Options,
    append_results_row,
    assignment_accuracy,
    objective_gap,
    relative_mass_error,
    row_argmax,
    truth_from_labels,
    w1_distance,
)
from popflow.solver import CostMatrix, SparseCoupling, SupportMask


def full_coupling(dense) -> SparseCoupling:
    dense = np.asarray(dense, dtype=float)
    mask = SupportMask.full(*dense.shape)
    return SparseCoupling(mask, dense[mask.ii, mask.jj])


def full_cost(dense) -> CostMatrix:
    dense = np.asarray(dense, dtype=float)
    mask = SupportMask.full(*dense.shape)
    return CostMatrix(mask, dense[mask.ii, mask.jj])


class TestObjectiveGap:
    def test_truth_against_itself_is_zero(self):
        rng = np.random.default_rng(0)
        g = full_coupling(rng.uniform(0.1, 1.0, (3, 3)))
        c = full_cost(rng.uniform(0.0, 2.0, (3, 3)))
        w = rng.uniform(0.5, 1.5, 3)
        assert objective_gap(g, g, c, w, w) == 0.0

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(1)
        gd = rng.uniform(0.05, 1.0, (3, 3))
        td = rng.uniform(0.05, 1.0, (3, 3))
        cd = rng.uniform(0.1, 2.0, (3, 3))
        w0 = rng.uniform(0.5, 1.5, 3)
        w1 = rng.uniform(0.5, 1.5, 3)
        got = objective_gap(full_coupling(gd), full_coupling(td), full_cost(cd), w0, w1)
        obj = oracles.oet_objective_dense(gd, cd, w0, w1)
        obj_t = oracles.oet_objective_dense(td, cd, w0, w1)
        assert got == pytest.approx((obj - obj_t) / obj_t, rel=1e-10)

    def test_zero_truth_objective_falls_back_to_total_mass(self):
        # perfect pairing at zero cost: truth objective is exactly 0
        truth = full_coupling(np.eye(2))
        cost = full_cost([[0.0, 5.0], [5.0, 0.0]])
        ones = np.ones(2)
        gamma = full_coupling(np.eye(2) * 0.5)
        got = objective_gap(gamma, truth, cost, ones, ones)
        expected = oracles.oet_objective_dense(np.eye(2) * 0.5, cost.mask.to_dense() * 0
                                               + [[0.0, 5.0], [5.0, 0.0]], ones, ones)
        assert got == pytest.approx(expected / 4.0, rel=1e-12)

    def test_coupling_support_wider_than_cost(self):
        # gamma lives on the full square, cost only on the diagonal
        diag = SupportMask(2, 2, [0, 1], [0, 1])
        cost = CostMatrix(diag, np.array([1.0, 1.0]))
        truth = SparseCoupling(diag, np.array([1.0, 1.0]))
        ones = np.ones(2)
        off_mask_zero = full_coupling([[1.0, 0.0], [0.0, 1.0]])
        assert objective_gap(off_mask_zero, truth, cost, ones, ones) == 0.0
        off_mask_mass = full_coupling([[0.5, 0.5], [0.0, 1.0]])
        assert np.isinf(objective_gap(off_mask_mass, truth, cost, ones, ones))

    def test_rejects_mismatched_index_spaces(self):
        g2 = full_coupling(np.eye(2))
        g3 = full_coupling(np.eye(3))
        c2 = full_cost(np.zeros((2, 2)))
        with pytest.raises(ValueError, match="different index spaces"):
            objective_gap(g2, g3, c2, np.ones(2), np.ones(2))


class TestRowArgmax:
    def test_plain_argmax(self):
        g = full_coupling([[0.1, 0.9, 0.0], [0.7, 0.2, 0.1]])
        assert row_argmax(g).tolist() == [1, 0]

    def test_ties_take_smallest_column(self):
        g = full_coupling([[0.5, 0.5, 0.1], [0.2, 0.6, 0.6]])
        assert row_argmax(g).tolist() == [0, 1]

    def test_zero_row_is_minus_one(self):
        g = full_coupling([[0.0, 0.0], [0.3, 0.1]])
        assert row_argmax(g).tolist() == [-1, 0]

    def test_sparse_support_rows_without_entries(self):
        mask = SupportMask(3, 2, [0, 2], [1, 0])
        g = SparseCoupling(mask, np.array([0.4, 0.2]))
        assert row_argmax(g).tolist() == [1, -1, 0]


class TestAssignmentAccuracy:
    def test_perfect_assignment(self):
        g = full_coupling(np.eye(4) + 0.01)
        truth = np.arange(4)
        micro = np.array(["a", "a", "b", "b"])
        macro = np.array(["m", "m", "m", "m"])
        assert assignment_accuracy(g, truth, micro, macro) == (1.0, 1.0, 1.0)

    def test_wrong_points_can_still_match_labels(self):
        # argmax picks the other element of the same micro group
        g = full_coupling([[0.0, 1.0, 0.0, 0.0],
                           [1.0, 0.0, 0.0, 0.0],
                           [0.0, 0.0, 0.0, 1.0],
                           [0.0, 0.0, 1.0, 0.0]])
        truth = np.arange(4)
        micro = np.array(["a", "a", "b", "b"])
        macro = np.array(["m", "m", "m", "m"])
        point, micro_acc, macro_acc = assignment_accuracy(g, truth, micro, macro)
        assert point == 0.0
        assert micro_acc == 1.0
        assert macro_acc == 1.0

    def test_uniform_block_tie_gives_one_over_n(self):
        n = 8
        g = full_coupling(np.ones((n, n)))
        truth = np.arange(n)
        micro = np.array([f"c{j}" for j in range(n)])
        macro = np.array(["m"] * n)
        point, micro_acc, macro_acc = assignment_accuracy(g, truth, micro, macro)
        assert point == pytest.approx(1.0 / n)
        assert micro_acc == pytest.approx(1.0 / n)
        assert macro_acc == 1.0

    def test_zero_mass_row_counts_as_wrong_everywhere(self):
        g = full_coupling([[0.0, 0.0], [0.0, 1.0]])
        point, micro_acc, macro_acc = assignment_accuracy(
            g, [0, 1], ["a", "b"], ["m", "m"]
        )
        assert point == 0.5
        assert micro_acc == 0.5
        assert macro_acc == 0.5

    def test_source_weights_reweight_fractions(self):
        g = full_coupling([[1.0, 0.0], [1.0, 0.0]])
        point, _, _ = assignment_accuracy(
            g, [0, 1], ["a", "b"], ["a", "b"], source_weights=[3.0, 1.0]
        )
        assert point == pytest.approx(0.75)

    def test_truth_length_mismatch(self):
        g = full_coupling(np.eye(2))
        with pytest.raises(ValueError, match="one partner per source"):
            assignment_accuracy(g, [0], ["a", "b"], ["m", "m"])


class TestTruthFromLabels:
    def test_recovers_permutation(self):
        truth = truth_from_labels(["b", "a", "c"], ["a", "b", "c"])
        assert truth.tolist() == [1, 0, 2]

    def test_missing_partner(self):
        with pytest.raises(ValueError, match="no target partner"):
            truth_from_labels(["a", "z"], ["a", "b"])

    def test_duplicate_target_labels(self):
        with pytest.raises(ValueError, match="not unique"):
            truth_from_labels(["a", "a"], ["a", "a"])


class TestW1Distance:
    def test_identical_measures(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(6, 2))
        a = DiscreteMeasure(pts, np.ones(6))
        assert w1_distance(a, a) == 0.0

    def test_translation_gives_shift_norm(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(10, 2))
        a = DiscreteMeasure(pts, np.ones(10))
        b = DiscreteMeasure(pts + np.array([3.0, 4.0]), np.ones(10))
        assert w1_distance(a, b) == pytest.approx(5.0, rel=1e-12)

    def test_uniform_matches_bruteforce(self):
        rng = np.random.default_rng(4)
        xa = rng.normal(size=(8, 2))
        xb = rng.normal(size=(8, 2))
        got = w1_distance(DiscreteMeasure(xa, np.ones(8)),
                          DiscreteMeasure(xb, np.ones(8)))
        assert got == pytest.approx(oracles.w1_uniform_bruteforce(xa, xb), rel=1e-9)

    def test_weighted_2x2_matches_vertex_scan(self):
        xa = np.array([[0.0, 0.0], [2.0, 0.0]])
        xb = np.array([[0.5, 0.0], [3.0, 1.0]])
        wa = np.array([0.3, 0.7])
        wb = np.array([0.6, 0.4])
        got = w1_distance(DiscreteMeasure(xa, wa), DiscreteMeasure(xb, wb))
        assert got == pytest.approx(oracles.w1_2x2_weighted(xa, wa, xb, wb), rel=1e-9)

    def test_weights_are_normalized(self):
        xa = np.array([[0.0, 0.0], [1.0, 0.0]])
        a = DiscreteMeasure(xa, np.array([1.0, 1.0]))
        b = DiscreteMeasure(xa, np.array([10.0, 10.0]))
        assert w1_distance(a, b) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = DiscreteMeasure(rng.normal(size=(4, 2)), rng.uniform(0.5, 2.0, 4))
        b = DiscreteMeasure(rng.normal(size=(5, 2)), rng.uniform(0.5, 2.0, 5))
        assert w1_distance(a, b) == pytest.approx(w1_distance(b, a), rel=1e-9)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(6)
        ms = [DiscreteMeasure(rng.normal(size=(5, 2)), np.ones(5)) for _ in range(3)]
        ab = w1_distance(ms[0], ms[1])
        bc = w1_distance(ms[1], ms[2])
        ac = w1_distance(ms[0], ms[2])
        assert ac <= ab + bc + 1e-12

    def test_subsampling_is_deterministic(self):
        rng = np.random.default_rng(7)
        a = DiscreteMeasure(rng.normal(size=(80, 2)), rng.uniform(0.5, 2.0, 80))
        b = DiscreteMeasure(rng.normal(size=(90, 2)) + 1.0, rng.uniform(0.5, 2.0, 90))
        opts = W1Options(max_support=16, seed=0)
        first = w1_distance(a, b, opts)
        second = w1_distance(a, b, opts)
        assert first == second
        assert first > 0.0


class TestRelativeMassError:
    def test_exact_mass_is_zero(self):
        target = DiscreteMeasure(np.zeros((3, 2)), np.array([1.0, 2.0, 3.0]))
        assert relative_mass_error(np.array([2.0, 4.0]), target) == 0.0

    def test_ten_percent_excess(self):
        target = DiscreteMeasure(np.zeros((2, 2)), np.array([5.0, 5.0]))
        assert relative_mass_error(np.array([11.0]), target) == pytest.approx(0.1)

    def test_reads_masses_attribute(self):
        class Pop:
            masses = np.array([1.5, 1.5])

        target = DiscreteMeasure(np.zeros((2, 2)), np.array([1.0, 1.0]))
        assert relative_mass_error(Pop(), target) == pytest.approx(0.5)


class TestReportOutput:
    def test_lines_show_gap_as_percent(self):
        report = CouplingReport(0.0123, 0.5, 0.75, 1.0, 2.5)
        lines = report.to_lines()
        assert lines[0] == "objective_gap_percent = 1.23"
        assert "point_acc = 0.5" in lines
        assert "wall_time_seconds = 2.5" in lines

    def test_append_writes_header_once(self, tmp_path):
        path = tmp_path / "results.tsv"
        r1 = CouplingReport(0.01, 1.0, 1.0, 1.0, 0.5)
        r2 = CouplingReport(0.02, 0.9, 0.95, 1.0, 0.7)
        append_results_row(path, r1)
        append_results_row(path, r2)
        lines = path.read_text().splitlines()
        assert lines[0] == RESULTS_HEADER
        assert len(lines) == 3
        row = lines[2].split("\t")
        assert float(row[0]) == pytest.approx(0.02, rel=1e-12)
        assert float(row[3]) == 1.0
