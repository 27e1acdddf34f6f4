"""Flow-matching loss, gradients, training loop, simulation, checkpoints."""

import numpy as np
import pytest

from popflow.geometry import (
    DEATH_TIME_CEIL,
    conditional_targets,
    geodesic_constants,
    traveling_gaussian_mean,
)
from popflow.training import (
    BIRTH_TIME_FLOOR,
    FlowModel,
    SimulatedPopulation,
    TargetBatch,
    TrainConfig,
    TrainingError,
    build_target_batch,
    cufm_loss,
    gradient_check,
    load_model,
    save_model,
    simulate,
    train,
    write_loss_trace,
)


def zeroed_model(dim: int, hidden: int = 8, layers: int = 2) -> FlowModel:
    model = FlowModel.create(dim, seed=0, hidden=hidden, layers=layers)
    for p in model.parameters():
        p[...] = 0.0
    return model


def constant_field_model(dim: int, velocity, growth: float) -> FlowModel:
    model = zeroed_model(dim)
    model.velocity.biases[-1][...] = np.asarray(velocity, dtype=float)
    model.growth.biases[-1][...] = growth
    return model


def random_batch(n: int, dim: int, seed: int) -> TargetBatch:
    rng = np.random.default_rng(seed)
    return TargetBatch(
        x=rng.normal(size=(n, dim)),
        t=rng.random(n),
        u=rng.normal(size=(n, dim)),
        g=rng.normal(size=n),
        m=rng.uniform(0.1, 2.0, n),
    )


class TestCufmLoss:
    def test_perfect_regression_is_zero(self):
        model = constant_field_model(2, [0.7, -0.2], 1.3)
        batch = TargetBatch(
            x=np.zeros((5, 2)), t=np.linspace(0, 1, 5),
            u=np.tile([0.7, -0.2], (5, 1)), g=np.full(5, 1.3),
            m=np.random.default_rng(0).uniform(0.1, 2, 5),
        )
        assert cufm_loss(model, batch) == 0.0

    def test_unit_residual_gives_mean_mass(self):
        model = zeroed_model(1)
        rng = np.random.default_rng(1)
        m = rng.uniform(0.2, 3.0, 16)
        batch = TargetBatch(
            x=rng.normal(size=(16, 1)), t=rng.random(16),
            u=np.full((16, 1), -1.0), g=np.zeros(16), m=m,
        )
        assert cufm_loss(model, batch) == pytest.approx(m.mean(), rel=1e-15)

    def test_kappa_zero_ignores_growth(self):
        model = zeroed_model(2)
        batch = random_batch(10, 2, 2)
        other = TargetBatch(batch.x, batch.t, batch.u, batch.g + 100.0, batch.m)
        assert cufm_loss(model, batch, kappa=0.0) == cufm_loss(model, other, kappa=0.0)
        assert cufm_loss(model, batch, kappa=1.0) != cufm_loss(model, other, kappa=1.0)

    def test_linear_in_mass(self):
        model = FlowModel.create(2, seed=5, hidden=8, layers=2)
        base = random_batch(6, 2, 3)
        doubled = TargetBatch(base.x, base.t, base.u, base.g,
                              base.m * np.array([2.0, 1, 1, 1, 1, 1]))
        dup = TargetBatch(
            x=np.concatenate([base.x, base.x[:1]]),
            t=np.concatenate([base.t, base.t[:1]]),
            u=np.concatenate([base.u, base.u[:1]]),
            g=np.concatenate([base.g, base.g[:1]]),
            m=np.concatenate([base.m, base.m[:1]]),
        )
        total_doubled = cufm_loss(model, doubled) * doubled.size
        total_dup = cufm_loss(model, dup) * dup.size
        assert total_doubled == pytest.approx(total_dup, rel=1e-12)

    def test_non_negative(self):
        model = FlowModel.create(3, seed=7, hidden=8, layers=3)
        for seed in range(5):
            assert cufm_loss(model, random_batch(12, 3, seed)) >= 0.0

    def test_non_finite_target_reports_sample(self):
        model = zeroed_model(1)
        batch = random_batch(4, 1, 9)
        batch.u[2, 0] = np.inf
        with pytest.raises(TrainingError, match="sample 2"):
            cufm_loss(model, batch)

    def test_empty_batch_rejected(self):
        model = zeroed_model(1)
        empty = TargetBatch(np.zeros((0, 1)), np.zeros(0), np.zeros((0, 1)),
                            np.zeros(0), np.zeros(0))
        with pytest.raises(ValueError, match="empty"):
            cufm_loss(model, empty)


class TestGradientCheck:
    def test_zero_model_zero_targets(self):
        model = zeroed_model(2)
        batch = TargetBatch(
            x=np.zeros((4, 2)), t=np.zeros(4), u=np.zeros((4, 2)),
            g=np.zeros(4), m=np.ones(4),
        )
        assert gradient_check(model, batch) == 0.0

    def test_random_model_under_tolerance(self):
        model = FlowModel.create(2, seed=11, hidden=16, layers=3)
        batch = random_batch(24, 2, 13)
        assert gradient_check(model, batch, count=120, seed=0) < 1e-4

    def test_step_size_sweep_dips_at_1e5(self):
        model = FlowModel.create(2, seed=17, hidden=16, layers=3)
        batch = random_batch(24, 2, 19)
        disc = {h: gradient_check(model, batch, h=h, count=60, seed=1)
                for h in (1e-3, 1e-5, 1e-7)}
        assert disc[1e-5] <= disc[1e-3]
        assert disc[1e-5] <= disc[1e-7]


class TestBuildTargetBatch:
    def test_interval_rescaling(self):
        rng = np.random.default_rng(21)
        x0 = np.array([[0.0, 0.0]])
        x1 = np.array([[1.0, 0.0]])
        pairs = (x0, x1, np.array([1.0]), np.array([2.0]))
        t_norm = np.array([0.3])
        batch = build_target_batch(pairs, t_norm, (2.0, 4.0), 1.0, 0.0, rng)
        p = geodesic_constants(1.0, 2.0, x0[0], x1[0], 1.0)
        tgt = conditional_targets(p, 0.3, x0[0])
        assert batch.t[0] == pytest.approx(2.0 + 2.0 * 0.3, abs=1e-15)
        assert np.allclose(batch.u[0], tgt.u / 2.0, rtol=1e-12)
        assert batch.g[0] == pytest.approx(tgt.g / 2.0, rel=1e-12)
        assert batch.m[0] == pytest.approx(tgt.m, rel=1e-12)

    def test_death_and_birth_time_squeeze(self):
        rng = np.random.default_rng(22)
        x = np.zeros((3, 1))
        pairs = (x, x, np.array([1.0, 1.0, 0.0]), np.array([0.0, 1.0, 1.0]))
        t_norm = np.array([1.0, 1.0, 0.0])
        batch = build_target_batch(pairs, t_norm, (0.0, 1.0), 1.0, 0.0, rng)
        assert batch.t[0] == pytest.approx(DEATH_TIME_CEIL)
        assert batch.t[1] == 1.0
        assert batch.t[2] == pytest.approx(BIRTH_TIME_FLOOR)

    def test_birth_and_death_positions_stay_anchored(self):
        rng = np.random.default_rng(24)
        x = np.array([[1.5, -2.0], [0.25, 3.0]])
        pairs = (x, x, np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        batch = build_target_batch(pairs, np.full(2, 0.5), (0.0, 1.0), 1.0, 0.0, rng)
        assert np.all(np.isfinite(batch.x))
        assert np.array_equal(batch.x, x)
        assert np.all(np.isfinite(batch.u)) and np.all(np.isfinite(batch.g))

    def test_mass_scale_multiplies(self):
        rng = np.random.default_rng(23)
        x = np.zeros((2, 1))
        pairs = (x, x, np.ones(2), np.ones(2))
        a = build_target_batch(pairs, np.full(2, 0.5), (0.0, 1.0), 1.0, 0.0,
                               rng, mass_scale=1.0)
        b = build_target_batch(pairs, np.full(2, 0.5), (0.0, 1.0), 1.0, 0.0,
                               rng, mass_scale=3.5)
        assert np.allclose(b.m, 3.5 * a.m, rtol=1e-15)


class TestTrain:
    def test_single_pair_recovery(self):
        x0 = np.array([0.0, 0.0])
        x1 = np.array([1.0, 0.5])

        def sampler(count, seed):
            return (np.tile(x0, (count, 1)), np.tile(x1, (count, 1)),
                    np.ones(count), np.ones(count))

        config = TrainConfig(delta=1.0, time_points=(0.0, 1.0), sigma=0.05,
                             batch_size=64, epochs=2000, hidden=64, layers=3, seed=0)
        model, trace = train([sampler], config)
        p = geodesic_constants(1.0, 1.0, x0, x1, 1.0)
        eta = traveling_gaussian_mean(p, 0.5)
        tgt = conditional_targets(p, 0.5, eta)
        v = model.velocity_at(eta, 0.5)[0]
        g = model.growth_at(eta, 0.5)[0]
        assert np.linalg.norm(v - tgt.u) / np.linalg.norm(tgt.u) < 0.05
        assert abs(g - tgt.g) < 0.05
        assert len(trace) == 2000

    def test_stationary_data_trains_zero_growth(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(40, 2))

        def sampler(count, seed):
            r = np.random.default_rng(seed)
            idx = r.integers(0, 40, count)
            return pts[idx], pts[idx], np.ones(count), np.ones(count)

        config = TrainConfig(delta=1.0, time_points=(0.0, 1.0), sigma=0.05,
                             batch_size=128, epochs=3000, hidden=32, layers=3, seed=1)
        model, _ = train([sampler], config)
        for t in (0.25, 0.5, 0.75):
            assert np.abs(model.growth_at(pts, t)).max() < 0.05

    def test_bitwise_deterministic(self, tmp_path):
        rng = np.random.default_rng(29)
        pts = rng.normal(size=(10, 2))

        def sampler(count, seed):
            r = np.random.default_rng(seed)
            idx = r.integers(0, 10, count)
            return pts[idx], pts[idx] + 0.5, np.ones(count), np.ones(count)

        config = TrainConfig(delta=1.0, time_points=(0.0, 1.0), batch_size=16,
                             epochs=30, hidden=8, layers=2, seed=4)
        model_a, trace_a = train([sampler], config)
        model_b, trace_b = train([sampler], config)
        assert trace_a == trace_b
        for pa, pb in zip(model_a.parameters(), model_b.parameters()):
            assert np.array_equal(pa, pb)
        pa_file, pb_file = tmp_path / "a.txt", tmp_path / "b.txt"
        write_loss_trace(pa_file, trace_a)
        write_loss_trace(pb_file, trace_b)
        assert pa_file.read_bytes() == pb_file.read_bytes()

    def test_sampler_count_mismatch(self):
        config = TrainConfig(delta=1.0, time_points=(0.0, 0.5, 1.0))
        with pytest.raises(ValueError, match="1 samplers for 2 intervals"):
            train([lambda c, s: None], config)

    def test_abort_reports_epoch_and_interval(self):
        def bad_sampler(count, seed):
            x = np.zeros((count, 1))
            # pure-death pairs whose mass hits the floor at every draw
            return x, x, np.zeros(count), np.zeros(count)

        config = TrainConfig(delta=1.0, time_points=(0.0, 1.0), batch_size=4,
                             epochs=2, hidden=4, layers=2)
        with pytest.raises(TrainingError, match="epoch 0, interval 0"):
            train([bad_sampler], config)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="delta"):
            TrainConfig(delta=0.0, time_points=(0.0, 1.0))
        with pytest.raises(ValueError, match="increasing"):
            TrainConfig(delta=1.0, time_points=(1.0, 0.0))
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(delta=1.0, time_points=(0.0, 1.0), batch_size=0)
        with pytest.raises(ValueError, match="kappa"):
            TrainConfig(delta=1.0, time_points=(0.0, 1.0), kappa=-1.0)
        with pytest.raises(ValueError, match="finest_mode"):
            TrainConfig(delta=1.0, time_points=(0.0, 1.0), finest_mode="dense")


class TestSimulate:
    def test_constant_velocity_exact(self):
        model = constant_field_model(2, [1.5, -0.25], 0.0)
        start = SimulatedPopulation(np.array([[0.0, 0.0], [1.0, 1.0]]),
                                    np.array([1.0, 2.0]), 0.0)
        out = simulate(model, start, 0.0, 1.0, steps=4)
        assert np.array_equal(out.particles, start.particles + [1.5, -0.25])
        assert np.allclose(out.masses, start.masses, rtol=1e-15)
        assert out.time == 1.0

    def test_unit_growth_multiplies_by_e(self):
        model = constant_field_model(1, [0.0], 1.0)
        start = SimulatedPopulation(np.zeros((3, 1)), np.array([1.0, 2.0, 0.5]), 0.0)
        out = simulate(model, start, 0.0, 1.0, steps=8)
        assert np.allclose(out.masses, start.masses * np.e, rtol=1e-12)

    def test_divergence_reports_step(self):
        model = constant_field_model(1, [0.0], 1500.0)
        start = SimulatedPopulation(np.zeros((1, 1)), np.ones(1), 0.0)
        with pytest.raises(TrainingError, match="step 0"):
            simulate(model, start, 0.0, 1.0, steps=2)

    def test_rejects_zero_steps(self):
        model = zeroed_model(1)
        start = SimulatedPopulation(np.zeros((1, 1)), np.ones(1), 0.0)
        with pytest.raises(ValueError, match="steps"):
            simulate(model, start, 0.0, 1.0, steps=0)

    def test_step_refinement_shrinks_error(self):
        # a mildly nonlinear field: one random hidden layer
        model = FlowModel.create(1, seed=31, hidden=8, layers=2)
        start = SimulatedPopulation(np.array([[0.3]]), np.ones(1), 0.0)
        fine = simulate(model, start, 0.0, 1.0, steps=4096).particles
        mid = simulate(model, start, 0.0, 1.0, steps=64).particles
        coarse = simulate(model, start, 0.0, 1.0, steps=1).particles
        assert abs(mid - fine)[0, 0] < abs(coarse - fine)[0, 0]


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = FlowModel.create(3, seed=37, hidden=8, layers=3)
        config = TrainConfig(delta=2.0, time_points=(0.0, 0.5, 1.0), hidden=8, layers=3)
        path = tmp_path / "model.bin"
        save_model(path, model, config)
        back, cfg = load_model(path)
        for pa, pb in zip(model.parameters(), back.parameters()):
            assert np.array_equal(pa, pb)
        assert cfg == config
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 3))
        assert np.array_equal(model.velocity_at(x, 0.3), back.velocity_at(x, 0.3))

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(ValueError, match="not a flow model"):
            load_model(path)

    def test_rejects_truncated_payload(self, tmp_path):
        model = FlowModel.create(1, seed=0, hidden=4, layers=2)
        path = tmp_path / "model.bin"
        save_model(path, model)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ValueError, match="payload"):
            load_model(path)
