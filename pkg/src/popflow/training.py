"""Mass-weighted flow matching: loss, trainer, simulator, checkpoints.

A single velocity network and a single growth network are conditioned on
absolute time by input concatenation and trained against per-pair geodesic
targets. Each epoch draws a fixed-size batch from every interval's pair
sampler, rescales per-interval targets to absolute time, concatenates
everything, and applies exactly one optimizer update. All arithmetic is
64-bit and single-threaded so runs with equal seeds are bitwise identical.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import DEATH_TIME_CEIL, batch_path_targets
from .nets import MLP, Adam


class TrainingError(RuntimeError):
    """Non-finite loss or parameters; message carries epoch/interval/sample."""


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults are declared, not tuned per dataset."""

    delta: float
    time_points: tuple
    kappa: float = 1.0
    sigma: float = 0.1
    batch_size: int = 256
    epochs: int = 2000
    learning_rate: float = 1e-3
    seed: int = 0
    finest_mode: str = "sparse"
    epsilon: float = 1e-3
    hidden: int = 256
    layers: int = 5

    def __post_init__(self):
        self.time_points = tuple(float(t) for t in self.time_points)
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.kappa < 0 or self.sigma < 0:
            raise ValueError("kappa and sigma must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if len(self.time_points) < 2 or np.any(np.diff(self.time_points) <= 0):
            raise ValueError("time_points must be strictly increasing with length >= 2")
        if self.finest_mode not in ("sparse", "independent"):
            raise ValueError("finest_mode must be 'sparse' or 'independent'")
        if self.hidden < 1 or self.layers < 2:
            raise ValueError("hidden must be >= 1 and layers >= 2")


class FlowModel:
    """Velocity field (D in, D out) and growth rate field (D in, scalar out).

    Both nets take coordinates with absolute time appended as the last input
    channel. Default trunk: 5 linear layers, 256 hidden channels, leaky
    rectifier with slope 0.01.
    """

    def __init__(self, velocity: MLP, growth: MLP, dim: int):
        self.velocity = velocity
        self.growth = growth
        self.dim = dim

    @classmethod
    def create(cls, dim: int, seed: int = 0, hidden: int = 256,
               layers: int = 5, slope: float = 0.01) -> "FlowModel":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D6F64]))
        velocity = MLP(dim + 1, dim, hidden=hidden, layers=layers, slope=slope, rng=rng)
        growth = MLP(dim + 1, 1, hidden=hidden, layers=layers, slope=slope, rng=rng)
        return cls(velocity, growth, dim)

    def _with_time(self, x: np.ndarray, t) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tcol = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        return np.concatenate([x, tcol[:, None]], axis=1)

    def velocity_at(self, x, t) -> np.ndarray:
        return self.velocity.forward(self._with_time(x, t))

    def growth_at(self, x, t) -> np.ndarray:
        return self.growth.forward(self._with_time(x, t))[:, 0]

    def parameters(self) -> list[np.ndarray]:
        return self.velocity.parameters() + self.growth.parameters()

    def parameters_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


@dataclass
class TargetBatch:
    """Regression targets at absolute times; u and g already interval-rescaled."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    g: np.ndarray
    m: np.ndarray

    @property
    def size(self) -> int:
        return self.t.shape[0]

    @staticmethod
    def concatenate(parts: list["TargetBatch"]) -> "TargetBatch":
        return TargetBatch(
            x=np.concatenate([p.x for p in parts]),
            t=np.concatenate([p.t for p in parts]),
            u=np.concatenate([p.u for p in parts]),
            g=np.concatenate([p.g for p in parts]),
            m=np.concatenate([p.m for p in parts]),
        )


@dataclass
class SimulatedPopulation:
    particles: np.ndarray
    masses: np.ndarray
    time: float

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.masses = np.asarray(self.masses, dtype=float)
        if self.particles.shape[0] != self.masses.shape[0]:
            raise ValueError("particles and masses length mismatch")
        if np.any(self.masses < 0):
            raise ValueError("masses must be non-negative")

    def total_mass(self) -> float:
        return float(self.masses.sum())


BIRTH_TIME_FLOOR = 1.0 - DEATH_TIME_CEIL


def build_target_batch(pairs, t_norm, interval: tuple[float, float],
                       delta: float, sigma: float, rng,
                       mass_scale: float = 1.0) -> TargetBatch:
    """Geodesic regression targets for coupled pairs on one time interval.

    t_norm in [0,1) is squeezed away from the vanishing endpoint for pure
    death (m1=0) and pure birth (m0=0) pairs, where the growth rate diverges.
    Velocity and growth are divided by the interval length so the model sees
    absolute-time dynamics; masses are multiplied by mass_scale (the explicit
    sampler's normalization; 1 when the sampler absorbs it).
    """
    x0, x1, m0, m1 = pairs
    t_norm = np.asarray(t_norm, dtype=float).copy()
    dying = np.asarray(m1) == 0
    born = np.asarray(m0) == 0
    t_norm[dying] *= DEATH_TIME_CEIL
    t_norm[born] = BIRTH_TIME_FLOOR + t_norm[born] * DEATH_TIME_CEIL
    x, u, g, m = batch_path_targets(m0, m1, x0, x1, delta, t_norm, sigma, rng)
    ta, tb = interval
    length = tb - ta
    return TargetBatch(
        x=x,
        t=ta + length * t_norm,
        u=u / length,
        g=g / length,
        m=m * mass_scale,
    )


def cufm_loss(model: FlowModel, batch: TargetBatch, kappa: float = 1.0) -> float:
    """Mean of (|v - u|^2 + kappa (g - g_target)^2) * m over the batch."""
    loss, _ = _loss_and_grads(model, batch, kappa, want_grads=False)
    return loss


def _loss_and_grads(model: FlowModel, batch: TargetBatch, kappa: float,
                    want_grads: bool = True):
    if batch.size == 0:
        raise ValueError("empty batch")
    inp = model._with_time(batch.x, batch.t)
    if want_grads:
        v, vcache = model.velocity.forward(inp, want_cache=True)
        g_raw, gcache = model.growth.forward(inp, want_cache=True)
    else:
        v = model.velocity.forward(inp)
        g_raw = model.growth.forward(inp)
    g_out = g_raw[:, 0]
    dv = v - batch.u
    dg = g_out - batch.g
    terms = ((dv * dv).sum(axis=1) + kappa * dg * dg) * batch.m
    if not np.all(np.isfinite(terms)):
        bad = int(np.nonzero(~np.isfinite(terms))[0][0])
        raise TrainingError(
            f"non-finite loss at sample {bad}: x={batch.x[bad]}, t={batch.t[bad]}, "
            f"u={batch.u[bad]}, g={batch.g[bad]}, m={batch.m[bad]}"
        )
    n = batch.size
    loss = float(terms.sum() / n)
    if not want_grads:
        return loss, None
    scale = (batch.m / n)[:, None]
    grads = model.velocity.backward(2.0 * dv * scale, vcache)
    grads += model.growth.backward(2.0 * kappa * dg[:, None] * scale, gcache)
    return loss, grads


def train(samplers, config: TrainConfig, model: FlowModel | None = None):
    """Run the per-epoch concatenated-batch training loop.

    samplers: one callable per interval, (count, seed) -> (x0, x1, m0, m1);
    an optional sampler attribute mass_scale is multiplied into the weights
    (used by the explicit route, where the coupling's total mass is not
    absorbed into the sampling distribution). Returns (model, loss_trace)
    with loss_trace a list of (epoch, loss).
    """
    time_points = config.time_points
    if len(samplers) != len(time_points) - 1:
        raise ValueError(
            f"{len(samplers)} samplers for {len(time_points) - 1} intervals"
        )
    seed_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    seeds = seed_rng.integers(0, 2**62, size=(config.epochs, len(samplers), 2))
    optimizer: Adam | None = None
    trace: list[tuple[int, float]] = []
    for epoch in range(config.epochs):
        parts = []
        for k, sampler in enumerate(samplers):
            pairs = sampler(config.batch_size, int(seeds[epoch, k, 0]))
            local = np.random.default_rng(int(seeds[epoch, k, 1]))
            t_norm = local.random(config.batch_size)
            try:
                parts.append(build_target_batch(
                    pairs, t_norm, (time_points[k], time_points[k + 1]),
                    config.delta, config.sigma, local,
                    mass_scale=float(getattr(sampler, "mass_scale", 1.0)),
                ))
            except Exception as exc:
                raise TrainingError(f"epoch {epoch}, interval {k}: {exc}") from exc
        batch = TargetBatch.concatenate(parts)
        if model is None:
            model = FlowModel.create(batch.x.shape[1], seed=config.seed,
                                     hidden=config.hidden, layers=config.layers)
        if optimizer is None:
            optimizer = Adam(model.parameters(), lr=config.learning_rate)
        try:
            loss, grads = _loss_and_grads(model, batch, config.kappa)
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from exc
        optimizer.step(model.parameters(), grads)
        if not model.parameters_finite():
            raise TrainingError(f"epoch {epoch}: non-finite parameters after update")
        trace.append((epoch, loss))
    return model, trace


def simulate(model: FlowModel, initial: SimulatedPopulation,
             t_start: float, t_end: float, steps: int) -> SimulatedPopulation:
    """Explicit Euler in position and in log mass from t_start to t_end."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    h = (t_end - t_start) / steps
    x = initial.particles.copy()
    with np.errstate(divide="ignore"):
        ln_m = np.log(initial.masses.astype(float))
    t = t_start
    for step in range(steps):
        v = model.velocity_at(x, t)
        g = model.growth_at(x, t)
        x = x + h * v
        ln_m = ln_m + h * g
        t = t_start + (step + 1) * h
        if not (np.all(np.isfinite(x)) and np.all(ln_m < 700)):
            raise TrainingError(f"simulation diverged at step {step}")
    return SimulatedPopulation(particles=x, masses=np.exp(ln_m), time=t_end)


def gradient_check(model: FlowModel, batch: TargetBatch, kappa: float = 1.0,
                   h: float = 1e-5, count: int = 100, seed: int = 0) -> float:
    """Max discrepancy between backprop and centered finite differences.

    Probes `count` randomly chosen scalar parameters. The discrepancy is
    |analytic - numeric| / (|analytic| + |numeric| + 1e-3); the additive term
    keeps near-zero gradients from amplifying pure roundoff.
    """
    params = model.parameters()
    _, grads = _loss_and_grads(model, batch, kappa)
    sizes = np.array([p.size for p in params])
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(count, total), replace=False)
    worst = 0.0
    for flat in chosen:
        arr_idx = int(np.searchsorted(offsets, flat, side="right") - 1)
        local = int(flat - offsets[arr_idx])
        p = params[arr_idx].reshape(-1)
        orig = p[local]
        p[local] = orig + h
        up, _ = _loss_and_grads(model, batch, kappa, want_grads=False)
        p[local] = orig - h
        dn, _ = _loss_and_grads(model, batch, kappa, want_grads=False)
        p[local] = orig
        numeric = (up - dn) / (2.0 * h)
        analytic = grads[arr_idx].reshape(-1)[local]
        worst = max(worst, abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-3))
    return worst


def write_loss_trace(path, trace) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for epoch, loss in trace:
            fh.write(f"{epoch} {loss:.17g}\n")


def save_model(path, model: FlowModel, config: TrainConfig | None = None) -> None:
    """One JSON header line (architecture, config, array shapes), then raw
    little-endian float64 parameter bytes in declared order. Bit-exact."""
    params = model.parameters()
    header = {
        "format": "popflow-flow-model",
        "version": 1,
        "dim": model.dim,
        "hidden": model.velocity.hidden,
        "layers": model.velocity.layers,
        "slope": model.velocity.slope,
        "shapes": [list(p.shape) for p in params],
        "config": dataclasses.asdict(config) if config is not None else None,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path) -> tuple[FlowModel, TrainConfig | None]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("format") != "popflow-flow-model":
            raise ValueError(f"{path}: not a flow model checkpoint")
        payload = fh.read()
    model = FlowModel.create(header["dim"], seed=0, hidden=header["hidden"],
                             layers=header["layers"], slope=header["slope"])
    params = model.parameters()
    expected = sum(int(np.prod(s)) for s in header["shapes"])
    data = np.frombuffer(payload, dtype="<f8")
    if data.size != expected:
        raise ValueError(f"{path}: payload has {data.size} values, expected {expected}")
    pos = 0
    for p, shape in zip(params, header["shapes"]):
        n = int(np.prod(shape))
        p[...] = data[pos: pos + n].reshape(shape)
        pos += n
    config = None
    if header.get("config"):
        cfg = dict(header["config"])
        cfg["time_points"] = tuple(cfg["time_points"])
        config = TrainConfig(**cfg)
    return model, config
