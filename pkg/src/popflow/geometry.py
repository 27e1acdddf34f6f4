"""Closed-form geodesics between weighted point masses.

The underlying geometry is the Wasserstein-Fisher-Rao metric on non-negative
measures: transport blended with mass growth/decay, traded off by a scale
``delta``. Between two weighted Diracs the geodesic is closed form (a
"traveling Dirac"): the path mass is a quadratic in normalized time, the
momentum ``u(t) * m(t)`` is a constant vector, and the squared distance has an
explicit cosine expression. Flow-matching targets come from a Gaussian
smoothing of this path whose mean follows the Dirac trajectory.

Everything here works in normalized time ``t in [0, 1]``; rescaling to
absolute interval time is the caller's job. All operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Angle at which the transport branch hits the tangent pole; pairs farther
# apart than pi * delta have no geodesic and belong to the death/birth path.
POLE_CLAMP = np.pi / 2 - 1e-6
# Below this path mass the growth rate is numerically meaningless.
MASS_FLOOR = 1e-8
# Pure-death paths (m1 = 0) have g -> -infinity at t = 1; samplers must keep
# t at or below this bound (and symmetrically at or above 1e-3 for births).
DEATH_TIME_CEIL = 1.0 - 1e-3


class MassFloorError(ValueError):
    """Raised when a conditional target is requested below the mass floor."""


@dataclass(frozen=True)
class GeodesicParams:
    """Constants of the geodesic between (m0, x0) and (m1, x1) at scale delta.

    The path mass is ``m(t) = mass_quad * t**2 - 2 * mass_lin * t + m0`` and
    the momentum ``u(t) * m(t)`` equals ``momentum`` wherever the mass is
    positive. ``tan_half`` is the tangent of the (clamped) rotation half-angle
    ``|x1 - x0| / (2 * delta)``.
    """

    m0: float
    m1: float
    x0: np.ndarray
    x1: np.ndarray
    delta: float
    mass_quad: float
    mass_lin: float
    momentum: np.ndarray
    tan_half: float


@dataclass(frozen=True)
class PathTarget:
    """Regression target at one sampled point of a conditional path."""

    t: float
    x: np.ndarray
    u: np.ndarray
    g: float
    m: float


def _check_inputs(m0, m1, x0, x1, delta) -> tuple[np.ndarray, np.ndarray]:
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if np.any(np.asarray(m0) < 0) or np.any(np.asarray(m1) < 0):
        raise ValueError("masses must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.shape[-1] != x1.shape[-1]:
        raise ValueError(f"coordinate dimensions differ: {x0.shape} vs {x1.shape}")
    return x0, x1


def _constants_arrays(m0, m1, x0, x1, delta):
    """Vectorized geodesic constants; leading axes broadcast.

    Returns (mass_quad, mass_lin, momentum, tan_half) with momentum shaped
    like the coordinate inputs.
    """
    diff = x1 - x0
    dist = np.linalg.norm(diff, axis=-1)
    angle = np.minimum(dist / (2.0 * delta), POLE_CLAMP)
    tan_half = np.tan(angle)
    root = np.sqrt(m0 * m1 / (1.0 + tan_half**2))
    mass_quad = m0 + m1 - 2.0 * root
    mass_lin = m0 - root
    safe = np.where(dist > 0, dist, 1.0)
    unit = diff / safe[..., None]
    momentum = (2.0 * delta * tan_half * root)[..., None] * unit
    return mass_quad, mass_lin, momentum, tan_half


def geodesic_constants(m0: float, m1: float, x0, x1, delta: float) -> GeodesicParams:
    """Geodesic constants for a single pair of weighted Diracs."""
    x0, x1 = _check_inputs(m0, m1, x0, x1, delta)
    quad, lin, momentum, tan_half = _constants_arrays(
        float(m0), float(m1), x0, x1, float(delta)
    )
    return GeodesicParams(
        m0=float(m0),
        m1=float(m1),
        x0=x0,
        x1=x1,
        delta=float(delta),
        mass_quad=float(quad),
        mass_lin=float(lin),
        momentum=momentum,
        tan_half=float(tan_half),
    )


def cos_clamped(x):
    """cos(min(x, pi/2)): the angular kernel, zero beyond the quarter turn."""
    return np.cos(np.minimum(x, np.pi / 2))


def wfr_dd_distance_sq(m0: float, x0, m1: float, x1, delta: float):
    """Squared distance between two weighted Diracs.

    ``2 * delta**2 * (m0 + m1 - 2 * sqrt(m0 * m1) * cos_clamped(d / (2 delta)))``
    where d is the Euclidean separation. Symmetric; zero iff the Diracs agree.
    """
    x0, x1 = _check_inputs(m0, m1, x0, x1, delta)
    d = np.linalg.norm(np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float), axis=-1)
    cos_term = cos_clamped(d / (2.0 * delta))
    return 2.0 * delta**2 * (m0 + m1 - 2.0 * np.sqrt(m0 * m1) * cos_term)


def mass_at(params: GeodesicParams, t):
    """Path mass m(t); quadratic in t, non-negative by construction."""
    m = params.mass_quad * np.asarray(t) ** 2 - 2.0 * params.mass_lin * np.asarray(t) + params.m0
    return np.maximum(m, 0.0)


def traveling_gaussian_mean(params: GeodesicParams, t):
    """Mean of the conditional Gaussian path at normalized time t.

    Integrates momentum / m(s) from 0 to t in closed form. When the
    discriminant ``m0 * mass_quad - mass_lin**2`` vanishes the momentum is
    zero and the path stays at x0 (stationary mass-change path).
    """
    disc = params.m0 * params.mass_quad - params.mass_lin**2
    # disc equals m0 m1 tan^2 / (1 + tan^2), so it vanishes exactly when the
    # momentum does; <= catches pure births, where the threshold is zero.
    if disc <= 1e-12 * params.m0 * (params.m0 + params.m1):
        return np.broadcast_to(params.x0, np.shape(t) + params.x0.shape).copy() \
            if np.ndim(t) else params.x0.copy()
    sq = np.sqrt(disc)
    t = np.asarray(t, dtype=float)
    sweep = np.arctan((params.mass_quad * t - params.mass_lin) / sq) - np.arctan(
        -params.mass_lin / sq
    )
    return params.x0 + params.momentum / sq * sweep[..., None] if t.ndim else (
        params.x0 + params.momentum / sq * sweep
    )


def conditional_targets(params: GeodesicParams, t: float, x, sigma: float = 0.0) -> PathTarget:
    """Velocity/growth regression targets at normalized time t.

    The bandwidth is constant in t, so the conditional velocity is the mean
    trajectory's derivative momentum / m(t) at every sample point x; growth is
    the logarithmic mass derivative. Raises MassFloorError when m(t) is below
    the floor (pure-death paths near t = 1).
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    m = float(mass_at(params, t))
    if m < MASS_FLOOR:
        raise MassFloorError(
            f"path mass {m:.3e} at t={t} is below the floor {MASS_FLOOR:.0e}"
        )
    u = params.momentum / m
    g = (2.0 * params.mass_quad * t - 2.0 * params.mass_lin) / m
    return PathTarget(t=float(t), x=np.asarray(x, dtype=float), u=u, g=float(g), m=m)


def sample_conditional_point(params: GeodesicParams, t: float, sigma: float, rng) -> np.ndarray:
    """Draw x ~ Normal(mean(t), sigma^2 I); deterministic for a seeded rng."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    mean = traveling_gaussian_mean(params, t)
    return mean + sigma * rng.standard_normal(mean.shape)


def batch_path_targets(m0, m1, x0, x1, delta, t, sigma, rng):
    """Vectorized bridge sampling for training batches.

    All of m0, m1, t are (n,) arrays; x0, x1 are (n, D). The caller must have
    restricted t so every m(t) clears the mass floor (death pairs away from
    t = 1, birth pairs away from t = 0). Returns (x, u, g, m).
    """
    m0 = np.asarray(m0, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    t = np.asarray(t, dtype=float)
    quad, lin, momentum, _ = _constants_arrays(m0, m1, x0, x1, delta)
    m = np.maximum(quad * t**2 - 2.0 * lin * t + m0, 0.0)
    if np.any(m < MASS_FLOOR):
        bad = int(np.argmin(m))
        raise MassFloorError(
            f"sample {bad} has path mass {m[bad]:.3e} below the floor; "
            "restrict the time draw for vanishing endpoints"
        )
    disc = m0 * quad - lin**2
    degenerate = disc <= 1e-12 * m0 * (m0 + m1)
    sq = np.sqrt(np.where(degenerate, 1.0, disc))
    sweep = np.arctan((quad * t - lin) / sq) - np.arctan(-lin / sq)
    mean = x0 + np.where(degenerate, 0.0, sweep / sq)[:, None] * momentum
    x = mean + sigma * rng.standard_normal(mean.shape)
    u = momentum / m[:, None]
    g = (2.0 * quad * t - 2.0 * lin) / m
    return x, u, g, m
