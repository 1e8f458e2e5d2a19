"""Kernel density estimation and the two KDE-based MI pipelines.

The entropy estimator here is the classic re-substitution scheme: fit a
Gaussian-kernel KDE to the weighted sample, evaluate the log density back at
the sample points, and average.  Cost is O(N^2 d), which is exactly why the
full-state pipeline degrades with dimension while the involved-subset
pipeline does not.

Both MI pipelines assume a perfect inference engine: posterior samples are
drawn from the true conditional Gaussian given a sampled observation
sequence.  That is a test-harness convenience for benchmarking estimator
noise in isolation, not part of either estimation method.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .analytic import FootprintError, joint_state_observation, observation_block_ids
from .linalg import cholesky_psd, conditional_parts
from .mi import METHOD_INVMI_KDE, METHOD_NAIVE_KDE, MiEstimate
from .state import (
    Action,
    GaussianDensity,
    WeightedParticleSet,
    ensure_rng,
    marginalize_gaussian,
    prior_footprint,
)

LOG_TWO_PI = math.log(2.0 * math.pi)

# Log densities are clamped here to keep -inf out of the sums; clamp events
# are counted and surfaced in the estimate's sample_counts.
LOG_DENSITY_FLOOR = -700.0

# Query blocks are sized in grid cells so a block stays cache-resident
# through the whole whiten/exp/reduce pipeline.
_CHUNK_CELLS = 250_000


class BandwidthError(ValueError):
    """The bandwidth matrix is singular (e.g. all particles identical)."""


@dataclass(frozen=True)
class KdeConfig:
    """Gaussian-kernel KDE configuration.

    ``bandwidth_rule`` is one of ``"scott"``, ``"silverman"`` or ``"fixed"``;
    the fixed rule applies ``bandwidth`` to every coordinate, the data-driven
    rules scale the per-coordinate weighted standard deviation.
    """

    bandwidth_rule: str = "scott"
    bandwidth: float | None = None

    def __post_init__(self):
        if self.bandwidth_rule not in ("scott", "silverman", "fixed"):
            raise ValueError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.bandwidth_rule == "fixed":
            if self.bandwidth is None or not self.bandwidth > 0.0:
                raise BandwidthError("fixed bandwidth must be positive")


def bandwidth_vector(
    particles: np.ndarray, weights: np.ndarray, cfg: KdeConfig
) -> np.ndarray:
    """Per-coordinate bandwidths for a weighted sample.

    Data-driven rules use the effective sample size ``1 / sum(w^2)`` in
    place of N, so heavily non-uniform weights widen the kernels.
    """
    d = particles.shape[1]
    if cfg.bandwidth_rule == "fixed":
        return np.full(d, float(cfg.bandwidth))
    if particles.shape[0] < 2:
        raise BandwidthError(
            f"{cfg.bandwidth_rule} bandwidth needs at least 2 particles"
        )
    mean = weights @ particles
    var = weights @ (particles - mean) ** 2
    if np.any(var <= 0.0):
        raise BandwidthError(
            "singular bandwidth matrix: a coordinate has zero weighted variance; "
            "use a fixed bandwidth for degenerate samples"
        )
    n_eff = 1.0 / float(weights @ weights)
    if cfg.bandwidth_rule == "scott":
        factor = n_eff ** (-1.0 / (d + 4))
    else:  # silverman
        factor = (n_eff * (d + 2) / 4.0) ** (-1.0 / (d + 4))
    return np.sqrt(var) * factor


def _log_mixture(
    queries: np.ndarray,
    particles: np.ndarray,
    weights: np.ndarray,
    bandwidth: np.ndarray,
) -> tuple[np.ndarray, int]:
    """Log KDE density at each query row; returns (values, clamp count).

    Distances are accumulated through whitened Gram products in query
    chunks, with an in-place log-sum-exp (this runs over N^2 pairs, so
    temporaries are the cost that matters at N = 10^4).
    """
    d = particles.shape[1]
    scaled = particles / bandwidth
    log_norm = -0.5 * d * LOG_TWO_PI - float(np.sum(np.log(bandwidth)))
    with np.errstate(divide="ignore"):  # zero weights contribute nothing
        col_term = 0.5 * np.einsum("ij,ij->i", scaled, scaled) - np.log(weights)

    n_queries = queries.shape[0]
    out = np.empty(n_queries)
    clamps = 0
    rows = min(max(1, _CHUNK_CELLS // particles.shape[0]), max(1, n_queries))
    buffer = np.empty((rows, particles.shape[0]))
    for start in range(0, n_queries, rows):
        chunk = queries[start : start + rows] / bandwidth
        sq_q = np.einsum("ij,ij->i", chunk, chunk)
        # log(w_i K(q - x_i)) (+ log_norm later) == cross - 0.5|q|^2 - col_term
        a = np.matmul(chunk, scaled.T, out=buffer[: chunk.shape[0]])
        a -= 0.5 * sq_q[:, None]
        a -= col_term[None, :]
        amax = a.max(axis=1)
        a -= amax[:, None]
        np.exp(a, out=a)
        vals = np.log(a.sum(axis=1))
        vals += amax
        vals += log_norm
        low = vals < LOG_DENSITY_FLOOR
        clamps += int(np.count_nonzero(low))
        out[start : start + rows] = np.where(low, LOG_DENSITY_FLOOR, vals)
    return out, clamps


def kde_log_density(
    samples: WeightedParticleSet, cfg: KdeConfig, query: np.ndarray
) -> float:
    """Log of the weighted Gaussian-kernel mixture at one query point."""
    query = np.asarray(query, dtype=float).ravel()
    if query.shape != (samples.dim,):
        raise ValueError(f"query has shape {query.shape}, expected ({samples.dim},)")
    bandwidth = bandwidth_vector(samples.particles, samples.weights, cfg)
    vals, _clamps = _log_mixture(
        query[None, :], samples.particles, samples.weights, bandwidth
    )
    return float(vals[0])


def _resubstitution(
    particles: np.ndarray, weights: np.ndarray, cfg: KdeConfig
) -> tuple[float, int]:
    bandwidth = bandwidth_vector(particles, weights, cfg)
    log_vals, clamps = _log_mixture(particles, particles, weights, bandwidth)
    return -float(weights @ log_vals), clamps


def resubstitution_entropy(samples: WeightedParticleSet, cfg: KdeConfig) -> float:
    """Entropy estimate -sum_i w_i log b_hat(X_i) in nats.

    The density estimate is the KDE over the same weighted sample, hence
    re-substitution; complexity O(N^2 d).
    """
    value, _clamps = _resubstitution(samples.particles, samples.weights, cfg)
    return value


def _kde_augmented_mi(
    prior: GaussianDensity,
    action: Action,
    n: int,
    cfg: KdeConfig,
    rng: np.random.Generator,
    z_draws: int,
) -> tuple[float, dict[str, int]]:
    """Shared core of the naive and involved-subset KDE pipelines.

    Draws n prior samples for the prior entropy, then for each of
    ``z_draws`` sampled observation sequences draws n samples from the true
    posterior (conditional Gaussian) and re-substitutes; the posterior
    entropy is the average over draws.  RNG consumption depends only on the
    belief handed in, so a fully-involved reduced run replays a full-state
    run bit for bit.
    """
    joint = joint_state_observation(prior, action)
    obs_ids = observation_block_ids(action)
    if not obs_ids:
        raise ValueError(f"action {action.id!r} has no observations to condition on")
    state_idx = joint.layout.indices(set(prior.layout.ids) | set(action.new_ids))
    obs_idx = joint.layout.indices(obs_ids)

    counts = {"n": n, "z_draws": z_draws, "clamp_events": 0}
    uniform = np.full(n, 1.0 / n)

    # Prior entropy from n fresh prior samples.
    prior_chol = cholesky_psd(prior.covariance)
    xs = prior.mean + rng.standard_normal((n, prior.dim)) @ prior_chol.T
    h_prior, clamps = _resubstitution(xs, uniform, cfg)
    counts["clamp_events"] += clamps

    # Posterior term: condition the joint per sampled observation sequence.
    mean_z = joint.mean[obs_idx]
    cov_z = joint.covariance[np.ix_(obs_idx, obs_idx)]
    z_chol = cholesky_psd(cov_z)
    gain, schur = conditional_parts(joint.covariance, state_idx, obs_idx)
    post_chol = cholesky_psd(schur)
    mean_state = joint.mean[state_idx]

    h_post = 0.0
    for _ in range(z_draws):
        z = mean_z + z_chol @ rng.standard_normal(obs_idx.size)
        mu = mean_state + gain @ (z - mean_z)
        ys = mu + rng.standard_normal((n, state_idx.size)) @ post_chol.T
        h_i, clamps = _resubstitution(ys, uniform, cfg)
        counts["clamp_events"] += clamps
        h_post += h_i / z_draws

    return h_prior - h_post, counts


def naive_kde_augmented_mi(
    prior: GaussianDensity,
    action: Action,
    n: int,
    cfg: KdeConfig | None = None,
    rng: np.random.Generator | int = 0,
    z_draws: int = 1,
) -> MiEstimate:
    """Augmented MI by re-substitution KDE over the entire state.

    This is the baseline whose variance and cost grow with the full state
    dimension D; it exists to be beaten.
    """
    if n < 2:
        raise ValueError("need n >= 2 samples for data-driven KDE entropy")
    cfg = cfg or KdeConfig()
    rng, seed = ensure_rng(rng)
    start = time.perf_counter()
    value, counts = _kde_augmented_mi(prior, action, n, cfg, rng, z_draws)
    return MiEstimate(
        value=value,
        method=METHOD_NAIVE_KDE,
        elapsed=time.perf_counter() - start,
        sample_counts=counts,
        seed=seed,
    )


def invmi_kde_augmented_mi(
    prior: GaussianDensity,
    action: Action,
    involved: Iterable[str],
    n: int,
    cfg: KdeConfig | None = None,
    rng: np.random.Generator | int = 0,
    z_draws: int = 1,
) -> MiEstimate:
    """Augmented MI by re-substitution KDE over the involved subset only.

    Identical procedure to the naive pipeline, run on the marginal prior
    over ``involved`` (which must cover the action's prior footprint), so
    the KDE works in d dimensions instead of D.
    """
    if n < 2:
        raise ValueError("need n >= 2 samples for data-driven KDE entropy")
    cfg = cfg or KdeConfig()
    rng, seed = ensure_rng(rng)
    involved = set(involved)
    missing = prior_footprint(prior.layout, action) - involved
    if missing:
        raise FootprintError(
            f"involved set misses prior blocks {sorted(missing)} read by "
            f"action {action.id!r}"
        )
    start = time.perf_counter()
    reduced = (
        prior
        if involved == set(prior.layout.ids)
        else marginalize_gaussian(prior, involved)
    )
    value, counts = _kde_augmented_mi(reduced, action, n, cfg, rng, z_draws)
    counts["involved_dim"] = reduced.dim
    return MiEstimate(
        value=value,
        method=METHOD_INVMI_KDE,
        elapsed=time.perf_counter() - start,
        sample_counts=counts,
        seed=seed,
    )
