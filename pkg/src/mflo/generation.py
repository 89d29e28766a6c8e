"""Gradient-based query synthesis in the per-fidelity latent spaces.

A batch of latent points is initialized from the standard normal and pushed
uphill on an exploration-aware objective: surrogate mean plus beta times
predictive variance, minus the squared norm of the point (which anchors the
search to the region the latent prior organizes).  Above the first fidelity
the objective adds the log-density of the point under a Gaussian mixture
whose components are the transition images of high-scoring points from the
fidelity below, so the search space at an expensive level stays inside the
region that already looked promising at the cheaper one.  A diversity term
(mean pairwise cosine similarity of the batch) is minimized alongside.

Surrogates are trained on negated oracle scores, so "higher is better"
holds literally throughout this module.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .sequences import Sequence, decode_sample

log = logging.getLogger(__name__)


@dataclass
class GenObjectiveConfig:
    """Weights and optimizer settings for the generation objective."""

    lambda_likelihood: float = 1.0
    lambda_diversity: float = 1.0
    batch_points: int = 8          # M, points optimized per fidelity level
    opt_steps: int = 100
    opt_lr: float = 0.1
    temperature: float = 1.0

    def validate(self, prefix: str = "generation") -> None:
        if self.lambda_likelihood < 0:
            raise ValueError(f"{prefix}.lambda_likelihood: must be >= 0")
        if self.lambda_diversity < 0:
            raise ValueError(f"{prefix}.lambda_diversity: must be >= 0")
        if self.batch_points < 1:
            raise ValueError(f"{prefix}.batch_points: must be >= 1")
        if self.opt_steps < 1:
            raise ValueError(f"{prefix}.opt_steps: must be >= 1")
        if self.opt_lr <= 0:
            raise ValueError(f"{prefix}.opt_lr: must be > 0")
        if self.temperature < 0:
            raise ValueError(f"{prefix}.temperature: must be >= 0")


@dataclass
class MixtureParams:
    """Equally-weighted diagonal Gaussian components in one latent space."""

    mu: np.ndarray      # (M, d)
    sigma: np.ndarray   # (M, d), strictly positive

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 2:
            raise ValueError(f"mixture shapes: mu {self.mu.shape} vs sigma {self.sigma.shape}")
        if (self.sigma <= 0).any():
            raise ValueError("mixture sigma must be strictly positive")


# -- objective pieces ----------------------------------------------------------


def acquisition_batch(surrogate, z: Tensor, beta: float) -> Tensor:
    """Per-point mean + beta * variance - ||z||^2 for a batch (M, d)."""
    mean, var = surrogate.predict_tensors(z)
    mean = ad.add(ad.mul(mean, surrogate.y_std), surrogate.y_mean)
    var = ad.mul(var, surrogate.y_std**2)
    sq_norm = ad.tsum(ad.mul(z, z), axis=1)
    return ad.sub(ad.add(mean, ad.mul(var, float(beta))), sq_norm)


def acquisition(surrogate, z, beta: float) -> Tensor:
    """Scalar acquisition at a single latent point."""
    zt = z if isinstance(z, Tensor) else Tensor(z)
    return acquisition_batch(surrogate, ad.reshape(zt, (1, -1)), beta)[0]


def mixture_log_density_batch(z: Tensor, mixture: MixtureParams) -> Tensor:
    """Log of the summed component densities per row of z (B, d).

    Each component is a diagonal multivariate Gaussian; the sum over
    components is taken in log space with a detached per-row max shift,
    which leaves gradients exact.
    """
    d = mixture.mu.shape[1]
    if z.shape[-1] != d:
        raise ValueError(f"mixture dimension {d} vs latent dimension {z.shape[-1]}")
    log_norm = -0.5 * d * np.log(2.0 * np.pi) - np.log(mixture.sigma).sum(axis=1)  # (M,)
    inv_two_var = 1.0 / (2.0 * mixture.sigma**2)  # (M, d)
    comps = []
    for j in range(mixture.mu.shape[0]):
        diff = ad.sub(z, Tensor(mixture.mu[j]))
        quad = ad.tsum(ad.mul(ad.mul(diff, diff), Tensor(inv_two_var[j])), axis=1)
        comps.append(ad.add(ad.mul(quad, -1.0), float(log_norm[j])))
    if len(comps) == 1:
        return comps[0]
    shift = np.max(np.stack([c.data for c in comps]), axis=0)  # (B,), constant
    total = None
    for c in comps:
        e = ad.exp(ad.sub(c, Tensor(shift)))
        total = e if total is None else ad.add(total, e)
    return ad.add(ad.log(total), Tensor(shift))


def mixture_log_density(z, mixture: MixtureParams) -> Tensor:
    """Scalar log density of one latent point under the mixture."""
    zt = z if isinstance(z, Tensor) else Tensor(z)
    return mixture_log_density_batch(ad.reshape(zt, (1, -1)), mixture)[0]


def diversity_penalty(z: Tensor) -> Tensor:
    """Mean pairwise cosine similarity over all ordered pairs (self included).

    Pairs involving a zero vector contribute 0 with no gradient.
    """
    m = z.shape[0]
    mask = ((z.data**2).sum(axis=1) > 1e-24).astype(float)
    # differentiable 1/|z_i| for nonzero rows; zero rows are multiplied out
    # by the constant mask and receive no gradient
    sq_norms = ad.tsum(ad.mul(z, z), axis=1)
    safe = ad.add(ad.mul(sq_norms, Tensor(mask)), Tensor(1.0 - mask))
    inv = ad.power(safe, -0.5)
    normalized = ad.mul(ad.mul(z, ad.reshape(inv, (m, 1))), Tensor(mask[:, None]))
    gram = ad.matmul(normalized, ad.transpose(normalized))
    return ad.mul(ad.tsum(gram), 1.0 / (m * m))


# -- latent batch optimization ---------------------------------------------------


def _objective(surrogate, z: Tensor, beta: float, mixture: MixtureParams | None,
               cfg: GenObjectiveConfig) -> tuple[Tensor, np.ndarray]:
    """(scalar loss to minimize, per-point objective values)."""
    per_point = acquisition_batch(surrogate, z, beta)
    if mixture is not None and cfg.lambda_likelihood > 0:
        per_point = ad.add(per_point, ad.mul(mixture_log_density_batch(z, mixture),
                                             cfg.lambda_likelihood))
    total = ad.tsum(per_point)
    if cfg.lambda_diversity > 0 and z.shape[0] > 1:
        total = ad.sub(total, ad.mul(diversity_penalty(z), cfg.lambda_diversity))
    return ad.mul(total, -1.0), per_point.data.copy()


def optimize_latent_batch(surrogate, latent_dim: int, m_points: int, beta: float,
                          rng: np.random.Generator, cfg: GenObjectiveConfig,
                          mixture: MixtureParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Maximize the generation objective over a batch of latent points.

    Returns (points, acquisition values), both sorted best first.  Points
    whose objective goes non-finite are re-initialized once and dropped if
    they stay non-finite.
    """
    z = Tensor(rng.standard_normal((m_points, latent_dim)), requires_grad=True)
    opt = Adam([z], learning_rate=cfg.opt_lr)
    reinit_used = np.zeros(m_points, dtype=bool)
    dead = np.zeros(m_points, dtype=bool)
    for _ in range(cfg.opt_steps):
        loss, per_point = _objective(surrogate, z, beta, mixture, cfg)
        bad = ~np.isfinite(per_point)
        if bad.any():
            for i in np.flatnonzero(bad):
                if reinit_used[i]:
                    dead[i] = True
                    z.data[i] = 0.0
                else:
                    reinit_used[i] = True
                    z.data[i] = rng.standard_normal(latent_dim)
            opt = Adam([z], learning_rate=cfg.opt_lr)
            continue
        opt.zero_grad()
        loss.backward()
        if dead.any():
            z.grad[dead] = 0.0
        opt.step()

    final = acquisition_batch(surrogate, z, beta).data
    dead |= ~np.isfinite(final)
    if dead.all():
        raise RuntimeError("optimize_latent_batch: every point diverged")
    if dead.any():
        log.warning("optimize_latent_batch: dropped %d non-finite points", int(dead.sum()))
    keep = np.flatnonzero(~dead)
    order = keep[np.argsort(-final[keep], kind="stable")]
    return z.data[order].copy(), final[order].copy()


def top_latent_points(model, k: int, m_points: int, beta: float,
                      rng: np.random.Generator, cfg: GenObjectiveConfig
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Recursive optimization down the fidelity chain (base case k == 1)."""
    if k == 1:
        return optimize_latent_batch(model.surrogates[0], model.latent_dim,
                                     m_points, beta, rng, cfg)
    lower, _ = top_latent_points(model, k - 1, m_points, beta, rng, cfg)
    mus, sigmas = [], []
    for z_prev in lower:
        g = model.hierarchy.transition(z_prev, k - 1)
        mus.append(g.mu.data.copy())
        sigmas.append(g.sigma.data.copy())
    mixture = MixtureParams(np.asarray(mus), np.asarray(sigmas))
    return optimize_latent_batch(model.surrogates[k - 1], model.latent_dim,
                                 m_points, beta, rng, cfg, mixture=mixture)


@dataclass
class GeneratedCandidate:
    sequence: Sequence
    latent: np.ndarray
    acquisition: float
    fidelity: int


def generate_high_scoring(model, k: int, m_points: int, beta: float,
                          rng: np.random.Generator, cfg: GenObjectiveConfig,
                          top_count: int | None = None) -> list[GeneratedCandidate]:
    """Optimize a latent batch at fidelity k and decode the best points.

    By default returns M candidates below the top fidelity and a single one
    at it; `top_count` overrides that for inference-time sampling.
    """
    if not 1 <= k <= model.n_fidelities:
        raise ValueError(f"generate: fidelity {k} out of range 1..{model.n_fidelities}")
    points, acqs = top_latent_points(model, k, m_points, beta, rng, cfg)
    if top_count is None:
        top_count = m_points if k < model.n_fidelities else 1
    out = []
    for z, a in zip(points[:top_count], acqs[:top_count]):
        logits = model.hierarchy.decode_logits(z, k)
        seq = decode_sample(logits.data, model.alphabet, cfg.temperature, rng)
        out.append(GeneratedCandidate(sequence=seq, latent=z, acquisition=float(a), fidelity=k))
    return out
