"""Sparse variational GP surrogates with a deep Matern-5/2 kernel.

Each fidelity owns one surrogate: an MLP embeds latent vectors, a Matern-5/2
kernel over the embeddings defines the prior, and P inducing points carry a
free Gaussian variational posterior.  The variational distribution is kept
in whitened coordinates (u = L v with L = chol(K_uu) and v ~ N(m, FF^T)),
which keeps the KL term kernel-independent and the optimization well
conditioned even when K_uu is nearly singular.  Training minimizes the
negative variational bound (minibatch likelihood term rescaled to the full
dataset, minus the KL between q and the whitened prior), and the predictive
equations stay differentiable in the query point so acquisition functions
can be optimized by gradient ascent through the surrogate.

Targets are standardized per fidelity before training; predictions are
de-standardized on the way out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError, Tensor
from .nn import Mlp

SQRT5 = float(np.sqrt(5.0))
LOG_TWO_PI = float(np.log(2.0 * np.pi))
JITTER_LADDER = (1e-8, 1e-6, 1e-4, 1e-3)


def inv_softplus(y: float) -> float:
    if y <= 0:
        raise ValueError(f"inv_softplus needs y > 0, got {y}")
    return float(np.log(np.expm1(y)))


@dataclass
class SurrogatePosterior:
    """Predictive mean and variance at one latent point, in score units."""

    mean: float
    variance: float


def matern52(r, scale: float, lengthscale: float):
    """Closed-form Matern-5/2 covariance at distance r (plain numpy)."""
    u = SQRT5 * np.asarray(r) / lengthscale
    return scale * (1.0 + u + u * u / 3.0) * np.exp(-u)


def matern_cov(a: np.ndarray, b: np.ndarray, scale: float, lengthscale: float) -> float:
    """Matern-5/2 between two embedding vectors."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"matern_cov: embedding shapes differ: {a.shape} vs {b.shape}")
    return float(matern52(np.linalg.norm(a - b), scale, lengthscale))


class SvgpSurrogate:
    """One fidelity's deep-kernel SVGP over its latent space."""

    def __init__(self, latent_dim: int, embed_dim: int, kernel_hidden: int,
                 n_inducing: int, rng: np.random.Generator, *,
                 identity_embedding: bool = False,
                 init_latents: np.ndarray | None = None,
                 label: str = "surrogate"):
        self.latent_dim = latent_dim
        self.label = label
        self.identity_embedding = identity_embedding
        if identity_embedding:
            self.embed_net = None
            self.skip_proj = None
            self.embed_dim = latent_dim
        else:
            kh = kernel_hidden
            self.embed_net = Mlp([latent_dim, kh, kh, kh, kh, embed_dim], rng)
            # Residual deep kernel: a fixed random projection carries the
            # latent distance structure and the MLP learns a correction that
            # starts small.  A plain MLP embedding contracts the whole space
            # onto the training manifold, which destroys the variance
            # calibration the escalation thresholds rely on.
            self.skip_proj = rng.normal(0.0, 1.0 / np.sqrt(embed_dim),
                                        size=(latent_dim, embed_dim))
            self.embed_net.weights[-1].data *= 0.1
            self.embed_dim = embed_dim

        if init_latents is not None and len(init_latents) > 0:
            pts = np.asarray(init_latents, dtype=float)[:n_inducing]
            init_embed = self._embed_array(pts)
            if len(init_embed) < n_inducing:
                extra = rng.normal(size=(n_inducing - len(init_embed), self.embed_dim))
                init_embed = np.vstack([init_embed, extra])
        else:
            init_embed = rng.normal(size=(n_inducing, self.embed_dim))
        self.n_inducing = n_inducing
        self.inducing = Tensor(init_embed.copy(), requires_grad=True)

        # kernel hyperparameters via softplus, lengthscale from the median
        # pairwise distance of the initial inducing embeddings
        dists = self._pairwise_dists(init_embed)
        med = float(np.median(dists[dists > 0])) if (dists > 0).any() else 1.0
        self.raw_scale = Tensor(inv_softplus(1.0), requires_grad=True)
        self.raw_lengthscale = Tensor(inv_softplus(max(med, 1e-3)), requires_grad=True)
        self.raw_noise = Tensor(inv_softplus(0.1), requires_grad=True)

        # whitened q initialized at the prior: m = 0, S = I
        self.var_mean = Tensor(np.zeros(n_inducing), requires_grad=True)
        raw = np.zeros((n_inducing, n_inducing))
        raw[np.diag_indices(n_inducing)] = inv_softplus(1.0)
        self.var_factor_raw = Tensor(raw, requires_grad=True)

        self._strict_lower = np.tril(np.ones((n_inducing, n_inducing)), -1)
        self.y_mean = 0.0
        self.y_std = 1.0
        self.max_jitter_used = 0.0

    # -- kernel and embeddings ------------------------------------------------

    @staticmethod
    def _pairwise_dists(e: np.ndarray) -> np.ndarray:
        diff = e[:, None, :] - e[None, :, :]
        return np.sqrt((diff**2).sum(axis=2))

    def _embed_array(self, z: np.ndarray) -> np.ndarray:
        if self.embed_net is None:
            return np.asarray(z, dtype=float)
        return self.embed(Tensor(z)).data

    def embed(self, z: Tensor) -> Tensor:
        if self.embed_net is None:
            return z
        return ad.add(ad.matmul(z, Tensor(self.skip_proj)), self.embed_net(z))

    def scale(self) -> Tensor:
        return ad.add(ad.softplus(self.raw_scale), 1e-6)

    def lengthscale(self) -> Tensor:
        return ad.add(ad.softplus(self.raw_lengthscale), 1e-6)

    def noise_variance(self) -> Tensor:
        return ad.add(ad.softplus(self.raw_noise), 1e-6)

    def kernel(self, e1: Tensor, e2: Tensor) -> Tensor:
        """Matern-5/2 cross-covariance matrix of two embedding batches."""
        n1 = ad.tsum(ad.mul(e1, e1), axis=1)
        n2 = ad.tsum(ad.mul(e2, e2), axis=1)
        cross = ad.matmul(e1, ad.transpose(e2))
        r2 = ad.add(ad.sub(ad.reshape(n1, (-1, 1)), ad.mul(cross, 2.0)),
                    ad.reshape(n2, (1, -1)))
        # smooth sqrt keeps the gradient finite on the diagonal (r = 0)
        r = ad.sqrt(ad.add(ad.clamp_min(r2, 0.0), 1e-12))
        u = ad.div(ad.mul(r, SQRT5), self.lengthscale())
        poly = ad.add(ad.add(ad.mul(ad.mul(u, u), 1.0 / 3.0), u), 1.0)
        return ad.mul(ad.mul(poly, ad.exp(ad.mul(u, -1.0))), self.scale())

    def _chol(self, kuu: Tensor) -> Tensor:
        eye = np.eye(self.n_inducing)
        last: NumericalError | None = None
        for jitter in JITTER_LADDER:
            try:
                low = ad.cholesky(ad.add(kuu, Tensor(jitter * eye)))
            except NumericalError as err:
                last = err
                continue
            self.max_jitter_used = max(self.max_jitter_used, jitter)
            return low
        raise NumericalError(
            f"{self.label}: inducing covariance not factorizable at jitter {JITTER_LADDER[-1]}"
        ) from last

    def _factor(self) -> Tensor:
        """Lower-triangular F with softplus-positive diagonal; S = F F^T."""
        strict = ad.mul(self.var_factor_raw, Tensor(self._strict_lower))
        diag = ad.add(ad.softplus(ad.diag_part(self.var_factor_raw)), 1e-8)
        return ad.add(strict, ad.diag_embed(diag))

    # -- predictive equations -----------------------------------------------------

    def _predict_parts(self, z: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """(mean, latent variance, whitened projector) for a batch of latents.

        With B = L^{-1} K_uf the whitened predictive is mean = B^T m and
        var = k(e,e) - sum(B^2) + sum((F^T B)^2) per point.
        """
        e = self.embed(z)
        kuu = self.kernel(self.inducing, self.inducing)
        low = self._chol(kuu)
        kuf = self.kernel(self.inducing, e)
        b = ad.triangular_solve(low, kuf)
        mean = ad.matmul(self.var_mean, b)
        qff = ad.tsum(ad.mul(b, b), axis=0)
        fb = ad.matmul(ad.transpose(self._factor()), b)
        var = ad.add(ad.sub(self.scale(), qff), ad.tsum(ad.mul(fb, fb), axis=0))
        return mean, ad.clamp_min(var, 1e-12), b

    def predict_tensors(self, z: Tensor) -> tuple[Tensor, Tensor]:
        """Differentiable standardized (mean, latent variance) for a batch."""
        mean, var, _ = self._predict_parts(z)
        return mean, var

    def posterior(self, z: np.ndarray) -> SurrogatePosterior:
        """De-standardized predictive mean/variance (noise included) at one z."""
        zt = Tensor(np.asarray(z, dtype=float).reshape(1, -1))
        mean, var, _ = self._predict_parts(zt)
        noisy = float(var.data[0]) + float(self.noise_variance().data)
        m = float(mean.data[0]) * self.y_std + self.y_mean
        v = noisy * self.y_std**2
        if not (np.isfinite(m) and np.isfinite(v)):
            raise NumericalError(f"{self.label}: non-finite posterior at |z|={np.linalg.norm(z):.3g}")
        return SurrogatePosterior(mean=m, variance=v)

    def variance_ratio(self, z: np.ndarray) -> float:
        """Predictive variance as a fraction of the prior predictive variance."""
        zt = Tensor(np.asarray(z, dtype=float).reshape(1, -1))
        _, var, _ = self._predict_parts(zt)
        noise = float(self.noise_variance().data)
        prior = float(self.scale().data) + noise
        return (float(var.data[0]) + noise) / prior

    # -- training objective -------------------------------------------------------

    def kl_term(self) -> Tensor:
        """KL(q(v) || N(0, I)) of the whitened variational distribution."""
        factor = self._factor()
        logdet_q = ad.mul(ad.tsum(ad.log(ad.diag_part(factor))), 2.0)
        return ad.mul(ad.sub(ad.add(ad.tsum(ad.mul(factor, factor)),
                                    ad.tsum(ad.mul(self.var_mean, self.var_mean))),
                             ad.add(logdet_q, float(self.n_inducing))), 0.5)

    def elbo_loss(self, z: Tensor, targets: np.ndarray, n_total: int) -> Tensor:
        """Negative variational bound for standardized targets at latents z."""
        targets = np.asarray(targets, dtype=float)
        batch = targets.shape[0]
        if batch == 0:
            raise ValueError(f"{self.label}: empty batch")
        mean, var, _ = self._predict_parts(z)
        noise = self.noise_variance()
        resid = ad.sub(Tensor(targets), mean)
        quad = ad.div(ad.add(ad.mul(resid, resid), var), ad.mul(noise, 2.0))
        log_norm = ad.mul(ad.add(ad.log(noise), LOG_TWO_PI), 0.5)
        exp_lik = ad.sub(ad.mul(ad.tsum(quad), -1.0), ad.mul(log_norm, float(batch)))
        return ad.add(ad.mul(exp_lik, -float(n_total) / batch), self.kl_term())

    # -- standardization and parameters ------------------------------------------

    def set_standardizer(self, mean: float, std: float) -> None:
        self.y_mean = float(mean)
        self.y_std = max(float(std), 1e-8)

    def standardize(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def set_hyperparameters(self, *, scale: float | None = None,
                            lengthscale: float | None = None,
                            noise_variance: float | None = None) -> None:
        if scale is not None:
            self.raw_scale.data = np.asarray(inv_softplus(scale - 1e-6))
        if lengthscale is not None:
            self.raw_lengthscale.data = np.asarray(inv_softplus(lengthscale - 1e-6))
        if noise_variance is not None:
            self.raw_noise.data = np.asarray(inv_softplus(noise_variance - 1e-6))

    def variational_parameters(self) -> list[Tensor]:
        return [self.var_mean, self.var_factor_raw]

    def hyper_parameters(self) -> list[Tensor]:
        return [self.raw_scale, self.raw_lengthscale, self.raw_noise, self.inducing]

    def parameters(self) -> list[Tensor]:
        params = self.variational_parameters() + self.hyper_parameters()
        if self.embed_net is not None:
            params += self.embed_net.parameters()
        return params

    def state_arrays(self) -> dict:
        return {
            "embed": self.embed_net.state_arrays() if self.embed_net else None,
            "skip_proj": None if self.skip_proj is None else self.skip_proj.copy(),
            "inducing": self.inducing.data.copy(),
            "raw_scale": self.raw_scale.data.copy(),
            "raw_lengthscale": self.raw_lengthscale.data.copy(),
            "raw_noise": self.raw_noise.data.copy(),
            "var_mean": self.var_mean.data.copy(),
            "var_factor_raw": self.var_factor_raw.data.copy(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
        }

    def load_arrays(self, state: dict) -> None:
        if (state["embed"] is None) != (self.embed_net is None):
            raise ValueError(f"{self.label}: embedding structure mismatch in checkpoint")
        if self.embed_net is not None:
            self.embed_net.load_arrays(state["embed"])
            self.skip_proj = state["skip_proj"].copy()
        self.inducing.data = state["inducing"].copy()
        self.raw_scale.data = state["raw_scale"].copy()
        self.raw_lengthscale.data = state["raw_lengthscale"].copy()
        self.raw_noise.data = state["raw_noise"].copy()
        self.var_mean.data = state["var_mean"].copy()
        self.var_factor_raw.data = state["var_factor_raw"].copy()
        self.y_mean = float(state["y_mean"])
        self.y_std = float(state["y_std"])
