"""Chained per-fidelity latent spaces over a shared probabilistic encoder.

One encoder maps a one-hot sequence to a diagonal Gaussian in the first
latent space.  A transition network per adjacent pair of fidelities maps a
latent vector to a Gaussian in the next space, and each fidelity owns a
decoder back to per-position token logits.  Training minimizes per-position
reconstruction cross-entropy plus a weighted KL to the standard normal at
every latent level visited on the path to the target fidelity, sampling
each intermediate vector with the reparameterization trick so gradients
reach the encoder and every lower transition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Mlp
from .sequences import Alphabet, Sequence, decode_greedy, one_hot_array

LOG_TWO_PI = float(np.log(2.0 * np.pi))


@dataclass
class LatentGaussian:
    """Diagonal Gaussian (mu, sigma) in one latent space; sigma > 0."""

    mu: Tensor
    sigma: Tensor

    def sample_array(self, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal(self.mu.shape)
        return self.mu.data + self.sigma.data * eps


def reparameterize(g: LatentGaussian, rng: np.random.Generator) -> Tensor:
    """z = mu + sigma * eps with eps ~ N(0, I); differentiable in mu, sigma."""
    eps = rng.standard_normal(g.mu.shape)
    return ad.add(g.mu, ad.mul(g.sigma, Tensor(eps)))


def gaussian_kl_standard(g: LatentGaussian) -> Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over dimensions.

    For batched (B, d) parameters the result is the batch mean.
    """
    s2 = ad.mul(g.sigma, g.sigma)
    per_dim = ad.mul(ad.sub(ad.add(ad.mul(g.mu, g.mu), s2),
                            ad.add(ad.mul(ad.log(s2), 1.0), 1.0)), 0.5)
    if g.mu.ndim == 2:
        return ad.tmean(ad.tsum(per_dim, axis=1))
    return ad.tsum(per_dim)


def cross_entropy(logits: Tensor, target_one_hot: np.ndarray, alphabet_size: int) -> Tensor:
    """Summed per-position cross-entropy; batch mean for 2-D input."""
    batched = logits.ndim == 2
    n = logits.shape[0] if batched else 1
    rows = ad.reshape(logits, (-1, alphabet_size))
    lse = ad.log_sum_exp(rows, axis=1)
    picked = ad.tsum(ad.mul(logits, Tensor(target_one_hot)))
    total = ad.sub(ad.tsum(lse), picked)
    return ad.mul(total, 1.0 / n)


class LatentHierarchy:
    """Encoder, K-1 transitions, and K decoders; fidelities are 1-based."""

    def __init__(self, alphabet: Alphabet, length: int, n_fidelities: int,
                 latent_dim: int, hidden: int, rng: np.random.Generator,
                 kl_weight: float = 0.1, sigma_floor: float = 1e-6):
        if n_fidelities < 1:
            raise ValueError("need at least one fidelity")
        self.alphabet = alphabet
        self.length = length
        self.n_fidelities = n_fidelities
        self.latent_dim = latent_dim
        self.kl_weight = kl_weight
        self.sigma_floor = sigma_floor
        io = length * alphabet.size
        self.encoder = Mlp([io, hidden, hidden, hidden, 2 * latent_dim], rng)
        self.transitions = [Mlp([latent_dim, hidden, hidden, hidden, 2 * latent_dim], rng)
                            for _ in range(n_fidelities - 1)]
        self.decoders = [Mlp([latent_dim, hidden, hidden, hidden, io], rng)
                         for _ in range(n_fidelities)]

    # -- network surfaces ---------------------------------------------------

    def _split_gaussian(self, out: Tensor) -> LatentGaussian:
        d = self.latent_dim
        if out.ndim == 2:
            mu, raw = out[:, :d], out[:, d:]
        else:
            mu, raw = out[:d], out[d:]
        sigma = ad.add(ad.softplus(raw), self.sigma_floor)
        return LatentGaussian(mu, sigma)

    def encode_array(self, x: Tensor | np.ndarray) -> LatentGaussian:
        x = x if isinstance(x, Tensor) else Tensor(x)
        return self._split_gaussian(self.encoder(x))

    def encode(self, x: Sequence) -> LatentGaussian:
        return self.encode_array(one_hot_array(x))

    def transition(self, z: Tensor | np.ndarray, k: int) -> LatentGaussian:
        """Gaussian in latent space k+1 from a vector in space k."""
        if not 1 <= k <= self.n_fidelities - 1:
            raise ValueError(f"transition: fidelity {k} out of range 1..{self.n_fidelities - 1}")
        z = z if isinstance(z, Tensor) else Tensor(z)
        return self._split_gaussian(self.transitions[k - 1](z))

    def decode_logits(self, z: Tensor | np.ndarray, k: int) -> Tensor:
        if not 1 <= k <= self.n_fidelities:
            raise ValueError(f"decode_logits: fidelity {k} out of range 1..{self.n_fidelities}")
        z = z if isinstance(z, Tensor) else Tensor(z)
        return self.decoders[k - 1](z)

    # -- losses ---------------------------------------------------------------

    def latent_path(self, x: Tensor | np.ndarray, k: int,
                    rng: np.random.Generator) -> tuple[Tensor, list[LatentGaussian]]:
        """Sample z_k by chaining encode and k-1 transitions.

        Returns the sampled vector at level k and the Gaussians of every
        visited level (for the KL terms).
        """
        g = self.encode_array(x)
        gaussians = [g]
        z = reparameterize(g, rng)
        for level in range(1, k):
            g = self.transition(z, level)
            gaussians.append(g)
            z = reparameterize(g, rng)
        return z, gaussians

    def elbo_terms(self, x: Tensor | np.ndarray, target_one_hot: np.ndarray,
                   k: int, rng: np.random.Generator) -> tuple[Tensor, Tensor, Tensor]:
        """(cross_entropy, kl_sum, z_k) for a batch at fidelity k."""
        if not 1 <= k <= self.n_fidelities:
            raise ValueError(f"elbo: fidelity {k} out of range 1..{self.n_fidelities}")
        z, gaussians = self.latent_path(x, k, rng)
        logits = self.decode_logits(z, k)
        ce = cross_entropy(logits, target_one_hot, self.alphabet.size)
        kl = gaussian_kl_standard(gaussians[0])
        for g in gaussians[1:]:
            kl = ad.add(kl, gaussian_kl_standard(g))
        return ce, kl, z

    def elbo_loss(self, x: Sequence, k: int, rng: np.random.Generator) -> Tensor:
        """Reconstruction cross-entropy plus KL-weighted regularizer (scalar)."""
        onehot = one_hot_array(x)
        ce, kl, _ = self.elbo_terms(onehot, onehot, k, rng)
        return ad.add(ce, ad.mul(kl, self.kl_weight))

    # -- evaluation -------------------------------------------------------------

    def mean_latent(self, x: Sequence, k: int) -> np.ndarray:
        """Deterministic latent at level k obtained by chaining means."""
        g = self.encode(x)
        z = g.mu.data
        for level in range(1, k):
            g = self.transition(z, level)
            z = g.mu.data
        return z

    def reconstruct_greedy(self, x: Sequence, k: int) -> Sequence:
        z = self.mean_latent(x, k)
        logits = self.decode_logits(z, k)
        return decode_greedy(logits.data, self.alphabet)

    def reconstruction_accuracy(self, seqs: list[Sequence], k: int = 1) -> float:
        """Mean per-position exact-match rate under greedy mean decoding."""
        if not seqs:
            return 0.0
        onehot = np.stack([one_hot_array(x) for x in seqs])
        z = self.encode_array(onehot).mu
        for level in range(1, k):
            z = self.transition(z, level).mu
        logits = self.decode_logits(z, k).data
        a = self.alphabet.size
        got = logits.reshape(len(seqs), self.length, a).argmax(axis=2)
        want = np.array([x.token_ids for x in seqs])
        return float((got == want).mean())

    # -- parameter plumbing -------------------------------------------------------

    def parameters(self) -> list[Tensor]:
        params = self.encoder.parameters()
        for t in self.transitions:
            params += t.parameters()
        for d in self.decoders:
            params += d.parameters()
        return params

    def state_arrays(self) -> dict:
        return {
            "encoder": self.encoder.state_arrays(),
            "transitions": [t.state_arrays() for t in self.transitions],
            "decoders": [d.state_arrays() for d in self.decoders],
        }

    def load_arrays(self, state: dict) -> None:
        self.encoder.load_arrays(state["encoder"])
        for t, arrays in zip(self.transitions, state["transitions"], strict=True):
            t.load_arrays(arrays)
        for d, arrays in zip(self.decoders, state["decoders"], strict=True):
            d.load_arrays(arrays)
