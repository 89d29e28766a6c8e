"""Multi-fidelity oracle environment with exact cost accounting.

The synthetic environment builds a hidden ground-truth scorer over sequences
(per-position weights plus adjacent-pair interactions, lower is better) and
exposes a ladder of oracles that approach it: fidelity k returns
rho_k * truth + (1 - rho_k) * distortion_k + gaussian noise, where the
distortion is a deterministic hash of the sequence with the truth's marginal
scale, so the correlation with the truth rises with k while the cost ladder
climbs.  The top fidelity is the truth exactly.

Oracle noise is drawn from a stream keyed by (environment seed, fidelity,
per-fidelity query index), so model-side randomness never perturbs oracle
outputs and traces replay bit-identically.

An adapter that shells out to an external scoring program covers the case
where real evaluators replace the synthetic ladder; its contract: the
serialized sequence is substituted into the command template, the program
prints exactly one float line on stdout and exits 0.  MFLO_ORACLE_TIMEOUT_SECS
overrides the configured timeout.
"""

from __future__ import annotations

import hashlib
import os
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .sequences import Alphabet, Sequence, random_sequence

_STD_NORMAL = NormalDist()


class OracleFailure(Exception):
    """External oracle invocation failed (exit code, parse, or timeout)."""


@dataclass(frozen=True)
class OracleSpec:
    fidelity: int
    cost: float
    kind: str  # "synthetic" | "external_command"


@dataclass
class QueryRecord:
    """One oracle query: what was asked, what came back, what it cost."""

    sequence: str
    fidelity: int
    score: float | None
    cost: float
    step: int
    phase: str              # "seed" | "al" | "final"
    timestamp: float        # wall clock; excluded from emitted reports
    failed: bool = False
    error: str | None = None


class CostLedger:
    """Append-only record of every query and the total charged."""

    def __init__(self):
        self.records: list[QueryRecord] = []
        self.spent = 0.0

    def add(self, record: QueryRecord) -> None:
        self.records.append(record)
        self.spent += record.cost

    def count_at(self, fidelity: int, charged_only: bool = True) -> int:
        return sum(1 for r in self.records
                   if r.fidelity == fidelity and (r.cost > 0 or not charged_only))

    def recompute_spent(self) -> float:
        return sum(r.cost for r in self.records)


@dataclass
class SyntheticEnvConfig:
    """Shape of the synthetic oracle ladder; defaults give a 4-tier desk env."""

    seed: int = 1234
    alphabet_size: int = 12
    length: int = 10
    rho: tuple[float, ...] = (0.5, 0.75, 0.9, 1.0)
    noise: tuple[float, ...] = (1.0, 0.5, 0.2, 0.0)
    cost: tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0)
    primary_weight_std: float = 0.5
    pair_weight_std: float = 0.3

    def validate(self, prefix: str = "environment") -> None:
        if self.seed < 0:
            raise ValueError(f"{prefix}.seed: must be >= 0")
        if self.alphabet_size < 2:
            raise ValueError(f"{prefix}.alphabet_size: must be >= 2")
        if self.length < 2:
            raise ValueError(f"{prefix}.length: must be >= 2")
        k = len(self.rho)
        if not (len(self.noise) == len(self.cost) == k) or k < 1:
            raise ValueError(f"{prefix}: rho, noise, cost must share a length >= 1")
        if any(b <= a for a, b in zip(self.rho, self.rho[1:])):
            raise ValueError(f"{prefix}.rho: must be strictly increasing")
        if not 0 < self.rho[0] or self.rho[-1] != 1.0:
            raise ValueError(f"{prefix}.rho: values in (0, 1] with top fidelity exactly 1.0")
        if any(b > a for a, b in zip(self.noise, self.noise[1:])) or self.noise[-1] != 0.0:
            raise ValueError(f"{prefix}.noise: non-increasing with top fidelity exactly 0.0")
        if any(v < 0 for v in self.noise):
            raise ValueError(f"{prefix}.noise: must be >= 0")
        if any(b <= a for a, b in zip(self.cost, self.cost[1:])) or self.cost[0] <= 0:
            raise ValueError(f"{prefix}.cost: must be positive and strictly increasing")
        if self.primary_weight_std < 0 or self.pair_weight_std < 0:
            raise ValueError(f"{prefix}: weight stds must be >= 0")


def _hash_unit_interval(*parts: int) -> float:
    """Deterministic uniform in (0, 1) from integer parts."""
    payload = ",".join(str(p) for p in parts).encode()
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    raw = int.from_bytes(digest, "big")
    return (raw + 0.5) / 2.0**64


class SyntheticEnvironment:
    """The oracle ladder, hidden truth, and the ledger that meters it."""

    def __init__(self, config: SyntheticEnvConfig):
        config.validate()
        self.config = config
        self.alphabet = Alphabet.default(config.alphabet_size)
        self.ledger = CostLedger()
        self._query_counts = [0] * self.n_fidelities

        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7A17]))
        a, length = config.alphabet_size, config.length
        self.primary_weights = rng.normal(0.0, config.primary_weight_std, size=(length, a))
        self.pair_weights = rng.normal(0.0, config.pair_weight_std, size=(length - 1, a, a))

        # marginal location/scale of the truth, for distortion matching
        probe_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xD157]))
        probe = [self.true_score(random_sequence(self.alphabet, length, probe_rng))
                 for _ in range(2048)]
        self.truth_mean = float(np.mean(probe))
        self.truth_std = float(np.std(probe)) or 1.0

    @property
    def n_fidelities(self) -> int:
        return len(self.config.rho)

    def oracle_spec(self, k: int) -> OracleSpec:
        self._check_fidelity(k)
        return OracleSpec(fidelity=k, cost=self.config.cost[k - 1], kind="synthetic")

    def cost_of(self, k: int) -> float:
        self._check_fidelity(k)
        return self.config.cost[k - 1]

    def _check_fidelity(self, k: int) -> None:
        if not 1 <= k <= self.n_fidelities:
            raise ValueError(f"fidelity {k} out of range 1..{self.n_fidelities}")

    # -- scoring ------------------------------------------------------------

    def true_score(self, x: Sequence) -> float:
        """Hidden ground truth g(x); lower is better."""
        ids = x.token_ids
        total = sum(self.primary_weights[i, t] for i, t in enumerate(ids))
        total += sum(self.pair_weights[i, ids[i], ids[i + 1]] for i in range(len(ids) - 1))
        return float(total)

    def distortion(self, x: Sequence, k: int) -> float:
        """Deterministic fidelity-specific pseudo-score with truth's scale."""
        u = _hash_unit_interval(self.config.seed, k, *x.token_ids)
        return self.truth_mean + self.truth_std * _STD_NORMAL.inv_cdf(u)

    def _noise(self, k: int, query_index: int) -> float:
        sigma = self.config.noise[k - 1]
        if sigma == 0.0:
            return 0.0
        stream = np.random.default_rng(
            np.random.SeedSequence([self.config.seed, k, query_index]))
        return float(stream.normal(0.0, sigma))

    def raw_score(self, x: Sequence, k: int, query_index: int) -> float:
        rho = self.config.rho[k - 1]
        value = rho * self.true_score(x)
        if rho < 1.0:
            value += (1.0 - rho) * self.distortion(x, k)
        return value + self._noise(k, query_index)

    def evaluate(self, x: Sequence, k: int, step: int, phase: str,
                 charge: bool = True) -> QueryRecord:
        """Query oracle k, append to the ledger, return the record."""
        self._check_fidelity(k)
        idx = self._query_counts[k - 1]
        self._query_counts[k - 1] += 1
        record = QueryRecord(
            sequence=x.to_string(),
            fidelity=k,
            score=self.raw_score(x, k, idx),
            cost=self.cost_of(k) if charge else 0.0,
            step=step,
            phase=phase,
            timestamp=time.time(),
        )
        self.ledger.add(record)
        return record

    # -- diagnostics --------------------------------------------------------

    def fidelity_correlations(self, n_samples: int = 2000) -> list[float]:
        """Pearson correlation of each oracle with the truth, noise included."""
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 0xC088]))
        seqs = [random_sequence(self.alphabet, self.config.length, rng)
                for _ in range(n_samples)]
        truth = np.array([self.true_score(x) for x in seqs])
        out = []
        for k in range(1, self.n_fidelities + 1):
            stream = np.random.default_rng(np.random.SeedSequence([self.config.seed, 0xC088, k]))
            sigma = self.config.noise[k - 1]
            rho = self.config.rho[k - 1]
            vals = np.array([
                rho * self.true_score(x)
                + ((1.0 - rho) * self.distortion(x, k) if rho < 1.0 else 0.0)
                for x in seqs
            ])
            if sigma > 0:
                vals = vals + stream.normal(0.0, sigma, size=n_samples)
            out.append(float(np.corrcoef(vals, truth)[0, 1]))
        return out

    # -- checkpoint support ----------------------------------------------------

    def counters_state(self) -> list[int]:
        return list(self._query_counts)

    def restore_counters(self, counts: list[int]) -> None:
        self._query_counts = list(counts)


# -- external command oracles --------------------------------------------------


def _resolve_timeout(timeout_secs: float) -> float:
    override = os.environ.get("MFLO_ORACLE_TIMEOUT_SECS")
    if override is not None:
        try:
            return float(override)
        except ValueError:
            raise OracleFailure(
                f"MFLO_ORACLE_TIMEOUT_SECS is not a number: {override!r}") from None
    return timeout_secs


def external_command_oracle(x: Sequence, command_template: str,
                            timeout_secs: float = 60.0) -> float:
    """Run one external scoring command on a serialized sequence.

    The template must contain a ``{sequence}`` placeholder.  Raises
    OracleFailure on non-zero exit, unparseable output, or timeout.
    """
    if "{sequence}" not in command_template:
        raise ValueError("command template must contain a {sequence} placeholder")
    command = command_template.format(sequence=x.to_string())
    timeout = _resolve_timeout(timeout_secs)
    try:
        proc = subprocess.run(shlex.split(command), capture_output=True,
                              text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        raise OracleFailure(f"oracle timed out after {timeout}s: {command}") from None
    except OSError as err:
        raise OracleFailure(f"oracle failed to launch: {command}: {err}") from None
    if proc.returncode != 0:
        raise OracleFailure(
            f"oracle exited {proc.returncode}: {command}: {proc.stderr.strip()[:200]}")
    lines = [ln for ln in proc.stdout.strip().splitlines() if ln.strip()]
    if len(lines) != 1:
        raise OracleFailure(
            f"oracle printed {len(lines)} lines, expected exactly one float: {command}")
    try:
        return float(lines[0])
    except ValueError:
        raise OracleFailure(
            f"oracle output not parseable as float: {lines[0]!r}") from None


@dataclass
class ExternalOracleSpec:
    command: str
    cost: float
    timeout_secs: float = 60.0

    def validate(self, prefix: str) -> None:
        if "{sequence}" not in self.command:
            raise ValueError(f"{prefix}.command: missing {{sequence}} placeholder")
        if self.cost <= 0:
            raise ValueError(f"{prefix}.cost: must be > 0")
        if self.timeout_secs <= 0:
            raise ValueError(f"{prefix}.timeout_secs: must be > 0")


class ExternalEnvironment:
    """Oracle ladder backed by external commands; costs must increase."""

    def __init__(self, oracles: list[ExternalOracleSpec], alphabet: Alphabet,
                 length: int):
        if not oracles:
            raise ValueError("external environment needs at least one oracle")
        for i, (a, b) in enumerate(zip(oracles, oracles[1:])):
            if b.cost <= a.cost:
                raise ValueError(f"environment.oracles[{i + 1}].cost: must exceed fidelity {i + 1}")
        self.oracles = list(oracles)
        self.alphabet = alphabet
        self.config = None
        self.length = length
        self.ledger = CostLedger()

    @property
    def n_fidelities(self) -> int:
        return len(self.oracles)

    def cost_of(self, k: int) -> float:
        return self.oracles[k - 1].cost

    def oracle_spec(self, k: int) -> OracleSpec:
        return OracleSpec(fidelity=k, cost=self.cost_of(k), kind="external_command")

    def evaluate(self, x: Sequence, k: int, step: int, phase: str,
                 charge: bool = True) -> QueryRecord:
        spec = self.oracles[k - 1]
        record = QueryRecord(
            sequence=x.to_string(), fidelity=k, score=None,
            cost=spec.cost if charge else 0.0, step=step, phase=phase,
            timestamp=time.time(),
        )
        try:
            record.score = external_command_oracle(x, spec.command, spec.timeout_secs)
        except OracleFailure as err:
            record.failed = True
            record.error = str(err)
        self.ledger.add(record)
        return record

    def counters_state(self) -> list[int]:
        return []

    def restore_counters(self, counts: list[int]) -> None:
        pass
