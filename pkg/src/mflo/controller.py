"""Budgeted multi-fidelity active learning with synthesized queries.

The loop: seed every active fidelity with random evaluated sequences, train
the joint model from scratch, then repeatedly synthesize one query at the
current fidelity (exploration weight 1), pay the oracle, append the result,
escalate permanently to the next fidelity once the surrogate's standardized
posterior variance at the query's latent point falls below its threshold,
and retrain.  The loop stops when the next query would exceed the cost
budget; inference then optimizes in the top active latent space with the
exploration weight off and collects unique sequences for final evaluation.

Ablation modes reuse the same loop over a reduced oracle ladder
(single_fidelity, drop_fidelity_j) or a zeroed mixture-likelihood weight
(no_likelihood).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Adam, NumericalError
from .generation import GenObjectiveConfig, generate_high_scoring
from .model import ModelConfig, MultiFidelityModel
from .oracles import QueryRecord
from .sequences import Sequence

log = logging.getLogger(__name__)

BETA_ACTIVE = 1.0   # exploration weight while querying
BETA_FINAL = 0.0    # exploitation only at inference


class BudgetError(RuntimeError):
    """The configured budget cannot cover a mandatory phase."""


@dataclass
class TrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 64
    max_steps: int = 3000
    eval_interval: int = 100
    patience: int = 20
    min_improvement: float = 0.01
    kl_warmup_steps: int = 500

    def validate(self, prefix: str = "training") -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"{prefix}.learning_rate: must be > 0")
        if self.batch_size < 1:
            raise ValueError(f"{prefix}.batch_size: must be >= 1")
        if self.max_steps < 1:
            raise ValueError(f"{prefix}.max_steps: must be >= 1")
        if self.eval_interval < 1:
            raise ValueError(f"{prefix}.eval_interval: must be >= 1")
        if self.patience < 1:
            raise ValueError(f"{prefix}.patience: must be >= 1")
        if self.min_improvement < 0:
            raise ValueError(f"{prefix}.min_improvement: must be >= 0")
        if self.kl_warmup_steps < 0:
            raise ValueError(f"{prefix}.kl_warmup_steps: must be >= 0")


@dataclass
class LoopConfig:
    seed_low: int = 2000
    seed_high: int = 5
    retrain_every: int = 1
    regen_attempts: int = 5
    n_final: int = 15
    final_attempts: int = 50

    def validate(self, prefix: str = "controller") -> None:
        if self.seed_low < 1:
            raise ValueError(f"{prefix}.seed_low: must be >= 1")
        if self.seed_high < 1:
            raise ValueError(f"{prefix}.seed_high: must be >= 1")
        if self.retrain_every < 1:
            raise ValueError(f"{prefix}.retrain_every: must be >= 1")
        if self.regen_attempts < 0:
            raise ValueError(f"{prefix}.regen_attempts: must be >= 0")
        if self.n_final < 1:
            raise ValueError(f"{prefix}.n_final: must be >= 1")
        if self.final_attempts < 1:
            raise ValueError(f"{prefix}.final_attempts: must be >= 1")


class FidelityData:
    """Sequences and scores at one fidelity; duplicates are rejected."""

    def __init__(self):
        self.sequences: list[Sequence] = []
        self.scores: list[float] = []
        self._keys: set[tuple[int, ...]] = set()

    def __len__(self) -> int:
        return len(self.sequences)

    def contains(self, x: Sequence) -> bool:
        return x.token_ids in self._keys

    def add(self, x: Sequence, y: float) -> bool:
        if not math.isfinite(y):
            raise ValueError(f"non-finite score {y} for {x.to_string()}")
        if x.token_ids in self._keys:
            return False
        self._keys.add(x.token_ids)
        self.sequences.append(x)
        self.scores.append(float(y))
        return True


class MultiFidelityDataset:
    """Per-fidelity training sets D_1..D_K (model-level indices)."""

    def __init__(self, n_fidelities: int):
        self.levels = [FidelityData() for _ in range(n_fidelities)]

    def level(self, k: int) -> FidelityData:
        return self.levels[k - 1]

    def counts(self) -> list[int]:
        return [len(level) for level in self.levels]


@dataclass
class RunStats:
    seed_queries: int = 0
    al_steps: int = 0
    final_evals: int = 0
    retrains: int = 0
    train_steps: int = 0
    escalation_checks: int = 0
    duplicate_fallbacks: int = 0
    failed_queries: int = 0
    min_ce: float = math.inf
    min_kl: float = math.inf
    max_jitter: float = 0.0
    escalation_steps: list[int] = field(default_factory=list)


def active_levels_for_mode(mode: str, n_env: int) -> list[int]:
    """Map a run mode to the environment fidelities it trains on."""
    if mode in ("full", "no_likelihood"):
        return list(range(1, n_env + 1))
    if mode == "single_fidelity":
        return [n_env]
    if mode.startswith("drop_fidelity_"):
        j = int(mode.rsplit("_", 1)[1])
        if not 1 <= j <= n_env:
            raise ValueError(f"mode: drop_fidelity_{j} out of range for {n_env} fidelities")
        levels = [k for k in range(1, n_env + 1) if k != j]
        if not levels:
            raise ValueError("mode: cannot drop the only fidelity")
        return levels
    raise ValueError(f"mode: unknown mode {mode!r}")


class ActiveLearningRun:
    """One seeded run: owns the environment, dataset, model, and rng."""

    def __init__(self, run_config, seed: int, filter_fn=None):
        from .config import build_environment  # deferred: config imports this module

        self.config = run_config
        self.seed = int(seed)
        self.env = build_environment(run_config)
        self.filter_fn = filter_fn if filter_fn is not None else (lambda s: True)
        self.mode = run_config.mode
        self.active = active_levels_for_mode(self.mode, self.env.n_fidelities)
        self.n_active = len(self.active)

        gen = run_config.generation
        self.gen_config = GenObjectiveConfig(
            lambda_likelihood=0.0 if self.mode == "no_likelihood" else gen.lambda_likelihood,
            lambda_diversity=gen.lambda_diversity,
            batch_points=gen.batch_points,
            opt_steps=gen.opt_steps,
            opt_lr=gen.opt_lr,
            temperature=gen.temperature,
        )
        gammas = list(run_config.escalation_gamma)
        self.gammas = [gammas[i] if i < len(gammas) else gammas[-1]
                       for i in range(self.n_active - 1)]

        self.rng = np.random.default_rng(self.seed)
        self.dataset = MultiFidelityDataset(self.n_active)
        self.stats = RunStats()
        self.model: MultiFidelityModel | None = None
        self.k_model = 1
        self.step_index = 0
        self.finals: list[tuple[Sequence, float]] = []
        self.finals_shortfall = False
        self.phase = "init"

    # -- phases ------------------------------------------------------------------

    def _seed_count(self, env_fid: int) -> int:
        loop = self.config.controller
        return loop.seed_low if env_fid == 1 else loop.seed_high

    def seeding_cost(self) -> float:
        return sum(self._seed_count(e) * self.env.cost_of(e) for e in self.active)

    def seed_data(self) -> None:
        """Evaluate random sequences at every active fidelity, charged."""
        need = self.seeding_cost()
        budget = self.config.max_cost
        if need > budget:
            raise BudgetError(
                f"budget.max_cost: seeding needs {need:g} cost units but only {budget:g} available")
        from .sequences import random_sequence

        for k_model, env_fid in enumerate(self.active, start=1):
            for _ in range(self._seed_count(env_fid)):
                x = random_sequence(self.env.alphabet, self.env_length(), self.rng)
                record = self.env.evaluate(x, env_fid, step=self.step_index, phase="seed")
                self.stats.seed_queries += 1
                if record.failed:
                    self.stats.failed_queries += 1
                    continue
                self.dataset.level(k_model).add(x, record.score)
        if len(self.dataset.level(1)) == 0:
            raise NumericalError("seeding produced no usable data at the lowest active fidelity")
        self.phase = "al"

    def env_length(self) -> int:
        return self.env.config.length if self.env.config is not None else self.env.length

    def _build_model(self) -> MultiFidelityModel:
        return MultiFidelityModel(self.env.alphabet, self.env_length(),
                                  self.n_active, self.config.model, self.rng,
                                  dataset=self.dataset)

    def retrain(self) -> None:
        """From-scratch re-init and fit; one restart on numerical failure."""
        last_error: Exception | None = None
        for attempt in range(2):
            model = self._build_model()
            try:
                self._fit(model)
            except NumericalError as err:
                last_error = err
                log.warning("retrain attempt %d failed: %s", attempt + 1, err)
                continue
            self.model = model
            self.stats.retrains += 1
            for s in model.surrogates:
                self.stats.max_jitter = max(self.stats.max_jitter, s.max_jitter_used)
            return
        raise NumericalError(f"retraining failed twice: {last_error}")

    def _fit(self, model: MultiFidelityModel) -> None:
        cfg = self.config.training
        counts = self.dataset.counts()
        weights = np.array([float(c) for c in counts])
        if weights.sum() == 0:
            raise NumericalError("cannot train on an empty dataset")
        probs = weights / weights.sum()
        opt = Adam(model.parameters(), learning_rate=cfg.learning_rate)
        window: list[float] = []
        best = math.inf
        bad_evals = 0
        for step in range(cfg.max_steps):
            k = int(self.rng.choice(self.n_active, p=probs)) + 1
            data = self.dataset.level(k)
            take = min(cfg.batch_size, len(data))
            idx = self.rng.choice(len(data), size=take, replace=False)
            seqs = [data.sequences[i] for i in idx]
            ys = np.array([data.scores[i] for i in idx])
            # KL warmup avoids posterior collapse on unstructured sequences
            kl_scale = (min(1.0, (step + 1) / cfg.kl_warmup_steps)
                        if cfg.kl_warmup_steps else 1.0)
            loss, ce, kl, gp = model.training_loss(seqs, ys, k, len(data), self.rng,
                                                   kl_scale=kl_scale)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite training loss at step {step}")
            self.stats.min_ce = min(self.stats.min_ce, ce)
            self.stats.min_kl = min(self.stats.min_kl, kl)
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.stats.train_steps += 1
            window.append(value)
            if step + 1 <= cfg.kl_warmup_steps:
                continue  # the loss scale shifts during warmup; defer early stopping
            if len(window) >= cfg.eval_interval and (step + 1) % cfg.eval_interval == 0:
                avg = float(np.mean(window[-cfg.eval_interval:]))
                # relative-improvement threshold that also behaves for
                # negative losses (the surrogate bound can cross zero)
                threshold = (best - cfg.min_improvement * abs(best)
                             if math.isfinite(best) else math.inf)
                if avg < threshold:
                    best = avg
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= cfg.patience:
                        break

    # -- the active-learning step --------------------------------------------------

    def next_query_cost(self) -> float:
        return self.env.cost_of(self.active[self.k_model - 1])

    def al_step(self) -> QueryRecord:
        """Synthesize one query, pay the oracle, maybe escalate, retrain."""
        if self.model is None:
            raise RuntimeError("al_step requires a trained model")
        loop = self.config.controller
        k = self.k_model
        env_fid = self.active[k - 1]
        data = self.dataset.level(k)

        candidates = []
        chosen = None
        duplicate_fallback = False
        for _ in range(loop.regen_attempts + 1):
            batch = generate_high_scoring(self.model, k, self.gen_config.batch_points,
                                          BETA_ACTIVE, self.rng, self.gen_config)
            candidates.extend(c for c in batch if self.filter_fn(c.sequence))
            fresh = [c for c in candidates if not data.contains(c.sequence)]
            if fresh:
                chosen = max(fresh, key=lambda c: c.acquisition)
                break
        if chosen is None:
            if not candidates:
                raise RuntimeError(
                    "constraint filter rejected every generated candidate; "
                    "loosen the filter or raise controller.regen_attempts")
            chosen = max(candidates, key=lambda c: c.acquisition)
            duplicate_fallback = True
            self.stats.duplicate_fallbacks += 1

        record = self.env.evaluate(chosen.sequence, env_fid,
                                   step=self.step_index, phase="al")
        self.stats.al_steps += 1
        if record.failed:
            self.stats.failed_queries += 1
        elif not duplicate_fallback:
            data.add(chosen.sequence, record.score)

        if k < self.n_active:
            self.stats.escalation_checks += 1
            ratio = self.model.surrogates[k - 1].variance_ratio(chosen.latent)
            if ratio < self.gammas[k - 1]:
                self.k_model = k + 1
                self.stats.escalation_steps.append(self.step_index)
                log.info("escalating to fidelity %d (env %d) at step %d",
                         self.k_model, self.active[self.k_model - 1], self.step_index)

        self.step_index += 1
        if self.step_index % loop.retrain_every == 0:
            self.retrain()
        return record

    # -- inference -------------------------------------------------------------------

    def inference(self) -> None:
        """Collect unique high-scoring sequences at the top active fidelity."""
        loop = self.config.controller
        seen: set[tuple[int, ...]] = set()
        self.finals = []
        for _ in range(loop.final_attempts):
            if len(self.finals) >= loop.n_final:
                break
            batch = generate_high_scoring(
                self.model, self.n_active, self.gen_config.batch_points,
                BETA_FINAL, self.rng, self.gen_config,
                top_count=self.gen_config.batch_points)
            for cand in batch:
                if len(self.finals) >= loop.n_final:
                    break
                if not self.filter_fn(cand.sequence):
                    continue
                key = cand.sequence.token_ids
                if key in seen:
                    continue
                seen.add(key)
                record = self.env.evaluate(cand.sequence, self.env.n_fidelities,
                                           step=self.step_index, phase="final",
                                           charge=False)
                self.stats.final_evals += 1
                if record.failed:
                    self.stats.failed_queries += 1
                    continue
                self.finals.append((cand.sequence, record.score))
        self.finals_shortfall = len(self.finals) < loop.n_final
        if self.finals_shortfall:
            log.warning("inference found only %d of %d unique sequences",
                        len(self.finals), loop.n_final)
        self.phase = "done"

    # -- orchestration ---------------------------------------------------------------

    def run(self, checkpoint_path=None, stop_after_steps: int | None = None):
        """Execute seeding, the AL loop, and inference; emit a result.

        `stop_after_steps` pauses the loop after that many AL steps (the
        checkpoint then holds a resumable mid-run state).
        """
        from .checkpoint import save_checkpoint
        from .report import build_result

        if self.phase == "init":
            self.seed_data()
            self.retrain()
            if checkpoint_path is not None:
                save_checkpoint(self.snapshot(), checkpoint_path)
        steps_done = 0
        while self.phase == "al":
            if stop_after_steps is not None and steps_done >= stop_after_steps:
                return None
            if self.env.ledger.spent + self.next_query_cost() > self.config.max_cost:
                break
            self.al_step()
            steps_done += 1
            if checkpoint_path is not None:
                save_checkpoint(self.snapshot(), checkpoint_path)
        if self.phase != "done":
            self.inference()
        result = build_result(self)
        if checkpoint_path is not None:
            save_checkpoint(self.snapshot(), checkpoint_path)
        return result

    # -- checkpoint state ---------------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "phase": self.phase,
            "step_index": self.step_index,
            "k_model": self.k_model,
            "dataset": [
                {"sequences": [list(x.token_ids) for x in level.sequences],
                 "scores": list(level.scores)}
                for level in self.dataset.levels
            ],
            "ledger": [asdict(r) for r in self.env.ledger.records],
            "env_counters": self.env.counters_state(),
            "rng_state": self.rng.bit_generator.state,
            "model": None if self.model is None else {
                "arrays": self.model.state_arrays(),
                "inducing_sizes": self.model.inducing_sizes(),
            },
            "stats": asdict(self.stats),
            "finals": [{"token_ids": list(x.token_ids), "score": y}
                       for x, y in self.finals],
            "finals_shortfall": self.finals_shortfall,
        }

    @classmethod
    def from_snapshot(cls, payload: dict, filter_fn=None) -> "ActiveLearningRun":
        from .config import RunConfig

        config = RunConfig.from_dict(payload["config"])
        run = cls(config, payload["seed"], filter_fn=filter_fn)
        run.phase = payload["phase"]
        run.step_index = payload["step_index"]
        run.k_model = payload["k_model"]
        for level, saved in zip(run.dataset.levels, payload["dataset"], strict=True):
            for ids, score in zip(saved["sequences"], saved["scores"], strict=True):
                level.add(Sequence(tuple(ids), run.env.alphabet), score)
        for rec in payload["ledger"]:
            run.env.ledger.add(QueryRecord(**rec))
        run.env.restore_counters(payload["env_counters"])
        run.rng.bit_generator.state = payload["rng_state"]
        if payload["model"] is not None:
            throwaway = np.random.default_rng(0)
            model = MultiFidelityModel(run.env.alphabet, run.env_length(),
                                       run.n_active, config.model, throwaway,
                                       inducing_sizes=payload["model"]["inducing_sizes"])
            model.load_arrays(payload["model"]["arrays"])
            run.model = model
        run.stats = RunStats(**payload["stats"])
        run.finals = [(Sequence(tuple(f["token_ids"]), run.env.alphabet), f["score"])
                      for f in payload["finals"]]
        run.finals_shortfall = payload["finals_shortfall"]
        return run
