import itertools
import os
import textwrap

import numpy as np
import pytest

from mflo.oracles import (
    ExternalEnvironment,
    ExternalOracleSpec,
    OracleFailure,
    SyntheticEnvConfig,
    SyntheticEnvironment,
    external_command_oracle,
)
from mflo.sequences import Alphabet, Sequence, random_sequence


@pytest.fixture
def env():
    return SyntheticEnvironment(SyntheticEnvConfig(seed=99))


def make_seq(env, rng):
    return random_sequence(env.alphabet, env.config.length, rng)


class TestTrueScore:
    def test_zero_weights_zero_score(self, env):
        env.primary_weights[:] = 0.0
        env.pair_weights[:] = 0.0
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert env.true_score(make_seq(env, rng)) == 0.0

    def test_deterministic(self, env):
        x = make_seq(env, np.random.default_rng(1))
        assert env.true_score(x) == env.true_score(x)

    def test_exhaustive_minimum_matches_enumeration(self):
        cfg = SyntheticEnvConfig(seed=7, alphabet_size=3, length=4,
                                 rho=(0.5, 1.0), noise=(0.5, 0.0), cost=(1.0, 10.0))
        env = SyntheticEnvironment(cfg)
        w1, w2 = env.primary_weights, env.pair_weights

        def independent_score(ids):
            total = 0.0
            for i, t in enumerate(ids):
                total += w1[i, t]
            for i in range(len(ids) - 1):
                total += w2[i, ids[i], ids[i + 1]]
            return total

        space = list(itertools.product(range(3), repeat=4))
        best_brute = min(space, key=independent_score)
        best_env = min(space, key=lambda ids: env.true_score(Sequence(ids, env.alphabet)))
        assert best_env == best_brute
        assert env.true_score(Sequence(best_brute, env.alphabet)) == pytest.approx(
            independent_score(best_brute))


class TestEvaluate:
    def test_top_fidelity_is_truth(self, env):
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = make_seq(env, rng)
            record = env.evaluate(x, env.n_fidelities, step=0, phase="seed")
            assert record.score == env.true_score(x)

    def test_ledger_accounting(self, env):
        rng = np.random.default_rng(3)
        for _ in range(7):
            env.evaluate(make_seq(env, rng), 2, step=0, phase="seed")
        assert env.ledger.spent == pytest.approx(7 * env.config.cost[1])
        assert env.ledger.count_at(2) == 7
        assert env.ledger.recompute_spent() == pytest.approx(env.ledger.spent)

    def test_uncharged_query_costs_nothing(self, env):
        x = make_seq(env, np.random.default_rng(4))
        record = env.evaluate(x, 4, step=0, phase="final", charge=False)
        assert record.cost == 0.0
        assert env.ledger.spent == 0.0

    def test_correlation_ladder_strictly_increasing(self, env):
        corr = env.fidelity_correlations(2000)
        assert len(corr) == 4
        assert all(b > a for a, b in zip(corr, corr[1:]))
        assert corr[-1] == pytest.approx(1.0)

    def test_bit_identical_across_runs(self):
        def collect():
            e = SyntheticEnvironment(SyntheticEnvConfig(seed=5))
            rng = np.random.default_rng(6)
            out = []
            for _ in range(10):
                x = make_seq(e, rng)
                for k in (1, 2, 3, 4):
                    out.append(e.evaluate(x, k, step=0, phase="seed").score)
            return out

        assert collect() == collect()

    def test_noise_stream_isolated_from_global_rng(self):
        # drawing model-side randomness between queries must not shift scores
        e1 = SyntheticEnvironment(SyntheticEnvConfig(seed=8))
        e2 = SyntheticEnvironment(SyntheticEnvConfig(seed=8))
        rng = np.random.default_rng(9)
        xs = [make_seq(e1, rng) for _ in range(5)]
        a = [e1.evaluate(x, 2, step=0, phase="seed").score for x in xs]
        b = []
        for x in xs:
            np.random.default_rng().normal(size=100)  # unrelated randomness
            b.append(e2.evaluate(x, 2, step=0, phase="seed").score)
        assert a == b

    def test_distortions_independent_across_fidelities(self, env):
        rng = np.random.default_rng(10)
        seqs = [make_seq(env, rng) for _ in range(2000)]
        d1 = np.array([env.distortion(x, 1) for x in seqs])
        d2 = np.array([env.distortion(x, 2) for x in seqs])
        d3 = np.array([env.distortion(x, 3) for x in seqs])
        assert abs(np.corrcoef(d1, d2)[0, 1]) < 0.1
        assert abs(np.corrcoef(d2, d3)[0, 1]) < 0.1

    def test_fidelity_out_of_range(self, env):
        x = make_seq(env, np.random.default_rng(11))
        with pytest.raises(ValueError):
            env.evaluate(x, 5, step=0, phase="seed")


class TestEnvConfigValidation:
    def test_rho_must_increase(self):
        with pytest.raises(ValueError, match="rho"):
            SyntheticEnvConfig(rho=(0.9, 0.5, 1.0), noise=(1, 0.5, 0),
                               cost=(1, 2, 3)).validate()

    def test_top_noise_must_be_zero(self):
        with pytest.raises(ValueError, match="noise"):
            SyntheticEnvConfig(rho=(0.5, 1.0), noise=(1.0, 0.1),
                               cost=(1, 2)).validate()

    def test_costs_must_increase(self):
        with pytest.raises(ValueError, match="cost"):
            SyntheticEnvConfig(rho=(0.5, 1.0), noise=(1.0, 0.0),
                               cost=(5, 5)).validate()


@pytest.fixture
def stubs(tmp_path):
    ok = tmp_path / "ok_stub.py"
    ok.write_text("print(1.5)\n")
    sleeper = tmp_path / "sleep_stub.py"
    sleeper.write_text("import time\ntime.sleep(5)\nprint(0.0)\n")
    bad = tmp_path / "bad_stub.py"
    bad.write_text("print('abc')\n")
    crash = tmp_path / "crash_stub.py"
    crash.write_text("import sys\nsys.exit(3)\n")
    return {name.stem: name for name in (ok, sleeper, bad, crash)}


@pytest.fixture
def seq():
    return Sequence((0, 1, 2), Alphabet.default(4))


class TestExternalCommandOracle:
    def test_stub_round_trip(self, stubs, seq):
        got = external_command_oracle(seq, f"python3 {stubs['ok_stub']} {{sequence}}")
        assert got == 1.5

    def test_timeout_fails_query(self, stubs, seq):
        with pytest.raises(OracleFailure, match="timed out"):
            external_command_oracle(seq, f"python3 {stubs['sleep_stub']} {{sequence}}",
                                    timeout_secs=0.2)

    def test_malformed_output_fails_with_parse_diagnostic(self, stubs, seq):
        with pytest.raises(OracleFailure, match="not parseable"):
            external_command_oracle(seq, f"python3 {stubs['bad_stub']} {{sequence}}")

    def test_nonzero_exit_fails(self, stubs, seq):
        with pytest.raises(OracleFailure, match="exited 3"):
            external_command_oracle(seq, f"python3 {stubs['crash_stub']} {{sequence}}")

    def test_env_var_overrides_timeout(self, stubs, seq, monkeypatch):
        monkeypatch.setenv("MFLO_ORACLE_TIMEOUT_SECS", "0.2")
        with pytest.raises(OracleFailure, match="timed out"):
            external_command_oracle(seq, f"python3 {stubs['sleep_stub']} {{sequence}}",
                                    timeout_secs=60.0)

    def test_template_requires_placeholder(self, seq):
        with pytest.raises(ValueError, match="placeholder"):
            external_command_oracle(seq, "python3 whatever.py")


class TestExternalEnvironment:
    def test_failed_query_still_charged(self, stubs, seq):
        env = ExternalEnvironment(
            [ExternalOracleSpec(f"python3 {stubs['crash_stub']} {{sequence}}", cost=2.0)],
            seq.alphabet, length=3)
        record = env.evaluate(seq, 1, step=0, phase="al")
        assert record.failed
        assert record.score is None
        assert record.cost == 2.0
        assert env.ledger.spent == 2.0

    def test_successful_query(self, stubs, seq):
        env = ExternalEnvironment(
            [ExternalOracleSpec(f"python3 {stubs['ok_stub']} {{sequence}}", cost=1.0),
             ExternalOracleSpec(f"python3 {stubs['ok_stub']} {{sequence}}", cost=5.0)],
            seq.alphabet, length=3)
        record = env.evaluate(seq, 2, step=1, phase="al")
        assert not record.failed
        assert record.score == 1.5

    def test_costs_must_increase(self, stubs, seq):
        with pytest.raises(ValueError, match="cost"):
            ExternalEnvironment(
                [ExternalOracleSpec("x {sequence}", cost=3.0),
                 ExternalOracleSpec("y {sequence}", cost=1.0)],
                seq.alphabet, length=3)
