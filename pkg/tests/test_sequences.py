import numpy as np
import pytest
from scipy.stats import chisquare

from mflo.sequences import (
    Alphabet,
    Sequence,
    decode_greedy,
    decode_sample,
    encode_one_hot,
    fingerprint_similarity,
    random_sequence,
)


@pytest.fixture
def ab2():
    return Alphabet.default(2)


@pytest.fixture
def ab12():
    return Alphabet.default(12)


class TestAlphabet:
    def test_default_has_pad_first(self, ab12):
        assert ab12.size == 12
        assert ab12.tokens[ab12.pad_index] == "_"

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            Alphabet(("a", "a"))

    def test_rejects_multichar_tokens(self):
        with pytest.raises(ValueError):
            Alphabet(("ab", "c"))

    def test_string_round_trip(self, ab12):
        s = Sequence((0, 3, 11, 1), ab12)
        assert Sequence.from_string(s.to_string(), ab12) == s


class TestOneHot:
    def test_two_by_two(self, ab2):
        x = Sequence((0, 1), ab2)
        assert np.array_equal(encode_one_hot(x).data, [1.0, 0.0, 0.0, 1.0])

    def test_all_pad(self, ab12):
        x = Sequence((0,) * 5, ab12)
        enc = encode_one_hot(x).data.reshape(5, 12)
        assert np.array_equal(enc[:, 0], np.ones(5))
        assert enc.sum() == 5.0

    def test_sums_to_length(self, ab12):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = random_sequence(ab12, 10, rng)
            assert encode_one_hot(x).data.sum() == len(x)

    def test_invalid_token_rejected(self, ab2):
        with pytest.raises(ValueError):
            Sequence((0, 2), ab2)

    def test_greedy_round_trip(self, ab12):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = random_sequence(ab12, 10, rng)
            logits = encode_one_hot(x).data.reshape(10, 12)
            assert decode_greedy(logits, ab12) == x


class TestDecodeSample:
    def test_temperature_zero_is_argmax(self, ab12):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(10, 12))
        want = decode_greedy(logits, ab12)
        got = decode_sample(logits, ab12, 0.0, np.random.default_rng(3))
        assert got == want

    def test_same_seed_same_draw(self, ab12):
        logits = np.zeros((10, 12))
        a = decode_sample(logits, ab12, 1.0, np.random.default_rng(5))
        b = decode_sample(logits, ab12, 1.0, np.random.default_rng(5))
        assert a == b

    def test_uniform_logits_equiprobable(self, ab12):
        # chi-square over 10k single-position samples
        rng = np.random.default_rng(6)
        counts = np.zeros(12)
        for _ in range(10_000):
            s = decode_sample(np.zeros((1, 12)), ab12, 1.0, rng)
            counts[s.token_ids[0]] += 1
        assert chisquare(counts).pvalue > 0.01

    def test_nan_logits_rejected(self, ab12):
        bad = np.zeros((3, 12))
        bad[1, 4] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            decode_sample(bad, ab12, 1.0, np.random.default_rng(0))

    def test_negative_temperature_rejected(self, ab12):
        with pytest.raises(ValueError):
            decode_sample(np.zeros((2, 12)), ab12, -1.0, np.random.default_rng(0))


class TestFingerprint:
    def test_self_similarity_one(self, ab12):
        rng = np.random.default_rng(7)
        x = random_sequence(ab12, 10, rng)
        assert fingerprint_similarity(x, x) == 1.0

    def test_disjoint_alphabet_subsets_zero(self, ab12):
        a = Sequence((1, 2, 1, 2), ab12)
        b = Sequence((3, 4, 3, 4), ab12)
        assert fingerprint_similarity(a, b) == 0.0

    def test_hand_enumerated_case(self):
        # {01,12,23} vs {01,12,24}: intersection 2, union 4
        ab = Alphabet.default(5)
        a = Sequence((0, 1, 2, 3), ab)
        b = Sequence((0, 1, 2, 4), ab)
        assert fingerprint_similarity(a, b) == pytest.approx(0.5)

    def test_symmetric_and_bounded(self, ab12):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            a = random_sequence(ab12, 10, rng)
            b = random_sequence(ab12, 10, rng)
            s = fingerprint_similarity(a, b)
            assert 0.0 <= s <= 1.0
            assert s == fingerprint_similarity(b, a)
