from collections import Counter

import numpy as np
import pytest

from mdiqrng import stats as S


def bits(s: str) -> np.ndarray:
    return np.array([int(c) for c in s], dtype=np.uint8)


# First 100 bits of the binary expansion of pi, the worked example data of the
# published test-suite definition document.
PI_100 = bits(
    "1100100100001111110110101010001000100001011010001100"
    "001000110100110001001100011001100000101000010111")

LONGEST_RUN_128 = bits(
    "11001100000101010110110001001100111000000000001001"
    "00110101010001000100111101011010000000110101111100"
    "1100111001101101100010110010")


class TestPublishedVectors:
    """Worked examples from the published test definitions."""

    def test_monobit_pi(self):
        assert S.monobit(PI_100) == pytest.approx(0.109599, abs=1e-6)

    def test_monobit_small(self):
        assert S.monobit(bits("1011010101")) == pytest.approx(0.527089, abs=1e-6)

    def test_block_frequency(self):
        assert S.block_frequency(bits("0110011010"), 3) == pytest.approx(
            0.801252, abs=1e-6)

    def test_runs(self):
        assert S.runs(bits("1001101011")) == pytest.approx(0.147232, abs=1e-6)

    def test_longest_run_128(self):
        assert S.longest_run(LONGEST_RUN_128) == pytest.approx(0.180609, abs=1e-6)

    def test_serial(self):
        p1, p2 = S.serial(bits("0011011101"), 3)
        assert p1 == pytest.approx(0.808792, abs=1e-6)
        assert p2 == pytest.approx(0.670320, abs=1e-6)

    def test_cumulative_sums(self):
        assert S.cumulative_sums(bits("1011010111")) == pytest.approx(
            0.4116588, abs=1e-6)


class TestMonobit:
    def test_balanced_block(self):
        b = np.tile(np.array([0, 1], dtype=np.uint8), 500)
        assert S.monobit(b) == 1.0

    def test_58_ones_in_100(self):
        b = np.concatenate([np.ones(58, np.uint8), np.zeros(42, np.uint8)])
        assert S.monobit(b) == pytest.approx(0.10959858, abs=1e-6)

    def test_all_ones_fails(self):
        assert S.monobit(np.ones(10_000, np.uint8)) < 1e-20


class TestCrossChecks:
    """Independent brute-force oracles for the pattern-counting tests."""

    @staticmethod
    def naive_overlapping_counts(b, m):
        seq = list(b) + list(b[:m - 1])
        counter = Counter(
            int("".join(str(x) for x in seq[i:i + m]), 2) for i in range(len(b)))
        out = np.zeros(1 << m, dtype=np.int64)
        for code, cnt in counter.items():
            out[code] = cnt
        return out

    def test_overlapping_counts_match_naive(self):
        rng = np.random.default_rng(11)
        for m in (2, 3, 5, 8):
            b = rng.integers(0, 2, 2000, dtype=np.uint8)
            fast = S._overlapping_counts(b, m)
            assert np.array_equal(fast, self.naive_overlapping_counts(b, m))

    @staticmethod
    def naive_rank(rows):
        rows = list(int(r) for r in rows)
        rank = 0
        for bit in reversed(range(32)):
            piv = next((i for i, r in enumerate(rows) if (r >> bit) & 1), None)
            if piv is None:
                continue
            pivot = rows.pop(piv)
            rank += 1
            rows = [r ^ pivot if (r >> bit) & 1 else r for r in rows]
        return rank

    def test_batched_rank_matches_naive(self):
        rng = np.random.default_rng(12)
        mats = rng.integers(0, 2 ** 32, size=(80, 32), dtype=np.uint64)
        mats = mats.astype(np.uint32)
        got = S._batched_rank32(mats)
        expected = [self.naive_rank(row) for row in mats]
        assert list(got) == expected

    def test_rank_of_degenerate_matrices(self):
        identity = np.array([1 << (31 - i) for i in range(32)], dtype=np.uint32)
        repeated = np.full(32, 0x8000_0001, dtype=np.uint32)
        mats = np.stack([identity, repeated, np.zeros(32, np.uint32)])
        assert list(S._batched_rank32(mats)) == [32, 1, 0]

    def test_longest_run_finder(self):
        assert S._longest_run_of_ones(bits("0110111101")) == 4
        assert S._longest_run_of_ones(np.zeros(16, np.uint8)) == 0
        assert S._longest_run_of_ones(np.ones(7, np.uint8)) == 7


class TestProportionConfidence:
    def test_published_interval(self):
        lo, hi = S.proportion_confidence(0.01, 5000)
        assert round(lo, 4) == 0.9858
        assert round(hi, 4) == 0.9942

    def test_formula_at_b_1000(self):
        lo, hi = S.proportion_confidence(0.01, 1000)
        assert lo == pytest.approx(0.98056, abs=5e-6)
        assert hi == pytest.approx(0.99944, abs=5e-6)

    def test_width_shrinks(self):
        lo, hi = S.proportion_confidence(0.01, 10 ** 12)
        assert hi - lo < 1e-4
        assert lo == pytest.approx(0.99, abs=1e-4)

    def test_errors(self):
        with pytest.raises(ValueError):
            S.proportion_confidence(0.0, 100)
        with pytest.raises(ValueError):
            S.proportion_confidence(0.01, 0)


class TestRunTest:
    def test_unknown_id(self):
        with pytest.raises(ValueError):
            S.run_test("not-a-test", np.zeros(100, np.uint8), 100)

    def test_wrong_block_size(self):
        with pytest.raises(ValueError):
            S.run_test("monobit-frequency", np.zeros(99, np.uint8), 100)

    def test_dispatch_matches_direct_call(self):
        rng = np.random.default_rng(13)
        block = rng.integers(0, 2, 100_000, dtype=np.uint8)
        assert S.run_test("monobit-frequency", block, 100_000) == S.monobit(block)
        assert S.run_test("serial", block, 100_000) == S.serial(block)[0]


class TestRunSuite:
    def test_insufficient_data(self):
        with pytest.raises(S.PreconditionError):
            S.run_suite(np.zeros(0, np.uint8))
        with pytest.raises(S.PreconditionError):
            S.run_suite(np.zeros(100_000, np.uint8), block_size=100_000)

    def test_alternating_adversary(self):
        # 0101... counts as balanced for monobit but is maximally structured.
        block = np.tile(np.array([0, 1], np.uint8), 200_000)
        stream = np.tile(block, 4)
        reports = {r.test_name: r for r in S.run_suite(stream, 400_000)}
        assert reports["monobit-frequency"].pass_proportion == 1.0
        assert reports["runs"].pass_proportion == 0.0
        assert reports["serial"].pass_proportion == 0.0
        assert all(p < 1e-10 for p in reports["runs"].p_values)
        assert all(p < 1e-10 for p in reports["serial"].p_values)

    def test_null_source_behaves(self):
        rng = np.random.default_rng(14)
        stream = rng.integers(0, 2, 10 * 200_000, dtype=np.uint8)
        reports = S.run_suite(stream, 200_000)
        assert len(reports) == len(S.TEST_IDS)
        for r in reports:
            assert 0.1 < r.mean_p < 0.9, r.test_name
            assert r.pass_proportion >= 0.8, r.test_name
            assert r.interval == S.proportion_confidence(0.01, 10)

    def test_determinism(self):
        rng = np.random.default_rng(15)
        stream = rng.integers(0, 2, 4 * 100_000, dtype=np.uint8)
        a = S.run_suite(stream, 100_000)
        b = S.run_suite(stream.copy(), 100_000)
        assert [r.p_values for r in a] == [r.p_values for r in b]

    def test_report_dict(self):
        rng = np.random.default_rng(16)
        stream = rng.integers(0, 2, 2 * 100_000, dtype=np.uint8)
        doc = S.run_suite(stream, 100_000)[0].to_dict()
        for key in ("name", "mean_p", "std_p", "proportion", "interval", "verdict"):
            assert key in doc


class TestSpectralCalibration:
    def test_flat_spectrum_of_null_source(self):
        rng = np.random.default_rng(17)
        p = S.spectral(rng.integers(0, 2, 1_000_000, dtype=np.uint8))
        assert p > 0.01

    def test_periodic_sequence_fails(self):
        # Period-4 pattern concentrates spectral mass above the threshold.
        block = np.tile(np.array([1, 1, 0, 0], np.uint8), 250_000)
        assert S.spectral(block) < 1e-6
