"""Statistical randomness test battery.

Implements the nine core tests of the standard statistical test suite for
random and pseudorandom bit generators (frequency, block frequency, runs,
longest run of ones, binary matrix rank, spectral DFT, serial, approximate
entropy, cumulative sums), each returning a p-value for one fixed-size bit
block, plus the pass-proportion bookkeeping used to aggregate many blocks:
a test passes overall when the fraction of blocks with p >= alpha stays
inside the binomial confidence band (1 - alpha) +/- 3 sqrt(alpha(1-alpha)/b).

Test parameters follow the published defaults: block frequency M = 128,
serial m = 16, approximate entropy m = 10, rank matrices 32 x 32, longest
run tables keyed on the block length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, gammaincc, ndtr

DEFAULT_BLOCK_SIZE = 1_000_000
DEFAULT_ALPHA = 0.01


class PreconditionError(ValueError):
    pass


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("bit sequence must be one-dimensional")
    return arr


def monobit(bits) -> float:
    """Frequency test: p = erfc(|sum(2b - 1)| / sqrt(2n))."""
    b = _as_bits(bits)
    n = b.size
    s = abs(2.0 * int(b.sum()) - n)
    return float(erfc(s / math.sqrt(2.0 * n)))


def block_frequency(bits, m_block: int = 128) -> float:
    """Per-block ones-fraction chi-square against 1/2."""
    b = _as_bits(bits)
    n_blocks = b.size // m_block
    if n_blocks < 1:
        raise ValueError(f"need at least one {m_block}-bit block")
    pi = b[:n_blocks * m_block].reshape(n_blocks, m_block).mean(axis=1)
    chi2 = 4.0 * m_block * float(((pi - 0.5) ** 2).sum())
    return float(gammaincc(n_blocks / 2.0, chi2 / 2.0))


def runs(bits) -> float:
    """Total number of runs versus the expectation for the observed bias."""
    b = _as_bits(bits)
    n = b.size
    pi = float(b.mean())
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return 0.0
    v = 1 + int((b[1:] != b[:-1]).sum())
    num = abs(v - 2.0 * n * pi * (1.0 - pi))
    den = 2.0 * math.sqrt(2.0 * n) * pi * (1.0 - pi)
    return float(erfc(num / den))


_LONGEST_RUN_TABLES = (
    # (min n, M, class boundaries [lo, hi], class probabilities)
    (128, 8, (1, 4),
     (0.21484375, 0.3671875, 0.23046875, 0.1875)),
    (6272, 128, (4, 9),
     (0.1174035788, 0.242955959, 0.249363483, 0.17517706, 0.102701071, 0.112398847)),
    (750000, 10000, (10, 16),
     (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
)


def _longest_run_of_ones(arr: np.ndarray) -> int:
    if not arr.any():
        return 0
    edges = np.diff(np.concatenate(([0], arr, [0])).astype(np.int8))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return int((ends - starts).max())


def longest_run(bits) -> float:
    """Longest run of ones within fixed sub-blocks, chi-square over run classes."""
    b = _as_bits(bits)
    n = b.size
    if n < 128:
        raise ValueError("longest-run test needs at least 128 bits")
    for min_n, m_block, (lo, hi), probs in reversed(_LONGEST_RUN_TABLES):
        if n >= min_n:
            break
    n_blocks = n // m_block
    counts = np.zeros(len(probs), dtype=np.int64)
    chunks = b[:n_blocks * m_block].reshape(n_blocks, m_block)
    for chunk in chunks:
        run = _longest_run_of_ones(chunk)
        counts[min(max(run, lo), hi) - lo] += 1
    expected = n_blocks * np.asarray(probs)
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    k = len(probs) - 1
    return float(gammaincc(k / 2.0, chi2 / 2.0))


def _rank_probabilities(size: int = 32):
    """Exact rank distribution of a random size x size GF(2) matrix (full, -1, rest)."""
    def p_rank(r):
        log2p = r * (2 * size - r) - size * size
        val = 2.0 ** log2p
        for i in range(r):
            val *= (1.0 - 2.0 ** (i - size)) ** 2 / (1.0 - 2.0 ** (i - r))
        return val
    p_full = p_rank(size)
    p_minus1 = p_rank(size - 1)
    return p_full, p_minus1, 1.0 - p_full - p_minus1


_RANK_PROBS = _rank_probabilities(32)


def _batched_rank32(mats: np.ndarray) -> np.ndarray:
    """GF(2) ranks of many 32 x 32 matrices given as (B, 32) packed uint32 rows."""
    m = mats.astype(np.uint32).copy()
    n_mat = m.shape[0]
    used = np.zeros((n_mat, 32), dtype=bool)
    rank = np.zeros(n_mat, dtype=np.int64)
    idx = np.arange(n_mat)
    for col in range(32):
        bit = np.uint32(1 << (31 - col))
        has_bit = (m & bit) != 0
        avail = has_bit & ~used
        any_avail = avail.any(axis=1)
        pivot = np.argmax(avail, axis=1)
        used[idx[any_avail], pivot[any_avail]] = True
        rank += any_avail
        pivot_rows = np.where(any_avail, m[idx, pivot], np.uint32(0))
        elim = has_bit
        elim[idx, pivot] = False
        m ^= np.where(elim, pivot_rows[:, None], np.uint32(0))
    return rank


def binary_matrix_rank(bits) -> float:
    """Rank statistics of consecutive 32 x 32 GF(2) matrices."""
    b = _as_bits(bits)
    n_mat = b.size // 1024
    if n_mat < 38:
        raise ValueError("rank test needs at least 38 * 1024 bits")
    packed = np.packbits(b[:n_mat * 1024].reshape(n_mat, 32, 32), axis=2)
    rows = ((packed[:, :, 0].astype(np.uint32) << 24)
            | (packed[:, :, 1].astype(np.uint32) << 16)
            | (packed[:, :, 2].astype(np.uint32) << 8)
            | packed[:, :, 3].astype(np.uint32))
    ranks = _batched_rank32(rows)
    observed = np.array([(ranks == 32).sum(), (ranks == 31).sum(),
                         (ranks <= 30).sum()], dtype=np.float64)
    expected = n_mat * np.asarray(_RANK_PROBS)
    chi2 = float(((observed - expected) ** 2 / expected).sum())
    return float(math.exp(-chi2 / 2.0))


def spectral(bits) -> float:
    """Discrete Fourier transform test on the +/-1 sequence."""
    b = _as_bits(bits)
    n = b.size
    if n < 1000:
        raise ValueError("spectral test needs at least 1000 bits")
    x = 2.0 * b.astype(np.float64) - 1.0
    magnitudes = np.abs(np.fft.rfft(x))[:n // 2]
    threshold = math.sqrt(math.log(1.0 / 0.05) * n)
    n0 = 0.95 * n / 2.0
    n1 = float((magnitudes < threshold).sum())
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4.0)
    return float(erfc(abs(d) / math.sqrt(2.0)))


def _overlapping_counts(b: np.ndarray, m: int) -> np.ndarray:
    """Occurrences of every m-bit pattern over the circularly extended sequence."""
    n = b.size
    ext = np.concatenate([b, b[:m - 1]]).astype(np.int64)
    codes = np.zeros(n, dtype=np.int64)
    for j in range(m):
        codes += ext[j:j + n] << (m - 1 - j)
    return np.bincount(codes, minlength=1 << m)


def _psi_squared(counts: np.ndarray, n: int, m: int) -> float:
    return float((counts.astype(np.float64) ** 2).sum() * (1 << m) / n - n)


def serial(bits, m: int = 16) -> tuple[float, float]:
    """Overlapping m-bit pattern uniformity; returns the p-value pair (p1, p2)."""
    b = _as_bits(bits)
    n = b.size
    if m < 2:
        raise ValueError("serial test needs m >= 2")
    if n < (1 << m):
        raise ValueError(f"serial test with m={m} needs at least {1 << m} bits")
    counts_m = _overlapping_counts(b, m)
    counts_m1 = counts_m.reshape(-1, 2).sum(axis=1)
    counts_m2 = counts_m1.reshape(-1, 2).sum(axis=1)
    psi_m = _psi_squared(counts_m, n, m)
    psi_m1 = _psi_squared(counts_m1, n, m - 1)
    psi_m2 = _psi_squared(counts_m2, n, m - 2)
    del1 = psi_m - psi_m1
    del2 = psi_m - 2.0 * psi_m1 + psi_m2
    p1 = float(gammaincc(2 ** (m - 2), del1 / 2.0))
    p2 = float(gammaincc(2 ** (m - 3), del2 / 2.0))
    return p1, p2


def approximate_entropy(bits, m: int = 10) -> float:
    """Approximate entropy of overlapping m- and (m+1)-bit patterns."""
    b = _as_bits(bits)
    n = b.size
    if n < (1 << (m + 1)):
        raise ValueError(f"approximate-entropy test with m={m} needs more bits")

    def phi(mm):
        counts = _overlapping_counts(b, mm)
        nz = counts[counts > 0].astype(np.float64) / n
        return float((nz * np.log(nz)).sum())

    apen = phi(m) - phi(m + 1)
    chi2 = 2.0 * n * (math.log(2.0) - apen)
    return float(gammaincc(2 ** (m - 1), chi2 / 2.0))


def cumulative_sums(bits, mode: str = "forward") -> float:
    """Maximum excursion of the +/-1 random walk."""
    b = _as_bits(bits)
    n = b.size
    if mode == "backward":
        b = b[::-1]
    elif mode != "forward":
        raise ValueError(f"mode must be 'forward' or 'backward', got {mode!r}")
    walk = np.cumsum(2.0 * b.astype(np.int64) - 1.0)
    z = float(np.abs(walk).max())
    if z == 0.0:
        return 0.0
    sqrt_n = math.sqrt(n)

    # Range bounds truncate toward zero, matching the reference implementation.
    k1 = np.arange(math.trunc((-n / z + 1) / 4), math.trunc((n / z - 1) / 4) + 1)
    term1 = (ndtr((4 * k1 + 1) * z / sqrt_n) - ndtr((4 * k1 - 1) * z / sqrt_n)).sum()
    k2 = np.arange(math.trunc((-n / z - 3) / 4), math.trunc((n / z - 1) / 4) + 1)
    term2 = (ndtr((4 * k2 + 3) * z / sqrt_n) - ndtr((4 * k2 + 1) * z / sqrt_n)).sum()
    return float(min(1.0, max(0.0, 1.0 - term1 + term2)))


# Registry: test id -> single-p-value callable. The serial test's standard
# definition yields two p-values; the suite tracks the first.
TEST_IDS = (
    "monobit-frequency",
    "block-frequency",
    "runs",
    "longest-run",
    "binary-matrix-rank",
    "spectral-dft",
    "serial",
    "approximate-entropy",
    "cumulative-sums",
)

_DISPATCH = {
    "monobit-frequency": monobit,
    "block-frequency": block_frequency,
    "runs": runs,
    "longest-run": longest_run,
    "binary-matrix-rank": binary_matrix_rank,
    "spectral-dft": spectral,
    "serial": lambda bits: serial(bits)[0],
    "approximate-entropy": approximate_entropy,
    "cumulative-sums": cumulative_sums,
}


def run_test(test_id: str, block, block_size: int = DEFAULT_BLOCK_SIZE) -> float:
    """Run one named test on a block of exactly block_size bits."""
    if test_id not in _DISPATCH:
        raise ValueError(f"unknown test id {test_id!r}; known: {', '.join(TEST_IDS)}")
    b = _as_bits(block)
    if b.size != block_size:
        raise ValueError(f"block must hold exactly {block_size} bits, got {b.size}")
    return _DISPATCH[test_id](b)


def proportion_confidence(alpha: float, b: int) -> tuple[float, float]:
    """Acceptance band (1 - alpha) +/- 3 sqrt(alpha (1 - alpha) / b) for the pass proportion."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if b < 1:
        raise ValueError(f"block count must be >= 1, got {b!r}")
    center = 1.0 - alpha
    half_width = 3.0 * math.sqrt(alpha * (1.0 - alpha) / b)
    return center - half_width, center + half_width


@dataclass
class TestReport:
    """Aggregated result of one test across all blocks of a run."""

    test_name: str
    p_values: list
    pass_proportion: float
    interval: tuple[float, float]
    passed: bool
    mean_p: float
    std_p: float

    def to_dict(self) -> dict:
        return {
            "name": self.test_name,
            "mean_p": self.mean_p,
            "std_p": self.std_p,
            "proportion": self.pass_proportion,
            "interval": list(self.interval),
            "verdict": "pass" if self.passed else "fail",
            "p_values": list(self.p_values),
        }


def run_suite(bits, block_size: int = DEFAULT_BLOCK_SIZE,
              alpha: float = DEFAULT_ALPHA, test_ids=TEST_IDS) -> list[TestReport]:
    """Split a sequence into blocks, run every test on each, aggregate verdicts.

    A test passes when its pass proportion reaches the lower edge of
    proportion_confidence(alpha, num_blocks).
    """
    b = _as_bits(bits)
    num_blocks = b.size // block_size
    if num_blocks < 2:
        raise PreconditionError(
            f"need at least 2 full blocks of {block_size} bits, got {b.size} bits")
    unknown = [t for t in test_ids if t not in _DISPATCH]
    if unknown:
        raise ValueError(f"unknown test ids: {unknown}")
    blocks = b[:num_blocks * block_size].reshape(num_blocks, block_size)
    interval = proportion_confidence(alpha, num_blocks)
    reports = []
    for test_id in test_ids:
        fn = _DISPATCH[test_id]
        p_values = [float(fn(blocks[i])) for i in range(num_blocks)]
        arr = np.asarray(p_values)
        proportion = float((arr >= alpha).mean())
        reports.append(TestReport(
            test_name=test_id,
            p_values=p_values,
            pass_proportion=proportion,
            interval=interval,
            passed=proportion >= interval[0],
            mean_p=float(arr.mean()),
            std_p=float(arr.std()),
        ))
    return reports
