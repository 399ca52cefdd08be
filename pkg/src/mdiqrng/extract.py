"""Toeplitz-hashing randomness extraction.

The raw generation bits are compressed with an m x n binary Toeplitz matrix
T built from a seed of n + m - 1 bits taken from the front of the raw
sequence. The output length comes from the leftover hash lemma applied to
the empirical min-entropy of 8-bit strings:

    m = floor((n / 8) * h8 - 2 * log2(1 / epsilon)),  clamped to [0, n],

with n = 400 and epsilon = 2^-100 as defaults. The remaining raw bits are
split into n-bit blocks (trailing partial block dropped) and the extracted
sequence is the concatenation of the GF(2) products T x_1, T x_2, ...

Indexing convention (normative for golden files): T[i][j] = seed[m-1+j-i],
so the first row reads seed[m-1 .. n+m-1) left to right and the first
column spans seed[0 .. m) upward from the bottom, sharing seed[m-1] at the
corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_BLOCK_BITS = 400
DEFAULT_EPSILON = 2.0 ** -100

# float32 matmul keeps every partial sum an exact small integer (<= n), so
# the fast path is exact; chunking keeps the working set small.
_FAST_CHUNK_BLOCKS = 65536


class PreconditionError(ValueError):
    """Input data does not satisfy an operation's stated precondition."""


def estimate_min_entropy_8(bits) -> float:
    """Empirical min-entropy of non-overlapping 8-bit strings, in bits.

    -log2 of the maximal byte frequency; 8.0 for a perfectly uniform byte
    histogram, 0.0 for a constant byte.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size < 8 * 256:
        raise PreconditionError(
            f"need at least {8 * 256} bits to populate the byte histogram, "
            f"got {bits.size}")
    n_bytes = bits.size // 8
    values = np.packbits(bits[:n_bytes * 8])
    counts = np.bincount(values, minlength=256)
    p_max = counts.max() / n_bytes
    return float(-math.log2(p_max))


def output_length(h8: float, n: int = DEFAULT_BLOCK_BITS,
                  epsilon: float = DEFAULT_EPSILON) -> int:
    """Extractable bits per n-bit block under the leftover hash lemma.

    h8 is the per-8-bit-string min-entropy; the security cost is
    2 * log2(1/epsilon). Returns 0 when the entropy budget is below the
    security cost.
    """
    if not 0.0 <= h8 <= 8.0:
        raise ValueError(f"h8 must lie in [0, 8], got {h8!r}")
    if n <= 0 or n % 8 != 0:
        raise ValueError(f"n must be a positive multiple of 8, got {n!r}")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon!r}")
    budget = (n / 8.0) * h8 - 2.0 * math.log2(1.0 / epsilon)
    return int(min(n, max(0, math.floor(budget))))


@dataclass(frozen=True)
class ExtractionParams:
    """Frozen extraction run parameters."""

    n: int = DEFAULT_BLOCK_BITS
    epsilon: float = DEFAULT_EPSILON
    h8: float = 8.0
    m: int = 200

    def __post_init__(self):
        if not 0.0 <= self.h8 <= 8.0:
            raise ValueError("h8 must lie in [0, 8]")
        if not 0 <= self.m < self.n:
            raise ValueError("m must satisfy 0 <= m < n")

    @classmethod
    def for_stream(cls, bits, n: int = DEFAULT_BLOCK_BITS,
                   epsilon: float = DEFAULT_EPSILON) -> "ExtractionParams":
        """Measure h8 on the stream and derive m."""
        h8 = estimate_min_entropy_8(bits)
        return cls(n=n, epsilon=epsilon, h8=h8, m=output_length(h8, n, epsilon))

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "epsilon": self.epsilon,
                "h8": self.h8, "seed_offset": self.seed_bits}

    @property
    def seed_bits(self) -> int:
        return self.n + self.m - 1


@dataclass(frozen=True)
class ToeplitzMatrix:
    """m x n binary Toeplitz matrix defined by a seed of n + m - 1 bits."""

    n: int
    m: int
    seed: np.ndarray

    def __post_init__(self):
        seed = np.asarray(self.seed, dtype=np.uint8)
        if seed.ndim != 1 or seed.size != self.n + self.m - 1:
            raise ValueError(
                f"seed must hold n + m - 1 = {self.n + self.m - 1} bits, "
                f"got {seed.size}")
        if self.n <= 0 or self.m <= 0:
            raise ValueError("matrix dimensions must be positive")
        object.__setattr__(self, "seed", seed)

    def element(self, i: int, j: int) -> int:
        """T[i][j] = seed[m - 1 + j - i]."""
        if not (0 <= i < self.m and 0 <= j < self.n):
            raise IndexError(f"({i}, {j}) outside {self.m} x {self.n}")
        return int(self.seed[self.m - 1 + j - i])

    def dense(self) -> np.ndarray:
        """Materialize the full matrix (small n, m only)."""
        i = np.arange(self.m)[:, None]
        j = np.arange(self.n)[None, :]
        return self.seed[self.m - 1 + j - i]


def build_toeplitz(seed, n: int, m: int) -> ToeplitzMatrix:
    """Construct the extraction matrix from a seed bit vector."""
    return ToeplitzMatrix(n=n, m=m, seed=np.asarray(seed, dtype=np.uint8))


def toeplitz_multiply_naive(matrix: ToeplitzMatrix, block) -> np.ndarray:
    """Row-by-row GF(2) matrix-vector product; the reference oracle."""
    block = np.asarray(block, dtype=np.uint8)
    if block.size != matrix.n:
        raise ValueError(f"block must hold {matrix.n} bits, got {block.size}")
    out = np.empty(matrix.m, dtype=np.uint8)
    dense = matrix.dense()
    for i in range(matrix.m):
        out[i] = np.bitwise_and(dense[i], block).sum() & 1
    return out


def toeplitz_multiply_blocks(matrix: ToeplitzMatrix, blocks) -> np.ndarray:
    """GF(2) products T x_k for many blocks at once.

    blocks has shape (num_blocks, n); the result has shape (num_blocks, m).
    Uses a float32 BLAS matmul whose integer partial sums are exact.
    """
    blocks = np.asarray(blocks, dtype=np.uint8)
    if blocks.ndim != 2 or blocks.shape[1] != matrix.n:
        raise ValueError(f"blocks must have shape (N, {matrix.n})")
    dense_t = matrix.dense().astype(np.float32).T  # (n, m)
    out = np.empty((blocks.shape[0], matrix.m), dtype=np.uint8)
    for start in range(0, blocks.shape[0], _FAST_CHUNK_BLOCKS):
        stop = min(start + _FAST_CHUNK_BLOCKS, blocks.shape[0])
        prod = blocks[start:stop].astype(np.float32) @ dense_t
        out[start:stop] = prod.astype(np.int64) & 1
    return out


def extract(raw_bits, params: ExtractionParams) -> np.ndarray:
    """Run the full extraction over a raw bit sequence.

    Consumes the first n + m - 1 bits as the Toeplitz seed, hashes the
    remaining full n-bit blocks and concatenates the m-bit outputs. Seed
    bits never re-enter the extractable stream.
    """
    raw = np.asarray(raw_bits, dtype=np.uint8)
    needed = params.seed_bits + params.n
    if raw.size < needed:
        raise PreconditionError(
            f"need at least {needed} raw bits (seed + one block), got {raw.size}")
    if params.m == 0:
        return np.zeros(0, dtype=np.uint8)
    seed = raw[:params.seed_bits]
    body = raw[params.seed_bits:]
    num_blocks = body.size // params.n
    blocks = body[:num_blocks * params.n].reshape(num_blocks, params.n)
    matrix = build_toeplitz(seed, params.n, params.m)
    return toeplitz_multiply_blocks(matrix, blocks).reshape(-1)
