"""Round and block orchestration for the three-state protocol.

Before each 2^16-bit measurement block the user draws a block kind: with
probability `bias` (default 0.99) the block generates randomness with the
superposition state, otherwise one of the two test states is sent, each with
probability (1 - bias)/2. Generation blocks collect the non-discarded
outcomes as raw bits; test blocks record outcome tallies from which the
per-detector success probabilities and their binomial uncertainties are
estimated.

`run_block` has two equivalent sampling paths: a per-round loop that calls
:func:`mdiqrng.optics.simulate_round` for each window (reference semantics,
convenient for fault injection in tests), and an aggregate path that draws
the block-level outcome counts directly from the exact closed-form window
probabilities. The aggregate path is what makes multi-megabit pipeline runs
cheap; the test-suite checks the two paths against the same closed form.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .optics import (
    DiscardReason,
    MeasurementBoxConfig,
    SourceConfig,
    click_probabilities,
    prepare_state,
    simulate_round,
)

BLOCK_BITS = 65536
DEFAULT_BIAS = 0.99
DEFAULT_SWITCH_LATENCY_S = 0.05  # liquid-crystal mode change


class PreconditionError(ValueError):
    pass


class BlockKind(enum.Enum):
    """Purpose of one measurement block; values match the wire state labels."""

    TEST_H = 0
    TEST_V = 1
    GENERATE = 2

    @property
    def state_index(self) -> int:
        # Preparation index: TEST_H -> |H> (0), TEST_V -> |V> (1), GENERATE -> |R> (2)
        return self.value


@dataclass(frozen=True)
class TestTally:
    """Outcome record of one test block."""

    state: int            # 0 = |H>, 1 = |V>
    outcome_0: int        # rounds where D1 fired alone
    outcome_1: int        # rounds where D2 fired alone
    no_click: int
    double_click: int

    @property
    def rounds(self) -> int:
        return self.outcome_0 + self.outcome_1 + self.no_click + self.double_click

    @property
    def correct(self) -> int:
        return self.outcome_0 if self.state == 0 else self.outcome_1


@dataclass
class BitBlock:
    """One protocol block: raw bits for generation, a tally for test blocks."""

    block_id: int
    kind: BlockKind
    bits: np.ndarray | None = None
    tally: TestTally | None = None
    produced_at: float = 0.0       # elapsed days
    windows_used: int = 0

    def __post_init__(self):
        if self.kind is BlockKind.GENERATE:
            if self.bits is None or self.tally is not None:
                raise ValueError("generation blocks carry bits, not tallies")
            self.bits = np.asarray(self.bits, dtype=np.uint8)
            if self.bits.size > BLOCK_BITS:
                raise ValueError(f"block exceeds {BLOCK_BITS} bits")
        else:
            if self.bits is not None or self.tally is None:
                raise ValueError("test blocks carry a tally, not bits")

    @property
    def bit_count(self) -> int:
        return 0 if self.bits is None else int(self.bits.size)


class RoundStatistics:
    """Accumulated outcome counts per preparation, merge-safe across workers.

    counts[a][x] tallies outcome a for preparation x over non-discarded
    rounds; discards[r][x] tallies discards by reason (0 = no click,
    1 = double click).
    """

    def __init__(self, counts=None, discards=None):
        self.counts = np.zeros((2, 3), dtype=np.int64) if counts is None \
            else np.asarray(counts, dtype=np.int64).copy()
        self.discards = np.zeros((2, 3), dtype=np.int64) if discards is None \
            else np.asarray(discards, dtype=np.int64).copy()

    def merge(self, other: "RoundStatistics") -> "RoundStatistics":
        self.counts += other.counts
        self.discards += other.discards
        return self

    def __add__(self, other: "RoundStatistics") -> "RoundStatistics":
        return RoundStatistics(self.counts + other.counts,
                               self.discards + other.discards)

    def record_tally(self, tally: TestTally):
        x = tally.state
        self.counts[0, x] += tally.outcome_0
        self.counts[1, x] += tally.outcome_1
        self.discards[0, x] += tally.no_click
        self.discards[1, x] += tally.double_click

    def kept_rounds(self, x: int) -> int:
        return int(self.counts[:, x].sum())

    def p_conditional(self, a: int, x: int) -> float:
        """Empirical p(a | omega_x) over non-discarded rounds."""
        kept = self.kept_rounds(x)
        if kept == 0:
            raise PreconditionError(f"no non-discarded rounds for state {x}")
        return float(self.counts[a, x] / kept)

    def to_dict(self) -> dict:
        d = {
            "counts": self.counts.tolist(),
            "discards": self.discards.tolist(),
            "p_conditional": [
                [self.counts[a, x] / k if (k := self.kept_rounds(x)) else None
                 for x in range(3)]
                for a in range(2)
            ],
        }
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "RoundStatistics":
        return cls(d["counts"], d["discards"])


def choose_block_kind(rng: np.random.Generator, bias: float = DEFAULT_BIAS) -> BlockKind:
    """Generate with probability `bias`, otherwise TestH or TestV evenly."""
    if not 0.0 <= bias <= 1.0:
        raise ValueError(f"bias must lie in [0, 1], got {bias!r}")
    u = rng.random()
    if u < bias:
        return BlockKind.GENERATE
    return BlockKind.TEST_H if (u - bias) < (1.0 - bias) / 2.0 else BlockKind.TEST_V


def run_block(kind: BlockKind, source: SourceConfig, box: MeasurementBoxConfig,
              rng: np.random.Generator, *, block_id: int = 0, t_days: float = 0.0,
              test_rounds: int = BLOCK_BITS, round_budget: int | None = None,
              per_round: bool = False, event_source=None
              ) -> tuple[BitBlock, RoundStatistics]:
    """Run one block and return it with its statistics delta.

    Generation blocks fill up to BLOCK_BITS bits with non-discarded outcomes
    of the superposition state (bounded by `round_budget` windows when set);
    test blocks run `test_rounds` windows of the selected test state and
    record a tally. `event_source(state, box, source, rng, t_days)` replaces
    simulate_round on the per-round path (fault injection hook).
    """
    if per_round or event_source is not None:
        return _run_block_rounds(kind, source, box, rng, block_id=block_id,
                                 t_days=t_days, test_rounds=test_rounds,
                                 round_budget=round_budget,
                                 event_source=event_source or simulate_round)

    state = prepare_state(kind.state_index)
    mu = source.mean_photons(t_days)
    p0, p1, p_no, p_dbl = click_probabilities(state, box, mu)
    stats = RoundStatistics()

    if kind is BlockKind.GENERATE:
        p_single = p0 + p1
        if p_single <= 0.0:
            windows = round_budget or 0
            block = BitBlock(block_id, kind, bits=np.zeros(0, dtype=np.uint8),
                             produced_at=t_days, windows_used=windows)
            stats.discards[0, 2] += windows
            return block, stats
        if round_budget is None:
            n_bits = BLOCK_BITS
            windows = n_bits + int(rng.negative_binomial(n_bits, p_single))
        else:
            # Stop at whichever comes first: a full block or the window budget.
            w_cap = BLOCK_BITS + int(rng.negative_binomial(BLOCK_BITS, p_single))
            if w_cap <= round_budget:
                windows, n_bits = w_cap, BLOCK_BITS
            else:
                windows = int(round_budget)
                n_bits = min(int(rng.binomial(windows, p_single)), BLOCK_BITS)
        bits = (rng.random(n_bits) < (p1 / p_single)).astype(np.uint8)
        n_discard = windows - n_bits
        n_dbl = int(rng.binomial(n_discard, p_dbl / (p_no + p_dbl))) \
            if n_discard and (p_no + p_dbl) > 0 else 0
        ones = int(bits.sum())
        stats.counts[0, 2] += n_bits - ones
        stats.counts[1, 2] += ones
        stats.discards[0, 2] += n_discard - n_dbl
        stats.discards[1, 2] += n_dbl
        block = BitBlock(block_id, kind, bits=bits,
                         produced_at=t_days, windows_used=windows)
        return block, stats

    counts = rng.multinomial(test_rounds, [p0, p1, p_no, p_dbl])
    tally = TestTally(state=kind.state_index, outcome_0=int(counts[0]),
                      outcome_1=int(counts[1]), no_click=int(counts[2]),
                      double_click=int(counts[3]))
    stats.record_tally(tally)
    block = BitBlock(block_id, kind, tally=tally,
                     produced_at=t_days, windows_used=test_rounds)
    return block, stats


def _run_block_rounds(kind, source, box, rng, *, block_id, t_days,
                      test_rounds, round_budget, event_source):
    state = prepare_state(kind.state_index)
    stats = RoundStatistics()
    x = kind.state_index

    if kind is BlockKind.GENERATE:
        bits = []
        windows = 0
        budget = round_budget if round_budget is not None else None
        while len(bits) < BLOCK_BITS and (budget is None or windows < budget):
            event = event_source(state, box, source, rng, t_days)
            windows += 1
            if event.is_bit:
                bits.append(event.bit)
                stats.counts[event.bit, x] += 1
            else:
                reason = 0 if event.discard is DiscardReason.NO_CLICK else 1
                stats.discards[reason, x] += 1
        block = BitBlock(block_id, kind, bits=np.array(bits, dtype=np.uint8),
                         produced_at=t_days, windows_used=windows)
        return block, stats

    tally_counts = [0, 0, 0, 0]
    for _ in range(test_rounds):
        event = event_source(state, box, source, rng, t_days)
        if event.is_bit:
            tally_counts[event.bit] += 1
        elif event.discard is DiscardReason.NO_CLICK:
            tally_counts[2] += 1
        else:
            tally_counts[3] += 1
    tally = TestTally(state=x, outcome_0=tally_counts[0], outcome_1=tally_counts[1],
                      no_click=tally_counts[2], double_click=tally_counts[3])
    stats.record_tally(tally)
    block = BitBlock(block_id, kind, tally=tally,
                     produced_at=t_days, windows_used=test_rounds)
    return block, stats


@dataclass(frozen=True)
class SuccessEstimate:
    """Per-detector success probabilities with binomial standard errors."""

    p_suc_h: float
    sigma_h: float
    p_suc_v: float
    sigma_v: float
    p_suc_avg: float
    sigma_avg: float


def estimate_success(stats: RoundStatistics) -> SuccessEstimate:
    """p_suc_h = p(0 | |H>), p_suc_v = p(1 | |V>), errors sqrt(p(1-p)/N)."""
    n_h = stats.kept_rounds(0)
    n_v = stats.kept_rounds(1)
    if n_h == 0 or n_v == 0:
        raise PreconditionError(
            "no test data: at least one non-discarded round is required for "
            f"each test state (have H: {n_h}, V: {n_v})")
    p_h = float(stats.counts[0, 0] / n_h)
    p_v = float(stats.counts[1, 1] / n_v)
    sigma_h = float(np.sqrt(p_h * (1.0 - p_h) / n_h))
    sigma_v = float(np.sqrt(p_v * (1.0 - p_v) / n_v))
    return SuccessEstimate(
        p_suc_h=p_h, sigma_h=sigma_h,
        p_suc_v=p_v, sigma_v=sigma_v,
        p_suc_avg=(p_h + p_v) / 2.0,
        sigma_avg=float(np.sqrt(sigma_h ** 2 + sigma_v ** 2) / 2.0),
    )
