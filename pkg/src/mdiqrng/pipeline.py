"""End-to-end pipeline: simulate blocks, certify, extract, test, report.

One seeded generator drives every stage in a fixed order, so a run is fully
determined by its configuration (including the seed): certificates, extracted
bit files, images and reports are byte-identical across repeats.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .certify import Certificate, certify as make_certificate
from .extract import (
    DEFAULT_BLOCK_BITS as EXTRACT_N_DEFAULT,
    DEFAULT_EPSILON as EXTRACT_EPSILON_DEFAULT,
    ExtractionParams,
    extract as extract_bits,
)
from .stats import (
    DEFAULT_ALPHA as STATS_ALPHA_DEFAULT,
    DEFAULT_BLOCK_SIZE as STATS_BLOCK_DEFAULT,
    run_suite,
)
from .bitops import pack_bits, unpack_bits
from .optics import (
    MeasurementBoxConfig,
    SourceConfig,
    box_config_from_dict,
    box_config_to_dict,
    click_probabilities,
    prepare_state,
    source_config_from_dict,
    source_config_to_dict,
)
from .protocol import (
    BLOCK_BITS,
    DEFAULT_BIAS,
    DEFAULT_SWITCH_LATENCY_S,
    BlockKind,
    RoundStatistics,
    SuccessEstimate,
    choose_block_kind,
    estimate_success,
    run_block,
)

SECONDS_PER_DAY = 86400.0


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage tag for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class PreconditionError(ValueError):
    pass


@dataclass
class PipelineConfig:
    """Everything a run needs; the seed fully determines the outcome."""

    seed: int = 20240804
    blocks: int = 100
    bias: float = DEFAULT_BIAS
    test_rounds: int = BLOCK_BITS
    switch_latency_s: float = DEFAULT_SWITCH_LATENCY_S
    rate_bucket_hours: float = 6.0
    source: SourceConfig = field(default_factory=SourceConfig)
    box: MeasurementBoxConfig = field(default_factory=MeasurementBoxConfig)
    extraction_n: int = EXTRACT_N_DEFAULT
    extraction_epsilon: float = EXTRACT_EPSILON_DEFAULT
    stats_block_size: int = STATS_BLOCK_DEFAULT
    stats_alpha: float = STATS_ALPHA_DEFAULT
    endpoint: str = "127.0.0.1:47852"
    storage: str = "ingest"

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if not 0.0 <= self.bias <= 1.0:
            raise ValueError("bias must lie in [0, 1]")
        if self.test_rounds < 1:
            raise ValueError("test_rounds must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        kwargs = {}
        for key in ("seed", "blocks", "bias", "test_rounds", "switch_latency_s",
                    "rate_bucket_hours"):
            if key in d:
                kwargs[key] = d[key]
        if "source" in d:
            kwargs["source"] = source_config_from_dict(d["source"])
        if "box" in d:
            kwargs["box"] = box_config_from_dict(d["box"])
        ext = d.get("extraction", {})
        if "n" in ext:
            kwargs["extraction_n"] = ext["n"]
        if "epsilon" in ext:
            kwargs["extraction_epsilon"] = ext["epsilon"]
        st = d.get("stats", {})
        if "block_size" in st:
            kwargs["stats_block_size"] = st["block_size"]
        if "alpha" in st:
            kwargs["stats_alpha"] = st["alpha"]
        tr = d.get("transport", {})
        if "endpoint" in tr:
            kwargs["endpoint"] = tr["endpoint"]
        if "storage" in tr:
            kwargs["storage"] = tr["storage"]
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "blocks": self.blocks,
            "bias": self.bias,
            "test_rounds": self.test_rounds,
            "switch_latency_s": self.switch_latency_s,
            "rate_bucket_hours": self.rate_bucket_hours,
            "source": source_config_to_dict(self.source),
            "box": box_config_to_dict(self.box),
            "extraction": {"n": self.extraction_n, "epsilon": self.extraction_epsilon},
            "stats": {"block_size": self.stats_block_size, "alpha": self.stats_alpha},
            "transport": {"endpoint": self.endpoint, "storage": self.storage},
        }

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def accounting_raw_rate(source: SourceConfig, box: MeasurementBoxConfig,
                        bias: float, t_days: float = 0.0) -> float:
    """Raw bits per second: (non-discard rate) x (generation-block fraction)."""
    p0, p1, _, _ = click_probabilities(prepare_state(2), box,
                                       source.mean_photons(t_days))
    return (p0 + p1) / source.window * bias


def model_rate_table(source: SourceConfig, box: MeasurementBoxConfig, bias: float,
                     horizon_days: float, bucket_hours: float = 6.0) -> list:
    """Projected raw rate per time bucket over a horizon (degradation applied)."""
    buckets = max(1, math.ceil(horizon_days * 24.0 / bucket_hours))
    table = []
    for i in range(buckets):
        mid_days = (i + 0.5) * bucket_hours / 24.0
        table.append({"day": mid_days,
                      "raw_bps": accounting_raw_rate(source, box, bias, mid_days)})
    return table


@dataclass
class SimulationResult:
    blocks: list                 # BitBlock objects, in production order
    stats: RoundStatistics
    raw_bits: np.ndarray         # concatenated generation bits
    elapsed_days: float
    windows_total: int
    kind_counts: dict


def simulate_blocks(config: PipelineConfig, rng: np.random.Generator,
                    keep_blocks: bool = True) -> SimulationResult:
    """Produce config.blocks protocol blocks with elapsed-time bookkeeping."""
    stats = RoundStatistics()
    blocks = []
    bit_chunks = []
    elapsed_s = 0.0
    windows_total = 0
    kind_counts = {k: 0 for k in BlockKind}
    prev_kind = None
    for block_id in range(config.blocks):
        kind = choose_block_kind(rng, config.bias)
        if prev_kind is not None and kind is not prev_kind:
            elapsed_s += config.switch_latency_s
        block, delta = run_block(
            kind, config.source, config.box, rng,
            block_id=block_id, t_days=elapsed_s / SECONDS_PER_DAY,
            test_rounds=config.test_rounds)
        stats.merge(delta)
        elapsed_s += block.windows_used * config.source.window
        windows_total += block.windows_used
        kind_counts[kind] += 1
        if kind is BlockKind.GENERATE:
            bit_chunks.append(block.bits)
        if keep_blocks:
            blocks.append(block)
        prev_kind = kind
    raw = np.concatenate(bit_chunks) if bit_chunks else np.zeros(0, dtype=np.uint8)
    return SimulationResult(blocks=blocks, stats=stats, raw_bits=raw,
                            elapsed_days=elapsed_s / SECONDS_PER_DAY,
                            windows_total=windows_total, kind_counts=kind_counts)


@dataclass
class RunSummary:
    config: PipelineConfig
    kind_counts: dict
    raw_bit_count: int
    windows_total: int
    elapsed_days: float
    raw_rate_accounting_bps: float
    raw_rate_measured_bps: float
    discard_fraction: float
    success: SuccessEstimate
    certificate: Certificate
    extraction: ExtractionParams
    extracted_bit_count: int
    reports: list
    rate_table: list

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "blocks_by_kind": {k.name: v for k, v in self.kind_counts.items()},
            "raw_bit_count": self.raw_bit_count,
            "windows_total": self.windows_total,
            "elapsed_days": self.elapsed_days,
            "raw_rate_accounting_bps": self.raw_rate_accounting_bps,
            "raw_rate_measured_bps": self.raw_rate_measured_bps,
            "discard_fraction": self.discard_fraction,
            "success": {
                "p_suc_h": self.success.p_suc_h, "sigma_h": self.success.sigma_h,
                "p_suc_v": self.success.p_suc_v, "sigma_v": self.success.sigma_v,
                "p_suc_avg": self.success.p_suc_avg,
                "sigma_avg": self.success.sigma_avg,
            },
            "certificate": self.certificate.to_dict(),
            "extraction": self.extraction.to_dict(),
            "extracted_bit_count": self.extracted_bit_count,
            "tests": [r.to_dict() for r in self.reports],
            "rate_table": self.rate_table,
        }


def run_pipeline(config: PipelineConfig, out_dir=None, keep_blocks: bool = False,
                 transport_loop: bool = False) -> tuple[RunSummary, np.ndarray]:
    """Execute simulate -> (optional transport loop) -> certify -> extract ->
    test; returns the summary and the extracted bits. Artifacts are written
    under out_dir when given. With transport_loop the blocks travel over UDP
    to an in-process server and extraction reads the server's stored stream."""
    rng = np.random.Generator(np.random.PCG64(config.seed))

    try:
        sim = simulate_blocks(config, rng,
                              keep_blocks=keep_blocks or transport_loop)
    except Exception as exc:
        raise StageError("simulate", str(exc)) from exc

    if transport_loop:
        try:
            sim = _loop_through_transport(sim, config)
        except Exception as exc:
            raise StageError("transport", str(exc)) from exc

    try:
        success = estimate_success(sim.stats)
        certificate = make_certificate(success.p_suc_h, success.p_suc_v)
    except Exception as exc:
        raise StageError("certify", str(exc)) from exc

    try:
        params = ExtractionParams.for_stream(
            sim.raw_bits, n=config.extraction_n, epsilon=config.extraction_epsilon)
        extracted = extract_bits(sim.raw_bits, params)
    except Exception as exc:
        raise StageError("extract", str(exc)) from exc

    reports = []
    if extracted.size >= 2 * config.stats_block_size:
        try:
            reports = run_suite(extracted, config.stats_block_size,
                                          config.stats_alpha)
        except Exception as exc:
            raise StageError("test", str(exc)) from exc

    kept = int(sim.stats.counts.sum())
    discarded = int(sim.stats.discards.sum())
    elapsed_s = sim.elapsed_days * SECONDS_PER_DAY
    summary = RunSummary(
        config=config,
        kind_counts=sim.kind_counts,
        raw_bit_count=int(sim.raw_bits.size),
        windows_total=sim.windows_total,
        elapsed_days=sim.elapsed_days,
        raw_rate_accounting_bps=accounting_raw_rate(config.source, config.box,
                                                    config.bias),
        raw_rate_measured_bps=sim.raw_bits.size / elapsed_s if elapsed_s > 0 else 0.0,
        discard_fraction=discarded / (kept + discarded) if kept + discarded else 0.0,
        success=success,
        certificate=certificate,
        extraction=params,
        extracted_bit_count=int(extracted.size),
        reports=reports,
        rate_table=_measured_rate_table(sim, config),
    )

    if out_dir is not None:
        write_artifacts(summary, extracted, sim, out_dir)
    return summary, extracted


def _loop_through_transport(sim: SimulationResult,
                            config: PipelineConfig) -> SimulationResult:
    """Stream the blocks to a local ingest server and re-read the raw bits
    from the server's per-state storage."""
    import socket
    import tempfile
    import threading

    from . import transport
    from .bitops import unpack_bits as _unpack

    host, port = transport.parse_endpoint(config.endpoint)
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
    except OSError:
        pass
    sock.bind((host, port))

    with tempfile.TemporaryDirectory(prefix="qrng-ingest-") as storage:
        result = {}

        def _serve():
            result["stats"] = transport.serve_collect(
                None, storage, stop_after=len(sim.blocks),
                idle_timeout=10.0, sock=sock)

        server = threading.Thread(target=_serve, daemon=True)
        server.start()
        transport.stream_device(sim.blocks, (host, port))
        server.join(timeout=60.0)
        ingest = result.get("stats")
        if ingest is None:
            raise TimeoutError("ingest server did not finish")
        if ingest.gap_ids or ingest.invalid:
            raise RuntimeError(
                f"lossy transport loop: {len(ingest.gap_ids)} gaps, "
                f"{ingest.invalid} invalid frames")
        with open(f"{storage}/generate.bits", "rb") as fh:
            stored = fh.read()
        raw = _unpack(stored, sim.raw_bits.size)
    return SimulationResult(blocks=sim.blocks, stats=sim.stats, raw_bits=raw,
                            elapsed_days=sim.elapsed_days,
                            windows_total=sim.windows_total,
                            kind_counts=sim.kind_counts)


def _measured_rate_table(sim: SimulationResult, config: PipelineConfig) -> list:
    span_days = max(sim.elapsed_days, 1e-12)
    bucket_days = config.rate_bucket_hours / 24.0
    buckets = max(1, math.ceil(span_days / bucket_days))
    bits = np.zeros(buckets)
    if sim.blocks:
        for block in sim.blocks:
            if block.kind is BlockKind.GENERATE:
                idx = min(int(block.produced_at / bucket_days), buckets - 1)
                bits[idx] += block.bit_count
        return [{"day": (i + 0.5) * bucket_days,
                 "raw_bps": b / (bucket_days * SECONDS_PER_DAY)}
                for i, b in enumerate(bits) if b > 0]
    rate = sim.raw_bits.size / (span_days * SECONDS_PER_DAY)
    return [{"day": span_days / 2.0, "raw_bps": rate}]


def bits_to_image(bits, width: int, height: int) -> bytes:
    """Render bits as a binary PGM (P5) grayscale image, 8 bits per pixel.

    Consecutive 8-bit groups, MSB first, become pixel values row-major.
    """
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    bits = np.asarray(bits, dtype=np.uint8)
    needed = 8 * width * height
    if bits.size < needed:
        raise PreconditionError(
            f"need {needed} bits for a {width}x{height} image, got {bits.size}")
    pixels = np.packbits(bits[:needed])
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def format_summary_text(summary: RunSummary, model_table: list | None = None) -> str:
    """Human-readable run report."""
    return render_summary(summary.to_dict(), model_table)


def render_summary(doc: dict, model_table: list | None = None) -> str:
    """Render the text report from a summary document (as in summary.json)."""
    cfg = doc["config"]
    succ = doc["success"]
    cert = doc["certificate"]
    ext = doc["extraction"]
    lines = []
    lines.append("MDI-QRNG pipeline run")
    lines.append("=" * 60)
    lines.append(f"blocks: {cfg['blocks']}  seed: {cfg['seed']}  "
                 f"bias: {cfg['bias']}")
    lines.append("blocks by kind: " + ", ".join(
        f"{k}={v}" for k, v in doc["blocks_by_kind"].items()))
    lines.append(f"raw bits: {doc['raw_bit_count']}  "
                 f"windows: {doc['windows_total']}  "
                 f"simulated span: {doc['elapsed_days']:.6f} days")
    lines.append(f"raw rate (accounting): "
                 f"{doc['raw_rate_accounting_bps'] / 1e6:.3f} Mbit/s")
    lines.append(f"raw rate (measured):   "
                 f"{doc['raw_rate_measured_bps'] / 1e6:.3f} Mbit/s")
    lines.append(f"discard fraction: {doc['discard_fraction']:.6f}")
    lines.append("")
    lines.append(f"P_suc(H) = {succ['p_suc_h']:.5f} +/- {succ['sigma_h']:.5f}")
    lines.append(f"P_suc(V) = {succ['p_suc_v']:.5f} +/- {succ['sigma_v']:.5f}")
    lines.append(f"P_suc    = {succ['p_suc_avg']:.5f} +/- {succ['sigma_avg']:.5f}")
    lines.append(f"P_g = {cert['p_g']:.6f}  "
                 f"H_min = {cert['h_min']:.4f} bits/round "
                 f"(method: {cert['method']})")
    lines.append(f"H_min from averaged inputs: {cert['h_min_avg_inputs']:.4f}")
    lines.append("")
    lines.append(f"extraction: n={ext['n']} m={ext['m']} h8={ext['h8']:.4f} "
                 f"epsilon=2^{math.log2(ext['epsilon']):.0f}  "
                 f"extracted bits: {doc['extracted_bit_count']}")
    lines.append("")
    lines.append("rate vs simulated time")
    lines.append(f"{'day':>10}  {'raw Mbit/s':>12}")
    for row in doc["rate_table"]:
        lines.append(f"{row['day']:>10.4f}  {row['raw_bps'] / 1e6:>12.3f}")
    if model_table:
        lines.append("")
        lines.append("projected rate vs elapsed time (source degradation model)")
        lines.append(f"{'day':>10}  {'raw Mbit/s':>12}")
        for row in model_table:
            lines.append(f"{row['day']:>10.4f}  {row['raw_bps'] / 1e6:>12.3f}")
    lines.append("")
    if doc["tests"]:
        lines.append("statistical test battery")
        lines.append(f"{'test':<22} {'mean p':>8} {'std p':>8} {'prop':>7} "
                     f"{'interval':>19} {'verdict':>8}")
        for r in doc["tests"]:
            lines.append(
                f"{r['name']:<22} {r['mean_p']:>8.4f} {r['std_p']:>8.4f} "
                f"{r['proportion']:>7.4f} "
                f"[{r['interval'][0]:.4f}, {r['interval'][1]:.4f}] "
                f"{'pass' if r['verdict'] == 'pass' else 'FAIL':>8}")
    else:
        lines.append("no statistical tests run")
    lines.append("")
    return "\n".join(lines)


def write_artifacts(summary: RunSummary, extracted: np.ndarray,
                    sim: SimulationResult | None, out_dir):
    """Write certificate, bits, sidecar, stats snapshot, reports and image."""
    import os
    os.makedirs(out_dir, exist_ok=True)

    with open(os.path.join(out_dir, "certificate.json"), "w") as fh:
        fh.write(summary.certificate.to_json(indent=1))
    with open(os.path.join(out_dir, "extracted.bits"), "wb") as fh:
        fh.write(pack_bits(extracted))
    sidecar = summary.extraction.to_dict()
    sidecar["bit_count"] = int(extracted.size)
    with open(os.path.join(out_dir, "extracted.json"), "w") as fh:
        json.dump(sidecar, fh, indent=1)
    if sim is not None:
        with open(os.path.join(out_dir, "stats_snapshot.json"), "w") as fh:
            fh.write(sim.stats.to_json(indent=1))
    emit_report(summary, out_dir)
    image_bits = 8 * 250 * 250
    if extracted.size >= image_bits:
        with open(os.path.join(out_dir, "random.pgm"), "wb") as fh:
            fh.write(bits_to_image(extracted, 250, 250))


def emit_report(summary: RunSummary, out_dir, model_table: list | None = None):
    """Write summary.json and summary.txt."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    try:
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary.to_dict(), fh, indent=1, sort_keys=True)
        with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
            fh.write(format_summary_text(summary, model_table))
    except OSError as exc:
        raise StageError("report", f"cannot write report: {exc}") from exc


def benchmark_throughput(config: PipelineConfig | None = None,
                         target_raw_bits: int = 20_000_000) -> dict:
    """Built-in throughput benchmark for the simulate -> pack -> extract path.

    Produces at least target_raw_bits of raw generation bits through the
    block simulation fast path, packs them, measures h8, and extracts.
    Reports wall-clock rates in bits of raw input per second.
    """
    from dataclasses import replace
    config = config or PipelineConfig()
    blocks_needed = math.ceil(target_raw_bits / BLOCK_BITS)
    cfg = replace(config, blocks=blocks_needed, bias=1.0)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    t0 = time.perf_counter()
    sim = simulate_blocks(cfg, rng, keep_blocks=False)
    t1 = time.perf_counter()
    packed = pack_bits(sim.raw_bits)
    t2 = time.perf_counter()
    raw = unpack_bits(packed, sim.raw_bits.size)
    params = ExtractionParams.for_stream(
        raw, n=cfg.extraction_n, epsilon=cfg.extraction_epsilon)
    extracted = extract_bits(raw, params)
    t3 = time.perf_counter()

    total = t3 - t0
    raw_bits = int(sim.raw_bits.size)
    return {
        "raw_bits": raw_bits,
        "extracted_bits": int(extracted.size),
        "seconds_simulate": t1 - t0,
        "seconds_pack": t2 - t1,
        "seconds_extract": t3 - t2,
        "seconds_total": total,
        "raw_bps_end_to_end": raw_bits / total,
        "raw_bps_extract_only": raw_bits / (t3 - t2),
    }
