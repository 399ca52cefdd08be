"""Command line interface.

Subcommands: run, simulate, certify, extract, test, image, stream, serve,
report, bench. Exit codes: 0 on success, 1 on a stage failure, 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .certify import certify as make_certificate
from .extract import (
    DEFAULT_BLOCK_BITS as EXTRACT_N_DEFAULT,
    ExtractionParams,
    extract as extract_bits,
)
from .stats import DEFAULT_ALPHA, DEFAULT_BLOCK_SIZE, run_suite
from . import transport
from .bitops import pack_bits, unpack_bits
from .pipeline import (
    PipelineConfig,
    StageError,
    benchmark_throughput,
    bits_to_image,
    format_summary_text,
    model_rate_table,
    render_summary,
    run_pipeline,
    simulate_blocks,
)
from .protocol import estimate_success

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_CONFIG = 2


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json_file(args.config) if args.config \
        else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "blocks", None) is not None:
        cfg.blocks = args.blocks
    if getattr(args, "endpoint", None) is not None:
        cfg.endpoint = args.endpoint
    return cfg


def _read_bits(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return unpack_bits(fh.read())


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out_dir or "qrng-out"
    summary, _extracted = run_pipeline(cfg, out_dir=out_dir, keep_blocks=True)
    print(format_summary_text(summary))
    print(f"artifacts written to {out_dir}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out_dir or "qrng-out"
    import os
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    sim = simulate_blocks(cfg, rng, keep_blocks=True)
    log_path = os.path.join(out_dir, "blocks.log")
    transport.write_block_log(sim.blocks, log_path)
    with open(os.path.join(out_dir, "stats_snapshot.json"), "w") as fh:
        fh.write(sim.stats.to_json(indent=1))
    with open(os.path.join(out_dir, "raw.bits"), "wb") as fh:
        fh.write(pack_bits(sim.raw_bits))
    kinds = ", ".join(f"{k.name}={v}" for k, v in sim.kind_counts.items())
    print(f"simulated {cfg.blocks} blocks ({kinds}); "
          f"{sim.raw_bits.size} raw bits over {sim.elapsed_days:.6f} days")
    print(f"block log: {log_path}")
    return EXIT_OK


def cmd_certify(args) -> int:
    if args.stats:
        with open(args.stats) as fh:
            doc = json.load(fh)
        from .protocol import RoundStatistics
        est = estimate_success(RoundStatistics.from_dict(doc))
        p_h, p_v = est.p_suc_h, est.p_suc_v
    elif args.p_suc_h is not None and args.p_suc_v is not None:
        p_h, p_v = args.p_suc_h, args.p_suc_v
    else:
        raise ValueError("provide --stats or both --p-suc-h and --p-suc-v")
    cert = make_certificate(p_h, p_v, method=args.method)
    text = cert.to_json(indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text)
    return EXIT_OK


def cmd_extract(args) -> int:
    raw = _read_bits(args.raw)
    params = ExtractionParams.for_stream(raw, n=args.n,
                                                     epsilon=2.0 ** args.log2_epsilon)
    bits = extract_bits(raw, params)
    with open(args.out, "wb") as fh:
        fh.write(pack_bits(bits))
    sidecar = params.to_dict()
    sidecar["bit_count"] = int(bits.size)
    with open(args.out + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)
    print(f"extracted {bits.size} bits (n={params.n}, m={params.m}, "
          f"h8={params.h8:.4f}) -> {args.out}")
    return EXIT_OK


def cmd_test(args) -> int:
    bits = _read_bits(args.bits)
    reports = run_suite(bits, block_size=args.block_size,
                                  alpha=args.alpha)
    doc = [r.to_dict() for r in reports]
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=1)
    failed = [r.test_name for r in reports if not r.passed]
    for r in reports:
        print(f"{r.test_name:<22} mean_p={r.mean_p:.4f} "
              f"proportion={r.pass_proportion:.4f} "
              f"{'pass' if r.passed else 'FAIL'}")
    print(f"{len(reports) - len(failed)}/{len(reports)} tests passed")
    return EXIT_OK if not failed else EXIT_STAGE


def cmd_image(args) -> int:
    bits = _read_bits(args.bits)
    data = bits_to_image(bits, args.width, args.height)
    with open(args.out, "wb") as fh:
        fh.write(data)
    print(f"wrote {args.width}x{args.height} PGM to {args.out}")
    return EXIT_OK


def cmd_stream(args) -> int:
    blocks = transport.read_block_log(args.log)
    stats = transport.stream_device(blocks, args.endpoint)
    print(f"sent {stats.sent} frames, {stats.bytes} bytes to {args.endpoint}")
    return EXIT_OK


def cmd_serve(args) -> int:
    stats = transport.serve_collect(
        args.endpoint, args.storage,
        stop_after=args.max_frames, idle_timeout=args.idle_timeout)
    print(json.dumps(stats.to_dict(), indent=1))
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.summary) as fh:
        doc = json.load(fh)
    cfg = PipelineConfig.from_dict(doc["config"])
    model = None
    if args.horizon_days:
        model = model_rate_table(cfg.source, cfg.box, cfg.bias,
                                 args.horizon_days, cfg.rate_bucket_hours)
    text = render_summary(doc, model)
    print(text)
    if args.out_dir:
        import os
        os.makedirs(args.out_dir, exist_ok=True)
        with open(f"{args.out_dir}/summary.txt", "w") as fh:
            fh.write(text)
        if model:
            with open(f"{args.out_dir}/rate_projection.json", "w") as fh:
                json.dump(model, fh, indent=1)
    return EXIT_OK


def cmd_bench(args) -> int:
    result = benchmark_throughput(target_raw_bits=args.target_bits)
    print(json.dumps(result, indent=1))
    rate = result["raw_bps_end_to_end"] / 1e6
    print(f"end-to-end raw throughput: {rate:.2f} Mbit/s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdiqrng",
        description="Simulated measurement-device-independent QRNG pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--blocks", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--endpoint")

    p = sub.add_parser("run", help="full pipeline run")
    add_common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("simulate", help="simulate blocks; write frame log and stats")
    add_common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("certify", help="certificate from statistics")
    p.add_argument("--stats", help="stats snapshot JSON")
    p.add_argument("--p-suc-h", type=float)
    p.add_argument("--p-suc-v", type=float)
    p.add_argument("--method", default="numeric-program",
                   choices=["numeric-program", "oracle"])
    p.add_argument("--out")
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("extract", help="Toeplitz-extract a raw bit file")
    p.add_argument("--raw", required=True, help="packed raw bits file")
    p.add_argument("--out", default="extracted.bits")
    p.add_argument("--n", type=int, default=EXTRACT_N_DEFAULT)
    p.add_argument("--log2-epsilon", type=float, default=-100.0)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("test", help="run the statistical battery on a bit file")
    p.add_argument("--bits", required=True)
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_test)

    p = sub.add_parser("image", help="render bits as a grayscale PGM")
    p.add_argument("--bits", required=True)
    p.add_argument("--width", type=int, default=250)
    p.add_argument("--height", type=int, default=250)
    p.add_argument("--out", default="random.pgm")
    p.set_defaults(fn=cmd_image)

    p = sub.add_parser("stream", help="stream a block log to a server")
    p.add_argument("--log", required=True)
    p.add_argument("--endpoint", required=True)
    p.set_defaults(fn=cmd_stream)

    p = sub.add_parser("serve", help="collect streamed blocks into per-state files")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--storage", default="ingest")
    p.add_argument("--max-frames", type=int)
    p.add_argument("--idle-timeout", type=float, default=5.0)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("report", help="re-emit reports from a summary")
    p.add_argument("--summary", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--horizon-days", type=float,
                   help="append a degradation-model rate projection")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("bench", help="throughput benchmark: simulate/pack/extract")
    p.add_argument("--target-bits", type=int, default=20_000_000)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
