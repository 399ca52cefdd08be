"""mdiqrng: a desk-scale software embodiment of a measurement-device-independent
quantum random number generator.

The package simulates a weak-coherent polarized light source and an untrusted
two-detector measurement box, runs the three-state generation/test protocol,
certifies private min-entropy from the test-state statistics, extracts
near-uniform bits with a seeded Toeplitz hash, validates the output with a
statistical test battery, and streams bit blocks device-to-server over UDP.
"""

from .certify import (
    Certificate,
    certify,
    guessing_probability,
    min_entropy,
    oracle_guessing_probability,
    sdp_guessing_probability,
)
from .extract import (
    ExtractionParams,
    ToeplitzMatrix,
    build_toeplitz,
    estimate_min_entropy_8,
    extract,
    output_length,
)
from .optics import (
    DetectionEvent,
    DiscardReason,
    MeasurementBoxConfig,
    PolarizationState,
    SourceConfig,
    click_probabilities,
    compute_eqe,
    compute_radiance,
    fit_poisson,
    poisson_pmf,
    prepare_state,
    sample_photon_count,
    simulate_round,
    simulate_windows,
    source_flux,
)
from .pipeline import (
    PipelineConfig,
    RunSummary,
    benchmark_throughput,
    bits_to_image,
    emit_report,
    run_pipeline,
)
from .protocol import (
    BLOCK_BITS,
    BitBlock,
    BlockKind,
    RoundStatistics,
    choose_block_kind,
    estimate_success,
    run_block,
)
from .stats import TestReport, proportion_confidence, run_suite, run_test
from .transport import (
    BadCrc,
    BadLabel,
    BadMagic,
    BadVersion,
    Frame,
    FrameError,
    Truncated,
    decode_frame,
    encode_frame,
    serve_collect,
    stream_device,
)

__version__ = "0.1.0"
