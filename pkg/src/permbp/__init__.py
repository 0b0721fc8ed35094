"""Weighted belief-propagation decoding of BCH codes with
automorphism-interleaved iteration blocks."""

from permbp.autgroup import (
    PermutationElement,
    PermutationReservoir,
    cyclic_shift,
    frobenius_doubling,
    identity,
)
from permbp.baselines import (
    bp_decode,
    ml_decode_exhaustive,
    mrrd_decode,
    osd_decode,
    soft_correlation,
)
from permbp.bench import (
    DecoderSpec,
    StopRule,
    SweepResult,
    parse_decoder_spec,
    run_sweep,
    run_timing,
    wilson_interval,
)
from permbp.channel import (
    ChannelBatch,
    hard_decision,
    make_batch,
    noise_sigma,
    noisy_llrs,
    qfunc,
    uncoded_ber,
)
from permbp.codes import (
    CodeError,
    CodeSpec,
    build_bch_code,
    enumerate_codewords,
    load_parity_matrix,
    syndrome,
)
from permbp.decoder import (
    DecodeResult,
    DecoderConfig,
    DecoderParams,
    bp_config,
    decode,
    load_weights,
    run_blocks,
    save_weights,
)
from permbp.hessian import ProbeResult, SpectrumReport, hessian, probe_run, \
    spectrum
from permbp.training import (
    LossBreakdown,
    NumericalError,
    TrainConfig,
    TrainState,
    loss_and_gradient,
    train,
)

__all__ = [
    "PermutationElement",
    "PermutationReservoir",
    "cyclic_shift",
    "frobenius_doubling",
    "identity",
    "bp_decode",
    "ml_decode_exhaustive",
    "mrrd_decode",
    "osd_decode",
    "soft_correlation",
    "DecoderSpec",
    "StopRule",
    "SweepResult",
    "parse_decoder_spec",
    "run_sweep",
    "run_timing",
    "wilson_interval",
    "ChannelBatch",
    "hard_decision",
    "make_batch",
    "noise_sigma",
    "noisy_llrs",
    "qfunc",
    "uncoded_ber",
    "CodeError",
    "CodeSpec",
    "build_bch_code",
    "enumerate_codewords",
    "load_parity_matrix",
    "syndrome",
    "DecodeResult",
    "DecoderConfig",
    "DecoderParams",
    "bp_config",
    "decode",
    "load_weights",
    "run_blocks",
    "save_weights",
    "ProbeResult",
    "SpectrumReport",
    "hessian",
    "probe_run",
    "spectrum",
    "LossBreakdown",
    "NumericalError",
    "TrainConfig",
    "TrainState",
    "loss_and_gradient",
    "train",
]
