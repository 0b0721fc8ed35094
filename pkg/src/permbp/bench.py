"""Monte-Carlo BER/FER sweeps and runtime comparisons.

Decoder spec strings (the CLI surface mirrors these):

    uncoded            hard decision straight off the channel
    oracle             returns the transmitted word (calibration floor)
    ml                 exhaustive maximum likelihood
    osd-L              ordered statistics, reprocessing order L in 0..2
    bp[-N]             plain sum-product, N iterations (default 50)
    mrrd-i[-j-k]       mRRD with i branches, j permutation blocks of k BP
                       iterations each (defaults j=10, k=2), unit weights
    perm-rnn-i-j-k     same structure with trained weights (--weights)
    mrrd-rnn-i-j-k     alias of perm-rnn-i-j-k

Single-branch mrrd/perm-rnn specs run the block stack with per-block
syndrome early stopping (the deployment mode); multi-branch specs use the
candidate-list decoder, which always runs every block.

Noise is drawn per (seed, SNR point, chunk) from a SeedSequence, so any
chunk can be replayed in isolation; paired mode feeds the same chunk to
every decoder. A point stops once every decoder has min_frame_errors frame
errors, or at max_frames; each result row records which bound fired.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from permbp.autgroup import PermutationReservoir, identity
from permbp.baselines import ml_decode_exhaustive, mrrd_decode, osd_decode
from permbp.channel import hard_decision, noisy_llrs
from permbp.codes import CodeError, CodeSpec, enumerate_codewords
from permbp.decoder import DecoderConfig, DecoderParams, bp_config, decode

__all__ = [
    "BENCH_N_PR",
    "BENCH_K_PR",
    "DecoderSpec",
    "parse_decoder_spec",
    "SweepError",
    "StopRule",
    "SweepRow",
    "SweepResult",
    "wilson_interval",
    "chunk_words_and_llrs",
    "run_sweep",
    "write_sweep_csv",
    "TimingRow",
    "run_timing",
    "write_timing_csv",
]

BENCH_N_PR = 20
BENCH_K_PR = 60
DEFAULT_BP_ITERS = 50
DEFAULT_MRRD_BLOCKS = 10
DEFAULT_MRRD_ITERS = 2


class SweepError(RuntimeError):
    """Decoder failure inside a sweep; carries the chunk key for replay."""

    def __init__(self, message: str, chunk_key: tuple):
        self.chunk_key = chunk_key
        super().__init__(f"{message} [replay key {chunk_key}]")


# ---------------------------------------------------------------------------
# decoder specs


@dataclass(frozen=True)
class DecoderSpec:
    label: str
    kind: str
    iterations: int = 0
    order: int = 0
    branches: int = 0
    blocks: int = 0
    needs_weights: bool = False


def _positive_ints(parts: list[str], text: str) -> list[int]:
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise CodeError(f"bad decoder spec {text!r}: non-integer field")
    if any(v < 1 for v in values):
        raise CodeError(f"bad decoder spec {text!r}: fields must be >= 1")
    return values


def parse_decoder_spec(text: str) -> DecoderSpec:
    t = text.strip().lower()
    if t in ("uncoded", "oracle", "ml"):
        return DecoderSpec(label=t, kind=t)
    if t == "bp":
        return DecoderSpec(label=t, kind="bp", iterations=DEFAULT_BP_ITERS)
    if t.startswith("bp-"):
        parts = t.split("-")[1:]
        if len(parts) != 1:
            raise CodeError(f"bad decoder spec {text!r}: bp takes one "
                            "iteration count")
        (iters,) = _positive_ints(parts, text)
        return DecoderSpec(label=t, kind="bp", iterations=iters)
    if t.startswith("osd-"):
        parts = t.split("-")[1:]
        if len(parts) != 1 or parts[0] not in ("0", "1", "2"):
            raise CodeError(f"bad decoder spec {text!r}: osd order must be "
                            "0, 1, or 2")
        return DecoderSpec(label=t, kind="osd", order=int(parts[0]))
    for prefix in ("perm-rnn-", "mrrd-rnn-"):
        if t.startswith(prefix):
            vals = _positive_ints(t[len(prefix):].split("-"), text)
            if len(vals) != 3:
                raise CodeError(f"bad decoder spec {text!r}: trained specs "
                                "need exactly i-j-k")
            return DecoderSpec(label=t, kind="mrrd", branches=vals[0],
                               blocks=vals[1], iterations=vals[2],
                               needs_weights=True)
    if t.startswith("mrrd-"):
        vals = _positive_ints(t[len("mrrd-"):].split("-"), text)
        if len(vals) == 1:
            vals += [DEFAULT_MRRD_BLOCKS, DEFAULT_MRRD_ITERS]
        if len(vals) != 3:
            raise CodeError(f"bad decoder spec {text!r}: mrrd takes i or i-j-k")
        return DecoderSpec(label=t, kind="mrrd", branches=vals[0],
                           blocks=vals[1], iterations=vals[2])
    raise CodeError(f"unknown decoder spec {text!r}")


def _build_decoder(spec: DecoderSpec, code: CodeSpec,
                   weights: DecoderParams | None):
    """Returns fn(llrs, words, chunk_key) -> hard decisions (B, n)."""
    if spec.needs_weights and weights is None:
        raise CodeError(f"decoder {spec.label!r} needs trained weights")
    if spec.kind == "uncoded":
        return lambda llrs, words, key: hard_decision(llrs)
    if spec.kind == "oracle":
        return lambda llrs, words, key: words.astype(np.uint8)
    if spec.kind == "ml":
        return lambda llrs, words, key: ml_decode_exhaustive(code, llrs)
    if spec.kind == "osd":
        return lambda llrs, words, key: osd_decode(code, llrs, spec.order)
    if spec.kind == "bp":
        params = DecoderParams.unit(code)
        config = bp_config(spec.iterations)
        perms = [identity(code.n)]
        return lambda llrs, words, key: decode(
            code, params, config, llrs, perms, stop_on_zero=True).hard
    if spec.kind == "mrrd":
        params = weights if spec.needs_weights else DecoderParams.unit(code)

        def fn(llrs, words, key):
            reservoir = PermutationReservoir.for_code(
                code, BENCH_N_PR, BENCH_K_PR,
                seed=np.random.default_rng(np.random.SeedSequence(list(key))))
            if spec.branches == 1:
                config = DecoderConfig(i_permutations=spec.blocks,
                                       i_bp=spec.iterations)
                perms = reservoir.sample_chain(spec.blocks - 1) \
                    + [identity(code.n)]
                return decode(code, params, config, llrs, perms,
                              stop_on_zero=True).hard
            return mrrd_decode(code, llrs, spec.branches, spec.blocks,
                               spec.iterations, reservoir, params=params)

        return fn
    raise CodeError(f"unknown decoder kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# sweep harness


@dataclass(frozen=True)
class StopRule:
    min_frame_errors: int = 100
    max_frames: int = 1_000_000

    def __post_init__(self) -> None:
        if self.min_frame_errors < 1 or self.max_frames < 1:
            raise CodeError("stop rule bounds must be positive")


@dataclass(eq=False)
class SweepRow:
    decoder: str
    snr_db: float
    frames: int
    bit_errors: int
    frame_errors: int
    ber: float
    fer: float
    ber_ci: tuple[float, float]
    fer_ci: tuple[float, float]
    mean_decode_seconds: float
    stopped_on: str


@dataclass(eq=False)
class SweepResult:
    code_name: str
    paired: bool
    seed: int
    rows: list[SweepRow] = field(default_factory=list)

    def for_decoder(self, label: str) -> list[SweepRow]:
        return [r for r in self.rows if r.decoder == label]


def wilson_interval(errors: int, trials: int, z: float = 1.959963984540054,
                    ) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (95% by default)."""
    if trials < 1:
        raise CodeError("wilson interval needs at least one trial")
    p = errors / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials
                         + z2 / (4.0 * trials * trials)) / denom
    lo = 0.0 if errors == 0 else max(0.0, center - half)
    hi = 1.0 if errors == trials else min(1.0, center + half)
    return lo, hi


def chunk_words_and_llrs(code: CodeSpec, snr_db: float, seed: int,
                         point_idx: int, chunk_idx: int, frames: int, *,
                         random_codewords: bool = False,
                         es_mode: bool = False,
                         ) -> tuple[np.ndarray, np.ndarray]:
    """The exact (words, llrs) of one sweep chunk — the replay entry point."""
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, point_idx, chunk_idx]))
    if random_codewords:
        book = np.stack(list(enumerate_codewords(code)))
        words = book[rng.integers(0, book.shape[0], size=frames)]
    else:
        words = np.zeros((frames, code.n), dtype=np.uint8)
    llrs, _ = noisy_llrs(code, words, snr_db, rng, es_mode=es_mode)
    return words, llrs


def run_sweep(specs: list[DecoderSpec] | DecoderSpec | list[str] | str,
              code: CodeSpec, snr_grid: list[float],
              stop: StopRule | None = None, seed: int = 0, *,
              paired: bool = True, weights: DecoderParams | None = None,
              chunk_frames: int = 2000, random_codewords: bool = False,
              es_mode: bool = False) -> SweepResult:
    """Stream frames through one or more decoders over an SNR grid.

    In paired mode (default) every decoder sees identical noise, so
    dominance comparisons hold frame by frame; a point keeps running until
    every decoder meets the stop rule, and per-frame counters only ever see
    their own decoder's output, so each decoder's results are unchanged by
    whoever shares the sweep.
    """
    if isinstance(specs, (str, DecoderSpec)):
        specs = [specs]
    specs = [parse_decoder_spec(s) if isinstance(s, str) else s for s in specs]
    if not specs:
        raise CodeError("no decoders given")
    if len({s.label for s in specs}) != len(specs):
        raise CodeError("duplicate decoder labels in one sweep")
    if not snr_grid:
        raise CodeError("empty snr grid")
    stop = stop or StopRule()
    fns = {s.label: _build_decoder(s, code, weights) for s in specs}
    result = SweepResult(code_name=code.name, paired=paired, seed=seed)

    for point_idx, snr in enumerate(snr_grid):
        frames = {s.label: 0 for s in specs}
        bit_err = {s.label: 0 for s in specs}
        frame_err = {s.label: 0 for s in specs}
        seconds = {s.label: 0.0 for s in specs}
        chunk_idx = 0

        def _finished(label: str) -> bool:
            return (frame_err[label] >= stop.min_frame_errors
                    or frames[label] >= stop.max_frames)

        while True:
            running = [s.label for s in specs if not _finished(s.label)]
            if not running:
                break
            # Running decoders advance in lockstep, so this min is their
            # common frame count; it keeps the last chunk from overshooting
            # the cap.
            budget = min(chunk_frames,
                         min(stop.max_frames - frames[l] for l in running))
            words, llrs = chunk_words_and_llrs(
                code, snr, seed, point_idx, chunk_idx, budget,
                random_codewords=random_codewords, es_mode=es_mode)
            for d_idx, s in enumerate(specs):
                if s.label not in running:
                    continue
                if paired:
                    d_words, d_llrs, key = words, llrs, (seed, point_idx,
                                                         chunk_idx, d_idx)
                else:
                    d_words, d_llrs = chunk_words_and_llrs(
                        code, snr, seed + 1 + d_idx, point_idx, chunk_idx,
                        budget, random_codewords=random_codewords,
                        es_mode=es_mode)
                    key = (seed + 1 + d_idx, point_idx, chunk_idx, d_idx)
                t0 = time.perf_counter()
                try:
                    hard = fns[s.label](d_llrs, d_words, key)
                except Exception as err:  # noqa: BLE001 — replay context
                    raise SweepError(
                        f"decoder {s.label!r} failed at {snr} dB: {err}",
                        (seed, point_idx, chunk_idx)) from err
                seconds[s.label] += time.perf_counter() - t0
                wrong = hard != d_words
                frames[s.label] += budget
                bit_err[s.label] += int(wrong.sum())
                frame_err[s.label] += int(wrong.any(axis=1).sum())
            chunk_idx += 1
        for s in specs:
            f = frames[s.label]
            bits = f * code.n
            stopped = ("min_frame_errors"
                       if frame_err[s.label] >= stop.min_frame_errors
                       else "max_frames")
            result.rows.append(SweepRow(
                decoder=s.label,
                snr_db=float(snr),
                frames=f,
                bit_errors=bit_err[s.label],
                frame_errors=frame_err[s.label],
                ber=bit_err[s.label] / bits,
                fer=frame_err[s.label] / f,
                ber_ci=wilson_interval(bit_err[s.label], bits),
                fer_ci=wilson_interval(frame_err[s.label], f),
                mean_decode_seconds=seconds[s.label] / f,
                stopped_on=stopped,
            ))
    return result


def write_sweep_csv(result: SweepResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "decoder", "snr_db", "frames", "bit_errors", "frame_errors",
            "ber", "fer", "ber_ci_lo", "ber_ci_hi", "fer_ci_lo", "fer_ci_hi",
            "mean_decode_seconds", "stopped_on",
        ])
        for r in result.rows:
            writer.writerow([
                r.decoder, r.snr_db, r.frames, r.bit_errors, r.frame_errors,
                repr(r.ber), repr(r.fer),
                repr(r.ber_ci[0]), repr(r.ber_ci[1]),
                repr(r.fer_ci[0]), repr(r.fer_ci[1]),
                repr(r.mean_decode_seconds), r.stopped_on,
            ])


# ---------------------------------------------------------------------------
# timing harness


@dataclass(eq=False)
class TimingRow:
    decoder: str
    snr_db: float
    frames: int
    mean_seconds: float
    p95_seconds: float


def run_timing(specs: list[DecoderSpec] | list[str], code: CodeSpec,
               snr_grid: list[float], frames: int = 200, *,
               warmup: int = 10, seed: int = 0,
               weights: DecoderParams | None = None,
               es_mode: bool = False) -> list[TimingRow]:
    """Per-frame wall-clock, one frame at a time, warm-up excluded.

    Frames are decoded strictly serially in one process/thread of control
    so decoders compete on equal footing; batch amortization is deliberately
    absent here (the sweep reports amortized times).
    """
    specs = [parse_decoder_spec(s) if isinstance(s, str) else s for s in specs]
    if frames < 1:
        raise CodeError("need at least one timed frame")
    rows = []
    for d_idx, s in enumerate(specs):
        fn = _build_decoder(s, code, weights)
        for point_idx, snr in enumerate(snr_grid):
            words, llrs = chunk_words_and_llrs(
                code, snr, seed, point_idx, 0, warmup + frames,
                es_mode=es_mode)
            times = np.empty(frames)
            for f in range(warmup + frames):
                key = (seed, point_idx, f, d_idx)
                t0 = time.perf_counter()
                fn(llrs[f:f + 1], words[f:f + 1], key)
                dt = time.perf_counter() - t0
                if f >= warmup:
                    times[f - warmup] = dt
            rows.append(TimingRow(
                decoder=s.label,
                snr_db=float(snr),
                frames=frames,
                mean_seconds=float(times.mean()),
                p95_seconds=float(np.percentile(times, 95.0)),
            ))
    return rows


def write_timing_csv(rows: list[TimingRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["decoder", "snr_db", "frames", "mean_seconds", "p95_seconds"])
        for r in rows:
            writer.writerow([r.decoder, r.snr_db, r.frames,
                             repr(r.mean_seconds), repr(r.p95_seconds)])
