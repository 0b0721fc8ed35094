"""BPSK transmission over the additive white Gaussian noise channel.

Sign convention, relied on throughout the package: bit b maps to the symbol
s = 1 - 2b, and the per-bit log-likelihood ratio is

    llr = log P(b=1 | y) / P(b=0 | y) = -2 y / sigma^2

so positive llr means bit one. SNR values are Eb/N0 in dB by default, which
folds the code rate into the noise variance; pass ``es_mode=True`` to
interpret them as Es/N0 instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from permbp.codes import CodeError, CodeSpec

__all__ = [
    "noise_sigma",
    "bpsk",
    "llr_from_observation",
    "hard_decision",
    "qfunc",
    "uncoded_ber",
    "transmit",
    "noisy_llrs",
    "ChannelBatch",
    "make_batch",
    "random_codeword_llrs",
]

_erfc = np.vectorize(math.erfc, otypes=[np.float64])


def noise_sigma(snr_db: float, rate: float = 1.0, *, es_mode: bool = False) -> float:
    """Noise standard deviation for unit-energy BPSK at the given SNR."""
    if rate <= 0 or rate > 1:
        raise CodeError(f"code rate must lie in (0, 1], got {rate}")
    factor = 1.0 if es_mode else rate
    return float(1.0 / math.sqrt(2.0 * factor * 10.0 ** (snr_db / 10.0)))


def bpsk(bits: np.ndarray) -> np.ndarray:
    return 1.0 - 2.0 * np.asarray(bits, dtype=np.float64)


def llr_from_observation(received: np.ndarray, sigma: float) -> np.ndarray:
    return -2.0 * np.asarray(received, dtype=np.float64) / (sigma * sigma)


def hard_decision(llr: np.ndarray) -> np.ndarray:
    """Bit estimates from llr values; ties (exact zeros) decide for bit 0."""
    return (np.asarray(llr) > 0).astype(np.uint8)


def qfunc(x: np.ndarray) -> np.ndarray:
    """Gaussian tail probability Q(x)."""
    return 0.5 * _erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def uncoded_ber(snr_db: float) -> float:
    """Bit error rate of uncoded BPSK at Eb/N0 = snr_db."""
    return float(qfunc(math.sqrt(2.0 * 10.0 ** (snr_db / 10.0))))


def noisy_llrs(code: CodeSpec, words: np.ndarray, snr_db: float,
               rng: np.random.Generator, *, es_mode: bool = False
               ) -> tuple[np.ndarray, float]:
    """Pass a batch of codewords through the channel; returns (llrs, sigma)."""
    words = np.atleast_2d(words)
    if words.shape[1] != code.n:
        raise CodeError(f"word length {words.shape[1]} does not match n={code.n}")
    sigma = noise_sigma(snr_db, code.rate, es_mode=es_mode)
    received = bpsk(words) + sigma * rng.standard_normal(words.shape)
    return llr_from_observation(received, sigma), sigma


def transmit(code: CodeSpec, codeword: np.ndarray, snr_db: float,
             rng: np.random.Generator, *, es_mode: bool = False) -> np.ndarray:
    """One codeword through the channel; returns its llr vector."""
    llrs, _ = noisy_llrs(code, np.asarray(codeword)[None, :], snr_db, rng,
                         es_mode=es_mode)
    return llrs[0]


@dataclass(eq=False)
class ChannelBatch:
    """A training batch spanning an SNR grid, ``per_snr`` frames per point.

    Frames are grouped by SNR in grid order; ``snr_db`` and ``sigma`` are
    per-frame so consumers never re-derive the grouping.
    """

    llrs: np.ndarray
    targets: np.ndarray
    snr_db: np.ndarray
    sigma: np.ndarray

    @property
    def batch_size(self) -> int:
        return int(self.llrs.shape[0])


def make_batch(code: CodeSpec, snr_list: list[float], per_snr: int,
               rng: np.random.Generator, *, es_mode: bool = False) -> ChannelBatch:
    """Zero-codeword training batch of ``per_snr * len(snr_list)`` frames."""
    if not snr_list:
        raise CodeError("empty snr grid")
    if per_snr < 1:
        raise CodeError(f"per-snr count must be positive, got {per_snr}")
    zero = np.zeros((per_snr, code.n), dtype=np.uint8)
    llr_parts, snr_parts, sigma_parts = [], [], []
    for snr in snr_list:
        llrs, sigma = noisy_llrs(code, zero, snr, rng, es_mode=es_mode)
        llr_parts.append(llrs)
        snr_parts.append(np.full(per_snr, float(snr)))
        sigma_parts.append(np.full(per_snr, sigma))
    batch = per_snr * len(snr_list)
    return ChannelBatch(
        llrs=np.concatenate(llr_parts),
        targets=np.zeros((batch, code.n), dtype=np.uint8),
        snr_db=np.concatenate(snr_parts),
        sigma=np.concatenate(sigma_parts),
    )


def random_codeword_llrs(code: CodeSpec, snr_db: float, count: int,
                         rng: np.random.Generator, *, es_mode: bool = False
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random codewords through the channel: (codewords, llrs).

    Evaluation-side sanity path for checking that results do not depend on
    the transmitted word; training always uses :func:`make_batch`.
    """
    msgs = rng.integers(0, 2, size=(count, code.k), dtype=np.uint8)
    words = (msgs @ code.generator) % 2
    llrs, _ = noisy_llrs(code, words, snr_db, rng, es_mode=es_mode)
    return words, llrs
