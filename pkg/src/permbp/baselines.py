"""Classical decoders: reference sum-product, mRRD list decoding, ordered
statistics, and exhaustive maximum likelihood.

``bp_decode`` is deliberately written as plain dictionary-based message
passing, one edge at a time. It is the reference the vectorized decoder is
tested against, so it must stay structurally independent of that code; do
not "optimize" it into the array form.

Selection metric everywhere: soft correlation sum((2c - 1) * llr), the
BPSK-equivalent of minimum Euclidean distance under this llr convention.
Ties break toward the lexicographically smallest codeword.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

from permbp.autgroup import PermutationReservoir, identity
from permbp.channel import hard_decision
from permbp.codes import CodeError, CodeSpec, enumerate_codewords, syndrome
from permbp.decoder import DecoderConfig, DecoderParams, run_blocks

__all__ = [
    "BpReference",
    "bp_decode",
    "soft_correlation",
    "CandidateList",
    "mrrd_decode",
    "mrrd_decode_single",
    "osd_decode",
    "ml_decode_exhaustive",
]


# ---------------------------------------------------------------------------
# reference sum-product


@dataclass(eq=False)
class BpReference:
    """Per-iteration message and marginal history of the reference decoder."""

    xv: list[dict]
    xc: list[dict]
    marginals: list[np.ndarray]
    hard: np.ndarray


def bp_decode(code: CodeSpec, llr: np.ndarray, iterations: int,
              llr_clip: float = 15.0) -> BpReference:
    """Flooding-schedule sum-product on one llr vector, kept naive on purpose."""
    if iterations < 1:
        raise CodeError(f"need at least one iteration, got {iterations}")
    llr = np.asarray(llr, dtype=np.float64)
    if llr.shape != (code.n,):
        raise CodeError(f"expected a single length-{code.n} llr vector")
    h = code.h
    checks_of = {v: [c for c in range(code.h_rows) if h[c, v]] for v in range(code.n)}
    vars_of = {c: [v for v in range(code.n) if h[c, v]] for c in range(code.h_rows)}

    xc = {(c, v): 0.0 for c in vars_of for v in vars_of[c]}
    xv_hist, xc_hist, marg_hist = [], [], []
    for _ in range(iterations):
        xv = {}
        for v in range(code.n):
            for c in checks_of[v]:
                extrinsic = llr[v] + sum(xc[(c2, v)] for c2 in checks_of[v] if c2 != c)
                arg = min(max(extrinsic, -llr_clip), llr_clip)
                xv[(v, c)] = math.tanh(0.5 * arg)
        new_xc = {}
        for c in vars_of:
            for v in vars_of[c]:
                p = 1.0
                for v2 in vars_of[c]:
                    if v2 != v:
                        p *= xv[(v2, c)]
                if abs(p) >= 1.0:
                    raw = math.inf if p > 0 else -math.inf
                else:
                    raw = 2.0 * math.atanh(p)
                new_xc[(c, v)] = min(max(raw, -llr_clip), llr_clip)
        xc = new_xc
        marginal = np.array([
            llr[v] + sum(xc[(c, v)] for c in checks_of[v]) for v in range(code.n)
        ])
        xv_hist.append(xv)
        xc_hist.append(xc)
        marg_hist.append(marginal)
    return BpReference(
        xv=xv_hist, xc=xc_hist, marginals=marg_hist,
        hard=hard_decision(marg_hist[-1]),
    )


# ---------------------------------------------------------------------------
# candidate selection machinery


def soft_correlation(words: np.ndarray, llr: np.ndarray) -> np.ndarray:
    """Row-wise sum((2c - 1) * llr); higher is more llr-consistent."""
    w = np.atleast_2d(words).astype(np.float64)
    return (2.0 * w - 1.0) @ np.asarray(llr, dtype=np.float64)


def _pack_lex(words: np.ndarray) -> np.ndarray:
    """Big-endian bit packing so integer order equals lexicographic order."""
    words = np.atleast_2d(words)
    n = words.shape[1]
    if n > 64:
        raise CodeError("lexicographic packing supports n <= 64")
    powers = (np.uint64(1) << np.arange(n - 1, -1, -1).astype(np.uint64))
    return words.astype(np.uint64) @ powers


@dataclass(eq=False)
class CandidateList:
    """Zero-syndrome codeword candidates with their correlation scores."""

    code: CodeSpec
    words: list[np.ndarray] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)

    def add(self, word: np.ndarray, llr: np.ndarray) -> None:
        if np.any(syndrome(self.code, word)):
            raise CodeError("candidate has a nonzero syndrome")
        self.words.append(np.asarray(word, dtype=np.uint8))
        self.scores.append(float(soft_correlation(word, llr)[0]))

    def __len__(self) -> int:
        return len(self.words)

    def best(self) -> np.ndarray:
        if not self.words:
            raise CodeError("empty candidate list")
        order = sorted(
            range(len(self.words)),
            key=lambda i: (-self.scores[i], int(_pack_lex(self.words[i])[0])),
        )
        return self.words[order[0]]


class _Best:
    """Running per-frame argmax under (correlation, lex) ordering."""

    def __init__(self, batch: int, n: int):
        self.corr = np.full(batch, -np.inf)
        self.packed = np.zeros(batch, dtype=np.uint64)
        self.words = np.zeros((batch, n), dtype=np.uint8)
        self.found = np.zeros(batch, dtype=bool)

    def offer(self, words: np.ndarray, corr: np.ndarray,
              where: np.ndarray | None = None) -> None:
        packed = _pack_lex(words)
        better = (corr > self.corr) | ((corr == self.corr) & (packed < self.packed))
        if where is not None:
            better &= where
        self.corr[better] = corr[better]
        self.packed[better] = packed[better]
        self.words[better] = words[better]
        self.found |= better


# ---------------------------------------------------------------------------
# mRRD


def mrrd_decode(code: CodeSpec, llr: np.ndarray, branches: int, blocks: int,
                iters_per_block: int, reservoir: PermutationReservoir, *,
                params: DecoderParams | None = None,
                llr_clip: float = 15.0) -> np.ndarray:
    """Permutation list decoding over a batch of llr vectors.

    Each branch runs ``blocks`` BP blocks with a fresh reservoir permutation
    between consecutive blocks (none after the last; a single block is
    therefore plain BP). Every block whose de-permuted hard decision has
    zero syndrome contributes a candidate; the best-correlation candidate
    wins, and frames with no candidate fall back to the best branch-final
    hard decision. Unit weights unless ``params`` is given.
    """
    if branches < 1 or blocks < 1:
        raise CodeError("branches and blocks must both be positive")
    llr = np.atleast_2d(np.asarray(llr, dtype=np.float64))
    batch = llr.shape[0]
    params = params or DecoderParams.unit(code)
    config = DecoderConfig(i_permutations=blocks, i_bp=iters_per_block,
                           llr_clip=llr_clip)
    cand = _Best(batch, code.n)
    fallback = _Best(batch, code.n)
    for _ in range(branches):
        perms = reservoir.sample_chain(blocks - 1) + [identity(code.n)]
        run = run_blocks(code, params, config, llr, perms)
        for d in run.d_list:
            hard = hard_decision(d)
            ok = ~syndrome(code, hard).any(axis=1)
            cand.offer(hard, _rowwise_corr(hard, llr), where=ok)
        final_hard = hard_decision(run.d_list[-1])
        fallback.offer(final_hard, _rowwise_corr(final_hard, llr))
    out = np.where(cand.found[:, None], cand.words, fallback.words)
    return out.astype(np.uint8)


def _rowwise_corr(words: np.ndarray, llr: np.ndarray) -> np.ndarray:
    return np.sum((2.0 * words - 1.0) * llr, axis=1)


def mrrd_decode_single(code: CodeSpec, llr: np.ndarray, branches: int,
                       blocks: int, iters_per_block: int,
                       reservoir: PermutationReservoir, *,
                       params: DecoderParams | None = None,
                       llr_clip: float = 15.0) -> np.ndarray:
    """One-frame mRRD built on an explicit CandidateList.

    Same permutation draws and selection rule as :func:`mrrd_decode`;
    kept as a separate readable route so the batched bookkeeping has an
    in-tree cross-check.
    """
    llr = np.asarray(llr, dtype=np.float64)
    if llr.shape != (code.n,):
        raise CodeError(f"expected a single length-{code.n} llr vector")
    params = params or DecoderParams.unit(code)
    config = DecoderConfig(i_permutations=blocks, i_bp=iters_per_block,
                           llr_clip=llr_clip)
    candidates = CandidateList(code)
    finals = []
    for _ in range(branches):
        perms = reservoir.sample_chain(blocks - 1) + [identity(code.n)]
        run = run_blocks(code, params, config, llr, perms)
        for d in run.d_list:
            hard = hard_decision(d)[0]
            if not syndrome(code, hard).any():
                candidates.add(hard, llr)
        finals.append(hard_decision(run.d_list[-1])[0])
    if len(candidates):
        return candidates.best()
    order = sorted(
        range(len(finals)),
        key=lambda i: (-float(soft_correlation(finals[i], llr)[0]),
                       int(_pack_lex(finals[i])[0])),
    )
    return finals[order[0]]


# ---------------------------------------------------------------------------
# ordered statistics decoding


@lru_cache(maxsize=16)
def _flip_masks(k: int, order: int) -> np.ndarray:
    masks = [np.zeros(k, dtype=np.uint8)]
    for size in range(1, order + 1):
        for combo in combinations(range(k), size):
            m = np.zeros(k, dtype=np.uint8)
            m[list(combo)] = 1
            masks.append(m)
    return np.stack(masks)


def _reliability_basis(g_ints: list[int], order_cols: np.ndarray, k: int
                       ) -> list[int]:
    """Gauss-Jordan the generator rows onto the most-reliable independent
    columns; dependent columns are skipped (standard basis repair)."""
    rows = list(g_ints)
    r = 0
    for col in order_cols:
        if r == k:
            break
        bit = 1 << int(col)
        pivot = next((i for i in range(r, k) if rows[i] & bit), None)
        if pivot is None:
            continue
        rows[r], rows[pivot] = rows[pivot], rows[r]
        for i in range(k):
            if i != r and rows[i] & bit:
                rows[i] ^= rows[r]
        r += 1
    return rows


def _basis_columns(rows: list[int], order_cols: np.ndarray, k: int) -> list[int]:
    cols = []
    taken = 0
    for col in order_cols:
        if taken == k:
            break
        bit = 1 << int(col)
        if rows[taken] & bit:
            cols.append(int(col))
            taken += 1
    return cols


@lru_cache(maxsize=8)
def _generator_ints(code: CodeSpec) -> tuple[int, ...]:
    return tuple(
        int(sum(int(b) << j for j, b in enumerate(row))) for row in code.generator
    )


def osd_decode(code: CodeSpec, llr: np.ndarray, order: int) -> np.ndarray:
    """Order-l ordered statistics decoding over a batch of llr vectors."""
    if order not in (0, 1, 2):
        raise CodeError(f"reprocessing order must be 0, 1, or 2, got {order}")
    llr = np.atleast_2d(np.asarray(llr, dtype=np.float64))
    if llr.shape[1] != code.n:
        raise CodeError(f"llr length {llr.shape[1]} does not match n={code.n}")
    k = code.k
    g_ints = _generator_ints(code)
    flips = _flip_masks(k, order)
    hard = hard_decision(llr)
    out = np.empty((llr.shape[0], code.n), dtype=np.uint8)
    col_idx = np.arange(code.n)
    for f in range(llr.shape[0]):
        order_cols = np.argsort(-np.abs(llr[f]), kind="stable")
        rows = _reliability_basis(g_ints, order_cols, k)
        basis = _basis_columns(rows, order_cols, k)
        rows_mat = ((np.array(rows, dtype=object)[:, None]
                     >> col_idx) & 1).astype(np.uint8)
        u0 = hard[f, basis]
        words = ((u0 ^ flips) @ rows_mat) % 2
        corr = _rowwise_corr(words, llr[f])
        packed = _pack_lex(words)
        best = np.lexsort((packed, -corr))[0]
        out[f] = words[best]
    return out


# ---------------------------------------------------------------------------
# exhaustive maximum likelihood


@lru_cache(maxsize=8)
def _codebook(code: CodeSpec) -> np.ndarray:
    words = np.stack(list(enumerate_codewords(code)))
    order = np.argsort(_pack_lex(words), kind="stable")
    book = words[order]
    book.setflags(write=False)
    return book


def ml_decode_exhaustive(code: CodeSpec, llr: np.ndarray, *,
                         chunk: int = 256) -> np.ndarray:
    """Brute-force best-correlation codeword; first (lex-smallest) on ties."""
    llr = np.atleast_2d(np.asarray(llr, dtype=np.float64))
    if llr.shape[1] != code.n:
        raise CodeError(f"llr length {llr.shape[1]} does not match n={code.n}")
    book = _codebook(code)
    signs = 2.0 * book.astype(np.float64) - 1.0
    out = np.empty((llr.shape[0], code.n), dtype=np.uint8)
    for start in range(0, llr.shape[0], chunk):
        stop = min(start + chunk, llr.shape[0])
        corr = llr[start:stop] @ signs.T
        out[start:stop] = book[np.argmax(corr, axis=1)]
    return out
