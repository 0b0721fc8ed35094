"""Weighted belief propagation with permutation-interleaved blocks.

The decoder unrolls J blocks of I flooding iterations each. Block j starts
from an anchor vector ``o_init`` (the channel llr for block 1); within the
block, iteration i computes

    xv_i[e=(v,c)] = tanh( clamp(o_{i-1}[v] - xc_{i-1}[e]) / 2 )
    xc_i[e=(c,v)] = clamp( 2 atanh( prod of xv_i over the other edges of c ) )
    o_i[v]        = o_init[v] + sum over edges e of v of  w[e] * xc_i[e]

with per-edge weights w and all clamps at +-llr_clip. The marginal is
anchored at the block init, not at the previous iteration. After the last
iteration the block output is permuted by a code automorphism and becomes
the next block's anchor; de-permuted outputs are tracked so decisions are
always read in the original coordinate order.

With unit weights, one block, and the identity permutation this is exactly
classical sum-product decoding, message for message; the tests hold the
implementation to that equivalence against an independent reference.

The product-form check update is correct for the llr orientation used here
(log P(1)/P(0)) only when every check touches an even number of variables.
That holds for any code containing the all-ones word, in particular every
code built by :func:`permbp.codes.build_bch_code`; graphs violating it are
refused rather than silently decoded with flipped extrinsic signs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from permbp.autgroup import PermutationElement, identity
from permbp.channel import hard_decision
from permbp.codes import CodeError, CodeSpec, TannerGraph, syndrome

__all__ = [
    "DecoderConfig",
    "DecoderParams",
    "DecodeResult",
    "BlockRun",
    "variable_update",
    "check_update",
    "marginal_update",
    "run_blocks",
    "decode",
    "bp_config",
    "identity_perms",
    "LegacyParams",
    "decode_legacy",
    "save_weights",
    "load_weights",
]

WEIGHT_HEADER = "permbp-weights v1"


@dataclass(frozen=True)
class DecoderConfig:
    """Architecture shape: J permutation blocks of I iterations each.

    ``schedule_seed`` is carried for harness code that derives permutation
    streams; the decoder itself always takes explicit permutations.
    """

    i_permutations: int
    i_bp: int
    llr_clip: float = 15.0
    weight_variable_input: bool = False
    early_stop_on_syndrome: bool = False
    use_legacy: bool = False
    schedule_seed: int | None = None

    def __post_init__(self) -> None:
        if self.i_permutations < 1:
            raise CodeError(f"need at least one block, got {self.i_permutations}")
        if self.i_bp < 1:
            raise CodeError(f"need at least one iteration per block, got {self.i_bp}")
        if not self.llr_clip > 0:
            raise CodeError(f"llr clamp must be positive, got {self.llr_clip}")


def variable_update(o_prev: float, x_check_in: float, llr_clip: float) -> float:
    """Scalar form of the variable-to-check message."""
    return float(np.tanh(0.5 * np.clip(o_prev - x_check_in, -llr_clip, llr_clip)))


def check_update(incoming: list[float], llr_clip: float) -> float:
    """Scalar form of the check-to-variable message over the sibling edges."""
    p = 1.0
    for x in incoming:
        p *= x
    with np.errstate(divide="ignore"):
        raw = 2.0 * np.arctanh(p)
    return float(np.clip(raw, -llr_clip, llr_clip))


def marginal_update(o_init: float, edge_msgs: list[float],
                    weights: list[float]) -> float:
    """Scalar form of the weighted marginal."""
    if len(edge_msgs) != len(weights):
        raise CodeError("edge message and weight lists differ in length")
    return float(o_init + sum(w * x for w, x in zip(weights, edge_msgs)))


@dataclass(eq=False)
class DecoderParams:
    """Per-edge marginal weights, shared across all blocks and iterations."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise CodeError("weights must be a flat per-edge vector")
        if not np.all(np.isfinite(self.weights)):
            raise CodeError("weights must be finite")

    @classmethod
    def unit(cls, code: CodeSpec) -> "DecoderParams":
        return cls(np.ones(code.graph.edge_count))

    @property
    def parameter_count(self) -> int:
        return int(self.weights.size)

    def copy(self) -> "DecoderParams":
        return DecoderParams(self.weights.copy())


# ---------------------------------------------------------------------------
# graph preprocessing shared by forward and backward passes


@dataclass(eq=False)
class GraphOps:
    edge_v: np.ndarray
    degree_groups: tuple[tuple[int, np.ndarray], ...]
    m_ev: np.ndarray


@lru_cache(maxsize=32)
def _graph_ops(graph: TannerGraph) -> GraphOps:
    degrees = np.array([idx.size for idx in graph.check_edges])
    odd = np.flatnonzero(degrees % 2)
    if odd.size:
        raise CodeError(
            f"check {odd[0]} touches an odd number of variables; the "
            "product-form update needs even check degrees (the all-ones "
            "word must be a codeword)"
        )
    groups = []
    for d in np.unique(degrees):
        rows = np.flatnonzero(degrees == d)
        mat = np.stack([graph.check_edges[c] for c in rows])
        groups.append((int(d), mat))
    m_ev = np.zeros((graph.edge_count, graph.n))
    m_ev[np.arange(graph.edge_count), graph.edge_v] = 1.0
    return GraphOps(
        edge_v=graph.edge_v,
        degree_groups=tuple(groups),
        m_ev=m_ev,
    )


def _loo_products(ops: GraphOps, xv: np.ndarray) -> np.ndarray:
    """Per-edge product of the sibling variable messages at each check."""
    out = np.empty_like(xv)
    for _, edge_mat in ops.degree_groups:
        x = xv[:, edge_mat]
        pre = np.ones_like(x)
        pre[..., 1:] = np.cumprod(x[..., :-1], axis=-1)
        suf = np.ones_like(x)
        suf[..., :-1] = np.cumprod(x[..., ::-1], axis=-1)[..., ::-1][..., 1:]
        out[:, edge_mat] = pre * suf
    return out


# ---------------------------------------------------------------------------
# forward pass


@dataclass(eq=False)
class IterTrace:
    mask_pre: np.ndarray
    xv: np.ndarray
    p_loo: np.ndarray
    mask_raw: np.ndarray
    xc: np.ndarray
    o: np.ndarray


@dataclass(eq=False)
class BlockTrace:
    o_init: np.ndarray
    iters: list[IterTrace]
    perm: PermutationElement
    inv_chain: PermutationElement
    c: np.ndarray
    d: np.ndarray


@dataclass(eq=False)
class DecodeTrace:
    llr: np.ndarray
    blocks: list[BlockTrace]


@dataclass(eq=False)
class BlockRun:
    """Everything a caller can want from one batched run.

    ``d_list`` holds each executed block's de-permuted soft output. With
    ``stop_on_zero`` a frame freezes its ``final`` entry at the first block
    whose hard decision satisfies every check (``stop_block`` is that
    1-based index, 0 if never); later ``d_list`` entries still contain the
    frame's continued trajectory and are not used for its decision. The
    block loop breaks once every frame has stopped, so per-frame results
    never depend on what else shares the batch.
    """

    d_list: list[np.ndarray]
    final: np.ndarray
    stop_block: np.ndarray
    executed_blocks: int
    trace: DecodeTrace | None = None


def _forward_block(ops: GraphOps, weights: np.ndarray, o_init: np.ndarray,
                   i_bp: int, clip: float, weight_var_input: bool,
                   record: bool) -> tuple[np.ndarray, list[IterTrace]]:
    xc = np.zeros((o_init.shape[0], ops.edge_v.size))
    o = o_init
    iters: list[IterTrace] = []
    for _ in range(i_bp):
        sub = weights * xc if weight_var_input else xc
        pre = o[:, ops.edge_v] - sub
        pre_c = np.clip(pre, -clip, clip)
        xv = np.tanh(0.5 * pre_c)
        p_loo = _loo_products(ops, xv)
        with np.errstate(divide="ignore"):
            raw = 2.0 * np.arctanh(p_loo)
        xc = np.clip(raw, -clip, clip)
        o = o_init + (weights * xc) @ ops.m_ev
        if record:
            iters.append(IterTrace(
                mask_pre=np.abs(pre) <= clip,
                xv=xv,
                p_loo=p_loo,
                mask_raw=np.abs(raw) <= clip,
                xc=xc,
                o=o,
            ))
    return o, iters


def run_blocks(code: CodeSpec, params: DecoderParams, config: DecoderConfig,
               llr: np.ndarray, perms: list[PermutationElement], *,
               record: bool = False, stop_on_zero: bool = False) -> BlockRun:
    """Run the full block stack on a batch of llr vectors."""
    ops = _graph_ops(code.graph)
    if params.weights.size != code.graph.edge_count:
        raise CodeError(
            f"{params.weights.size} weights for {code.graph.edge_count} edges"
        )
    if len(perms) != config.i_permutations:
        raise CodeError(
            f"{len(perms)} permutations supplied for {config.i_permutations} blocks"
        )
    llr = np.atleast_2d(np.asarray(llr, dtype=np.float64))
    if llr.shape[1] != code.n:
        raise CodeError(f"llr length {llr.shape[1]} does not match n={code.n}")
    if not np.all(np.isfinite(llr)):
        raise CodeError("llr input contains non-finite values")

    batch = llr.shape[0]
    o_init = llr
    inv_chain = identity(code.n)
    final = np.zeros_like(llr)
    stop_block = np.zeros(batch, dtype=np.int64)
    d_list: list[np.ndarray] = []
    blocks: list[BlockTrace] = []
    executed = 0

    for j, perm in enumerate(perms, start=1):
        o_last, iters = _forward_block(
            ops, params.weights, o_init,
            config.i_bp, config.llr_clip, config.weight_variable_input, record,
        )
        c = perm.apply(o_last)
        inv_chain = inv_chain.compose(perm.inverse())
        d = inv_chain.apply(c)
        d_list.append(d)
        executed = j
        if record:
            blocks.append(BlockTrace(
                o_init=o_init, iters=iters, perm=perm, inv_chain=inv_chain,
                c=c, d=d,
            ))
        o_init = c
        if stop_on_zero:
            ok = ~syndrome(code, hard_decision(d)).any(axis=1)
            newly = ok & (stop_block == 0)
            final[newly] = d[newly]
            stop_block[newly] = j
            if np.all(stop_block > 0):
                break

    never = stop_block == 0
    final[never] = d_list[-1][never]
    return BlockRun(
        d_list=d_list,
        final=final,
        stop_block=stop_block,
        executed_blocks=executed,
        trace=DecodeTrace(llr=llr, blocks=blocks) if record else None,
    )


@dataclass(eq=False)
class DecodeResult:
    hard: np.ndarray
    soft: np.ndarray
    stop_block: np.ndarray
    executed_blocks: int

    @property
    def success(self) -> np.ndarray:
        return self.stop_block > 0


def decode(code: CodeSpec, params: DecoderParams, config: DecoderConfig,
           llr: np.ndarray, perms: list[PermutationElement], *,
           stop_on_zero: bool | None = None) -> DecodeResult:
    """Batched hard-output decoding; accepts one llr vector or a batch.

    ``stop_on_zero`` defaults to the config's ``early_stop_on_syndrome``.
    """
    if stop_on_zero is None:
        stop_on_zero = config.early_stop_on_syndrome
    run = run_blocks(code, params, config, llr, perms,
                     record=False, stop_on_zero=stop_on_zero)
    return DecodeResult(
        hard=hard_decision(run.final),
        soft=run.final,
        stop_block=run.stop_block,
        executed_blocks=run.executed_blocks,
    )


def bp_config(iterations: int, llr_clip: float = 15.0) -> DecoderConfig:
    """Plain flooding sum-product: one block, no permutation shuffling."""
    return DecoderConfig(i_permutations=1, i_bp=iterations, llr_clip=llr_clip)


def identity_perms(code: CodeSpec, count: int) -> list[PermutationElement]:
    return [identity(code.n) for _ in range(count)]


# ---------------------------------------------------------------------------
# the older fully-parameterized architecture, kept for comparison


@dataclass(eq=False)
class LegacyParams:
    """Dense per-edge-pair weights of the unpooled architecture.

    ``w_pair[e, e']`` scales the check message arriving over edge e' when
    forming the variable message on edge e; it is only meaningful when both
    edges share a variable and differ, which the mask pins. ``w_out`` scales
    each edge's contribution to the output marginal.
    """

    w_pair: np.ndarray
    w_out: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.w_pair = np.asarray(self.w_pair, dtype=np.float64) * self.mask
        self.w_out = np.asarray(self.w_out, dtype=np.float64)

    @classmethod
    def unit(cls, code: CodeSpec) -> "LegacyParams":
        g = code.graph
        same_var = g.edge_v[:, None] == g.edge_v[None, :]
        mask = same_var & ~np.eye(g.edge_count, dtype=bool)
        return cls(
            w_pair=mask.astype(np.float64),
            w_out=np.ones(g.edge_count),
            mask=mask,
        )

    @property
    def parameter_count(self) -> int:
        return int(self.mask.sum() + self.w_out.size)


def decode_legacy(code: CodeSpec, params: LegacyParams, iterations: int,
                  llr: np.ndarray, llr_clip: float = 15.0) -> np.ndarray:
    """Soft marginals of the dense-weight architecture (forward only)."""
    ops = _graph_ops(code.graph)
    llr = np.atleast_2d(np.asarray(llr, dtype=np.float64))
    if llr.shape[1] != code.n:
        raise CodeError(f"llr length {llr.shape[1]} does not match n={code.n}")
    xc = np.zeros((llr.shape[0], code.graph.edge_count))
    for _ in range(iterations):
        pre = llr[:, ops.edge_v] + xc @ params.w_pair.T
        xv = np.tanh(0.5 * np.clip(pre, -llr_clip, llr_clip))
        with np.errstate(divide="ignore"):
            raw = 2.0 * np.arctanh(_loo_products(ops, xv))
        xc = np.clip(raw, -llr_clip, llr_clip)
    return llr + (params.w_out * xc) @ ops.m_ev


# ---------------------------------------------------------------------------
# weight files


def save_weights(code: CodeSpec, params: DecoderParams, path: str | Path) -> None:
    g = code.graph
    if params.weights.size != g.edge_count:
        raise CodeError("weight vector does not match the graph")
    lines = [
        WEIGHT_HEADER,
        f"n {g.n} checks {g.check_count} edges {g.edge_count}",
    ]
    lines.extend(
        f"{g.edge_c[e]} {g.edge_v[e]} {float(params.weights[e])!r}"
        for e in range(g.edge_count)
    )
    Path(path).write_text("\n".join(lines) + "\n")


def load_weights(code: CodeSpec, path: str | Path) -> DecoderParams:
    g = code.graph
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != WEIGHT_HEADER:
        raise CodeError(f"{path}: not a weight file (missing header)")
    expect = f"n {g.n} checks {g.check_count} edges {g.edge_count}"
    if len(lines) < 2 or lines[1] != expect:
        raise CodeError(f"{path}: weight file does not match this code "
                        f"(expected {expect!r})")
    if len(lines) != 2 + g.edge_count:
        raise CodeError(f"{path}: expected {g.edge_count} weight lines")
    weights = np.empty(g.edge_count)
    for e, ln in enumerate(lines[2:]):
        parts = ln.split()
        if len(parts) != 3:
            raise CodeError(f"{path}: bad weight line {ln!r}")
        c, v, w = int(parts[0]), int(parts[1]), float(parts[2])
        if c != g.edge_c[e] or v != g.edge_v[e]:
            raise CodeError(
                f"{path}: edge {e} is ({g.edge_c[e]}, {g.edge_v[e]}) "
                f"but the file says ({c}, {v})"
            )
        if not np.isfinite(w):
            raise CodeError(f"{path}: non-finite weight on edge {e}")
        weights[e] = w
    return DecoderParams(weights)
