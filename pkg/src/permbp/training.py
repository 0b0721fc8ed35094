"""Loss, exact reverse-mode gradients, and RMSProp training for the decoder.

The gradient is accumulated by hand through the recorded forward trace:
permutations backpropagate as index gathers, both clamps pass zero gradient
outside their interval, and the leave-one-out product at the checks is
differentiated with a two-sided scan so no quotient by a possibly-zero
message is ever formed. Everything is plain numpy; determinism on one
thread is part of the contract and the tests hold the trainer to it.

Loss (zero-codeword targets unless stated otherwise):

    L1_j   = mean bce(sigma(d_j), y)        one per block, original bit order
    L2_ji  = mean bce(sigma(o_{j,i}), y_j)  per iteration, in the block's own
                                            (permuted) coordinate frame
    L3     = sum of squared weights
    total  = sum_j L1_j + sum_{j,i} L2_ji + lambda * L3

The regularizer enters the total exactly once, so its gradient is 2*lambda*w
and its Hessian contribution is exactly 2*lambda*I — the property the
Hessian probe and its acceptance checks rest on.

Cross-entropies use an epsilon floor of 1e-12 inside the logs; the analytic
gradient differentiates the floored expression itself, so finite differences
of the computed loss match it even where sigmoids saturate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from permbp.autgroup import PermutationElement, PermutationReservoir, identity
from permbp.channel import ChannelBatch, hard_decision, make_batch
from permbp.codes import CodeError, CodeSpec
from permbp.decoder import (
    DecoderConfig,
    DecoderParams,
    DecodeTrace,
    _graph_ops,
    decode,
    run_blocks,
)

__all__ = [
    "NumericalError",
    "LossBreakdown",
    "TrainConfig",
    "TrainState",
    "HistoryRow",
    "loss",
    "gradient",
    "loss_and_gradient",
    "rmsprop_step",
    "train",
    "validation_setup",
    "write_learning_curve_csv",
]

BCE_EPS = 1e-12
GRAD_CHUNK = 64  # fixed so gradient reduction order never varies


class NumericalError(RuntimeError):
    """Non-finite loss or gradient; carries what and when for diagnosis."""

    def __init__(self, message: str, *, epoch: int | None = None,
                 weight_ids: list[int] | None = None):
        self.bare_message = message
        self.epoch = epoch
        self.weight_ids = weight_ids or []
        detail = message
        if epoch is not None:
            detail = f"epoch {epoch}: {detail}"
        if self.weight_ids:
            detail = f"{detail} (weights {self.weight_ids})"
        super().__init__(detail)


# ---------------------------------------------------------------------------
# elementwise pieces


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _bce(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise cross-entropy between sigma(x) and target y, floored logs."""
    s = _sigmoid(x)
    return -(y * np.log(s + BCE_EPS) + (1.0 - y) * np.log1p(BCE_EPS - s))


def _bce_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d/dx of _bce — the floored expression itself, not the ideal formula."""
    s = _sigmoid(x)
    sp = s * (1.0 - s)
    return sp * ((1.0 - y) / (1.0 - s + BCE_EPS) - y / (s + BCE_EPS))


# ---------------------------------------------------------------------------
# loss


@dataclass(eq=False)
class LossBreakdown:
    """The three loss terms, kept apart so every run can be audited."""

    l1_per_block: np.ndarray
    l2_per_block_iter: np.ndarray
    l3: float
    lam: float
    total: float

    def recomposed(self) -> float:
        return float(self.l1_per_block.sum() + self.l2_per_block_iter.sum()
                     + self.lam * self.l3)


def _block_frame_targets(blocks, target: np.ndarray) -> list[np.ndarray]:
    """Target bits expressed in each block's own coordinate frame."""
    frames = []
    y = target
    for block in blocks:
        frames.append(y)
        y = block.perm.apply(y)
    return frames


def loss(trace: DecodeTrace, target: np.ndarray, params: DecoderParams,
         lam: float) -> LossBreakdown:
    """Batch-mean loss of a recorded decode against per-frame target bits."""
    y = np.atleast_2d(np.asarray(target, dtype=np.float64))
    batch, n = trace.llr.shape
    if y.shape not in ((1, n), (batch, n)):
        raise CodeError(f"target shape {y.shape} does not fit batch "
                        f"({batch}, {n})")
    y = np.broadcast_to(y, (batch, n))
    blocks = trace.blocks
    n_iters = len(blocks[0].iters)
    l1 = np.empty(len(blocks))
    l2 = np.empty((len(blocks), n_iters))
    frames = _block_frame_targets(blocks, y)
    for j, block in enumerate(blocks):
        l1[j] = _bce(block.d, y).mean()
        for i, it in enumerate(block.iters):
            l2[j, i] = _bce(it.o, frames[j]).mean()
    l3 = float(np.sum(params.weights ** 2))
    total = float(l1.sum() + l2.sum() + lam * l3)
    return LossBreakdown(l1_per_block=l1, l2_per_block_iter=l2, l3=l3,
                         lam=lam, total=total)


# ---------------------------------------------------------------------------
# reverse-mode gradient


def _loo_backward(ops, xv: np.ndarray, g_p: np.ndarray) -> np.ndarray:
    """Gradient through the leave-one-out products.

    For a check with messages x_1..x_d and upstream gradients A_i on the
    products p_i = prod_{t != i} x_t,

        dL/dx_s = sum_{i<s} A_i pre_i (prod_{i<t<s} x_t) suf_s
                + sum_{i>s} A_i suf_i (prod_{s<t<i} x_t) pre_s

    both sums collapse into forward/backward recurrences
    F_s = F_{s-1} x_s + A_s pre_s and B_s = B_{s+1} x_s + A_s suf_s, giving
    dL/dx_s = F_{s-1} suf_s + pre_s B_{s+1} with no division anywhere.
    """
    out = np.zeros_like(xv)
    for d, mat in ops.degree_groups:
        x = xv[:, mat]
        a = g_p[:, mat]
        pre = np.ones_like(x)
        pre[..., 1:] = np.cumprod(x[..., :-1], axis=-1)
        suf = np.ones_like(x)
        suf[..., :-1] = np.cumprod(x[..., ::-1], axis=-1)[..., ::-1][..., 1:]
        g = np.empty_like(x)
        fwd = np.zeros(x.shape[:-1])
        for s in range(d):
            g[..., s] = fwd * suf[..., s]
            fwd = fwd * x[..., s] + a[..., s] * pre[..., s]
        bwd = np.zeros(x.shape[:-1])
        for s in range(d - 1, -1, -1):
            g[..., s] += pre[..., s] * bwd
            bwd = bwd * x[..., s] + a[..., s] * suf[..., s]
        out[:, mat] = g
    return out


def _chunk_backward(code: CodeSpec, params: DecoderParams,
                    config: DecoderConfig, llrs: np.ndarray,
                    targets: np.ndarray, perms: list[PermutationElement],
                    scale: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward + reverse over one chunk.

    Returns (sum of per-element L1 bce, per block), (same for L2), and the
    chunk's contribution to the weight gradient, all unscaled by the batch
    mean except the gradient, which absorbs ``scale`` through its seeds.
    """
    ops = _graph_ops(code.graph)
    w = params.weights
    run = run_blocks(code, params, config, llrs, perms, record=True)
    blocks = run.trace.blocks
    n_iters = config.i_bp
    frames = _block_frame_targets(blocks, targets)

    l1_sums = np.empty(len(blocks))
    l2_sums = np.empty((len(blocks), n_iters))
    g_w = np.zeros_like(w)
    g_c_carry = np.zeros_like(llrs)

    for j in range(len(blocks) - 1, -1, -1):
        block = blocks[j]
        y = frames[j]
        l1_sums[j] = _bce(block.d, targets).sum()
        g_d = scale * _bce_grad(block.d, targets)
        g_c = g_c_carry + g_d[:, block.inv_chain.map]
        g_o_carry = g_c[:, block.perm.map]
        g_xc_carry = np.zeros((llrs.shape[0], w.size))
        g_oinit = np.zeros_like(llrs)
        for i in range(n_iters - 1, -1, -1):
            it = block.iters[i]
            l2_sums[j, i] = _bce(it.o, y).sum()
            g_o = scale * _bce_grad(it.o, y) + g_o_carry
            gath = g_o[:, ops.edge_v]
            g_xc = g_xc_carry + w * gath
            g_w += np.sum(it.xc * gath, axis=0)
            g_oinit += g_o
            g_raw = g_xc * it.mask_raw
            g_p = 2.0 * g_raw / np.maximum(1.0 - it.p_loo ** 2, 1e-300)
            g_xv = _loo_backward(ops, it.xv, g_p)
            g_pre = 0.5 * (1.0 - it.xv ** 2) * g_xv * it.mask_pre
            g_o_carry = g_pre @ ops.m_ev
            if config.weight_variable_input:
                xc_prev = block.iters[i - 1].xc if i > 0 else None
                if xc_prev is not None:
                    g_w -= np.sum(xc_prev * g_pre, axis=0)
                g_xc_carry = -w * g_pre
            else:
                g_xc_carry = -g_pre
        g_c_carry = g_oinit + g_o_carry  # o_init feeds every marginal + first pre
    # g_c_carry now holds the gradient on block 1's anchor, the channel llr:
    # constants, so it is dropped here.
    return l1_sums, l2_sums, g_w


def loss_and_gradient(code: CodeSpec, params: DecoderParams,
                      config: DecoderConfig, llrs: np.ndarray,
                      targets: np.ndarray, lam: float,
                      perms: list[PermutationElement],
                      ) -> tuple[LossBreakdown, np.ndarray]:
    """Batch-mean loss and its exact gradient with respect to the weights.

    The batch is processed in fixed-size chunks, accumulated in a fixed
    order, so results are independent of batch size limits and bitwise
    reproducible on one thread.
    """
    llrs = np.atleast_2d(np.asarray(llrs, dtype=np.float64))
    targets = np.broadcast_to(
        np.atleast_2d(np.asarray(targets, dtype=np.float64)), llrs.shape)
    batch, n = llrs.shape
    scale = 1.0 / (batch * n)
    l1 = np.zeros(config.i_permutations)
    l2 = np.zeros((config.i_permutations, config.i_bp))
    g_w = np.zeros_like(params.weights)
    for start in range(0, batch, GRAD_CHUNK):
        stop = min(start + GRAD_CHUNK, batch)
        c_l1, c_l2, c_gw = _chunk_backward(
            code, params, config, llrs[start:stop], targets[start:stop],
            perms, scale)
        l1 += c_l1
        l2 += c_l2
        g_w += c_gw
    l1 *= scale
    l2 *= scale
    g_w = g_w + 2.0 * lam * params.weights
    l3 = float(np.sum(params.weights ** 2))
    total = float(l1.sum() + l2.sum() + lam * l3)
    breakdown = LossBreakdown(l1_per_block=l1, l2_per_block_iter=l2, l3=l3,
                              lam=lam, total=total)
    # a non-finite loss is divergence, the caller's graceful-abort case;
    # a non-finite gradient under a finite loss is a genuine numerical bug
    if np.isfinite(total) and not np.all(np.isfinite(g_w)):
        bad = [int(i) for i in np.flatnonzero(~np.isfinite(g_w))[:8]]
        raise NumericalError("non-finite gradient entries", weight_ids=bad)
    return breakdown, g_w


def gradient(code: CodeSpec, batch: ChannelBatch, params: DecoderParams,
             config: "TrainConfig", perms: list[PermutationElement],
             ) -> np.ndarray:
    """Gradient of the batch-mean total loss; see :func:`loss_and_gradient`."""
    _, g = loss_and_gradient(code, params, config.decoder, batch.llrs,
                             batch.targets, config.lam, perms)
    return g


# ---------------------------------------------------------------------------
# optimizer and training loop


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run depends on, channel and optimizer both."""

    decoder: DecoderConfig
    epochs: int
    snr_list: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
    per_snr: int = 20
    learning_rate: float = 1e-3
    lam: float = 0.0
    grad_clip: float = 0.1
    grad_clip_per_element: bool = False
    project_nonnegative: bool = True
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    seed: int = 0
    n_pr: int = 20
    k_pr: int = 60
    val_per_snr: int = 1000
    val_seed: int = 90210
    es_mode: bool = False

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise CodeError(f"learning rate must be positive, "
                            f"got {self.learning_rate}")
        if not self.grad_clip > 0:
            raise CodeError(f"gradient clip must be positive, "
                            f"got {self.grad_clip}")
        if self.epochs < 1:
            raise CodeError(f"need at least one epoch, got {self.epochs}")
        if self.per_snr < 1 or self.val_per_snr < 1:
            raise CodeError("per-SNR frame counts must be positive")
        if not 0.0 <= self.rms_decay < 1.0:
            raise CodeError(f"rms decay must be in [0, 1), "
                            f"got {self.rms_decay}")
        if self.lam < 0:
            raise CodeError(f"lambda must be non-negative, got {self.lam}")


@dataclass(eq=False)
class HistoryRow:
    epoch: int
    breakdown: LossBreakdown
    val_ber: float


@dataclass(eq=False)
class TrainState:
    params: DecoderParams
    rms_acc: np.ndarray
    epoch: int = 0
    history: list[HistoryRow] = field(default_factory=list)
    diverged: bool = False

    @classmethod
    def fresh(cls, code: CodeSpec) -> "TrainState":
        params = DecoderParams.unit(code)
        return cls(params=params, rms_acc=np.zeros_like(params.weights))


def rmsprop_step(state: TrainState, grads: np.ndarray,
                 config: TrainConfig) -> TrainState:
    """Clip, accumulate, step, project — mutates and returns the state."""
    g = np.asarray(grads, dtype=np.float64)
    if config.grad_clip_per_element:
        g = np.clip(g, -config.grad_clip, config.grad_clip)
    else:
        norm = float(np.linalg.norm(g))
        if norm > config.grad_clip:
            g = g * (config.grad_clip / norm)
    state.rms_acc = config.rms_decay * state.rms_acc \
        + (1.0 - config.rms_decay) * g ** 2
    w = state.params.weights - config.learning_rate * g \
        / np.sqrt(state.rms_acc + config.rms_eps)
    if config.project_nonnegative:
        w = np.maximum(w, 0.0)
    state.params = DecoderParams(w)
    return state


def validation_setup(code: CodeSpec, config: TrainConfig, perms_seed: int,
                     ) -> tuple[ChannelBatch, list[PermutationElement]]:
    """The held-out noise and the fixed permutations a run validates on.

    Deterministic in (config, perms_seed); exposed so evaluations outside
    the trainer can score parameters on exactly the data the history rows
    used.
    """
    _, val_res_seed = np.random.SeedSequence(perms_seed).spawn(2)
    val_reservoir = PermutationReservoir.for_code(
        code, config.n_pr, config.k_pr,
        seed=np.random.default_rng(val_res_seed))
    val_perms = val_reservoir.sample_chain(config.decoder.i_permutations - 1) \
        + [identity(code.n)]
    val = make_batch(code, list(config.snr_list), config.val_per_snr,
                     np.random.default_rng(config.val_seed),
                     es_mode=config.es_mode)
    return val, val_perms


def _validation_ber(code: CodeSpec, params: DecoderParams,
                    config: TrainConfig, val: ChannelBatch,
                    val_perms: list[PermutationElement]) -> float:
    result = decode(code, params, config.decoder, val.llrs, val_perms,
                    stop_on_zero=True)
    return float(np.mean(result.hard != val.targets))


def train(code: CodeSpec, config: TrainConfig, perms_seed: int = 0, *,
          snapshot_hook: Callable[[int, DecoderParams], None] | None = None,
          ) -> TrainState:
    """Train the tied weights from the unit (plain-BP) start.

    One epoch is one fresh zero-codeword batch. History row e holds the
    loss of the epoch-e parameters (measured before their update, on the
    next fresh batch) and their validation BER, so row 0 is the plain-BP
    baseline and the last row evaluates the final parameters. Divergence
    (non-finite loss) stops training with the last good parameters kept.

    ``snapshot_hook(epoch, params)`` — if given — sees every parameter
    vector the run produces, starting with the unit initialization.
    """
    res_seed, _ = np.random.SeedSequence(perms_seed).spawn(2)
    reservoir = PermutationReservoir.for_code(
        code, config.n_pr, config.k_pr, seed=np.random.default_rng(res_seed))
    val, val_perms = validation_setup(code, config, perms_seed)

    rng = np.random.default_rng(config.seed)
    state = TrainState.fresh(code)
    if snapshot_hook is not None:
        snapshot_hook(0, state.params.copy())

    for epoch in range(1, config.epochs + 1):
        batch = make_batch(code, list(config.snr_list), config.per_snr, rng,
                           es_mode=config.es_mode)
        perms = reservoir.sample_chain(config.decoder.i_permutations)
        try:
            breakdown, grad = loss_and_gradient(
                code, state.params, config.decoder, batch.llrs, batch.targets,
                config.lam, perms)
        except NumericalError as err:
            raise NumericalError(err.bare_message, epoch=epoch,
                                 weight_ids=err.weight_ids) from None
        if not np.isfinite(breakdown.total):
            state.diverged = True
            break
        state.history.append(HistoryRow(
            epoch=epoch - 1,
            breakdown=breakdown,
            val_ber=_validation_ber(code, state.params, config, val,
                                    val_perms),
        ))
        rmsprop_step(state, grad, config)
        state.epoch = epoch
        if snapshot_hook is not None:
            snapshot_hook(epoch, state.params.copy())

    if not state.diverged:
        batch = make_batch(code, list(config.snr_list), config.per_snr, rng,
                           es_mode=config.es_mode)
        perms = reservoir.sample_chain(config.decoder.i_permutations)
        breakdown, _ = loss_and_gradient(
            code, state.params, config.decoder, batch.llrs, batch.targets,
            config.lam, perms)
        state.history.append(HistoryRow(
            epoch=state.epoch,
            breakdown=breakdown,
            val_ber=_validation_ber(code, state.params, config, val,
                                    val_perms),
        ))
    return state


def write_learning_curve_csv(history: list[HistoryRow],
                             path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "total_loss", "l1_sum", "l2_sum", "l3", "val_ber"])
        for row in history:
            b = row.breakdown
            writer.writerow([
                row.epoch,
                repr(b.total),
                repr(float(b.l1_per_block.sum())),
                repr(float(b.l2_per_block_iter.sum())),
                repr(b.l3),
                repr(row.val_ber),
            ])
