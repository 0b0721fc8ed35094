"""Finite-difference Hessian of the training loss, its spectrum, and the
two-run training probe that compares regularized vs unregularized descent.

The Hessian is central differences of the analytic gradient — the gradient
already exists and is itself verified against finite differences, and the
tied-weight count is small enough for dense eigensolves. Because the
regularizer enters the loss once as lambda * sum(w^2), its exact Hessian
contribution is 2*lambda*I; the probe's acceptance checks lean on that
shift being visible to machine precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from permbp.autgroup import PermutationElement, PermutationReservoir, identity
from permbp.channel import ChannelBatch, make_batch
from permbp.codes import CodeError, CodeSpec
from permbp.decoder import DecoderParams, decode, run_blocks
from permbp.training import (
    NumericalError,
    TrainConfig,
    TrainState,
    loss,
    loss_and_gradient,
    train,
    validation_setup,
)

__all__ = [
    "HESSIAN_MAX_PARAMS",
    "SpectrumReport",
    "hessian_fd",
    "hessian",
    "spectrum",
    "ProbeRun",
    "ProbeResult",
    "probe_run",
    "write_probe_csv",
]

HESSIAN_MAX_PARAMS = 2000


# ---------------------------------------------------------------------------
# Hessian assembly


def hessian_fd(grad_fn, w0: np.ndarray, *, step_scale: float = 1e-3,
               ) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of a gradient callable around ``w0``.

    Row a uses step h_a = step_scale * max(1, |w0_a|). Returns the
    symmetrized matrix (H + H^T)/2 and the raw pre-symmetrization matrix,
    whose asymmetry is itself a self-consistency diagnostic.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    p = w0.size
    raw = np.empty((p, p))
    for a in range(p):
        h = step_scale * max(1.0, abs(float(w0[a])))
        wp = w0.copy()
        wp[a] += h
        wm = w0.copy()
        wm[a] -= h
        raw[a, :] = (grad_fn(wp) - grad_fn(wm)) / (2.0 * h)
        if not np.all(np.isfinite(raw[a, :])):
            bad = [int(i) for i in np.flatnonzero(~np.isfinite(raw[a]))[:8]]
            raise NumericalError(
                f"non-finite Hessian entries in row {a}", weight_ids=bad)
    return 0.5 * (raw + raw.T), raw


def hessian(code: CodeSpec, params: DecoderParams, batch: ChannelBatch,
            config: TrainConfig, perms: list[PermutationElement],
            ) -> np.ndarray:
    """Symmetrized loss Hessian at ``params`` on a fixed batch and fixed
    permutations (so the differentiated function is deterministic)."""
    if params.weights.size > HESSIAN_MAX_PARAMS:
        raise CodeError(
            f"{params.weights.size} weights exceed the dense-eigensolve "
            f"budget of {HESSIAN_MAX_PARAMS}")

    def grad_at(w: np.ndarray) -> np.ndarray:
        _, g = loss_and_gradient(code, DecoderParams(w), config.decoder,
                                 batch.llrs, batch.targets, config.lam, perms)
        return g

    sym, _ = hessian_fd(grad_at, params.weights)
    return sym


# ---------------------------------------------------------------------------
# spectrum


@dataclass(eq=False)
class SpectrumReport:
    epoch: int
    eigenvalues: np.ndarray
    positive_ratio: float
    condition_number: float
    tol: float


def spectrum(h: np.ndarray, tol: float | None = None, *,
             epoch: int = -1) -> SpectrumReport:
    """Full symmetric eigendecomposition and the two probe scalars.

    ``tol`` defaults to 1e-8 * max|eigenvalue|; eigenvalues above it count
    as positive, and those below it in magnitude are excluded from the
    condition number (an all-tiny spectrum reports condition 1).
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise CodeError(f"Hessian must be square, got {h.shape}")
    if not np.allclose(h, h.T, atol=1e-12 * max(1.0, float(np.abs(h).max()))):
        raise CodeError("Hessian must be symmetric; symmetrize it first")
    eigs = np.linalg.eigvalsh(h)
    peak = float(np.abs(eigs).max()) if eigs.size else 0.0
    if tol is None:
        tol = 1e-8 * peak
    above = np.abs(eigs) > tol
    if peak == 0.0 or not above.any():
        condition = 1.0
    else:
        condition = peak / float(np.abs(eigs[above]).min())
    return SpectrumReport(
        epoch=epoch,
        eigenvalues=np.sort(eigs),
        positive_ratio=float(np.mean(eigs > tol)),
        condition_number=float(condition),
        tol=float(tol),
    )


# ---------------------------------------------------------------------------
# the two-run probe


@dataclass(eq=False)
class ProbeRun:
    """One trained run plus everything needed to interrogate it later."""

    code: CodeSpec
    config: TrainConfig
    state: TrainState
    snapshots: dict[int, DecoderParams]
    probe_batch: ChannelBatch
    probe_perms: list[PermutationElement]
    curve: list[dict] = field(default_factory=list)
    reports: list[SpectrumReport] = field(default_factory=list)

    def probe_loss(self, epoch: int) -> float:
        params = self.snapshots[epoch]
        run = run_blocks(self.code, params, self.config.decoder,
                         self.probe_batch.llrs, self.probe_perms, record=True)
        return loss(run.trace, self.probe_batch.targets, params,
                    self.config.lam).total

    def spectrum_at(self, epoch: int) -> SpectrumReport:
        h = hessian(self.code, self.snapshots[epoch], self.probe_batch,
                    self.config, self.probe_perms)
        report = spectrum(h, epoch=epoch)
        return report


@dataclass(eq=False)
class ProbeResult:
    no_l2: ProbeRun
    with_l2: ProbeRun


def _probe_fixtures(code: CodeSpec, config: TrainConfig, perms_seed: int,
                    ) -> tuple[ChannelBatch, list[PermutationElement]]:
    """The frozen batch and permutations both runs are probed on."""
    batch = make_batch(code, list(config.snr_list), config.per_snr,
                       np.random.default_rng(
                           np.random.SeedSequence([config.seed, 271828])),
                       es_mode=config.es_mode)
    reservoir = PermutationReservoir.for_code(
        code, config.n_pr, config.k_pr,
        seed=np.random.default_rng(np.random.SeedSequence([perms_seed, 314159])))
    perms = reservoir.sample_chain(config.decoder.i_permutations - 1) \
        + [identity(code.n)]
    return batch, perms


def _run_one(code: CodeSpec, config: TrainConfig, perms_seed: int,
             checkpoints: list[int]) -> ProbeRun:
    snapshots: dict[int, DecoderParams] = {}
    state = train(code, config, perms_seed,
                  snapshot_hook=lambda e, p: snapshots.__setitem__(e, p))
    batch, perms = _probe_fixtures(code, config, perms_seed)
    run = ProbeRun(code=code, config=config, state=state,
                   snapshots=snapshots, probe_batch=batch, probe_perms=perms)
    val, val_perms = validation_setup(code, config, perms_seed)
    marks = {e for e in checkpoints if e in snapshots}
    for epoch in sorted(snapshots):
        params = snapshots[epoch]
        result = decode(code, params, config.decoder, val.llrs, val_perms,
                        stop_on_zero=True)
        row = {
            "epoch": epoch,
            "loss": run.probe_loss(epoch),
            "val_ber": float(np.mean(result.hard != val.targets)),
            "positive_ratio": None,
            "condition_number": None,
        }
        if epoch in marks:
            report = run.spectrum_at(epoch)
            run.reports.append(report)
            row["positive_ratio"] = report.positive_ratio
            row["condition_number"] = report.condition_number
        run.curve.append(row)
    return run


def probe_run(code: CodeSpec, config_no_l2: TrainConfig,
              config_with_l2: TrainConfig,
              checkpoints: list[int] | None = None, *,
              perms_seed: int = 0) -> ProbeResult:
    """Train the lambda = 0 and lambda > 0 twins and probe their loss
    landscapes.

    The two configs must be identical except for lambda. Each run's curve
    holds, for every epoch, the loss of that epoch's parameters on a frozen
    probe batch shared by both runs, plus validation BER; Hessian spectra
    are computed at the checkpoint epochs (default: every epoch up to 60).
    """
    if config_no_l2.lam != 0.0:
        raise CodeError("the first config must have lambda = 0")
    if config_with_l2.lam <= 0.0:
        raise CodeError("the second config must have lambda > 0")
    fields_a = {k: v for k, v in vars(config_no_l2).items() if k != "lam"}
    fields_b = {k: v for k, v in vars(config_with_l2).items() if k != "lam"}
    if fields_a != fields_b:
        diff = sorted(k for k in fields_a if fields_a[k] != fields_b[k])
        raise CodeError(f"probe configs must differ only in lambda; "
                        f"they also differ in {diff}")
    if checkpoints is None:
        checkpoints = list(range(0, min(60, config_no_l2.epochs) + 1))
    return ProbeResult(
        no_l2=_run_one(code, config_no_l2, perms_seed, checkpoints),
        with_l2=_run_one(code, config_with_l2, perms_seed, checkpoints),
    )


def write_probe_csv(run: ProbeRun, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "loss", "val_ber", "positive_ratio", "condition_number"])
        for row in run.curve:
            writer.writerow([
                row["epoch"],
                repr(row["loss"]),
                repr(row["val_ber"]),
                "" if row["positive_ratio"] is None
                else repr(row["positive_ratio"]),
                "" if row["condition_number"] is None
                else repr(row["condition_number"]),
            ])
