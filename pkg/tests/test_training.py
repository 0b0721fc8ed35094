"""Training engine tests.

The finite-difference oracle goes through the trace-based loss() path, a
separate implementation from the chunked backward pass it checks.
"""

import math

import numpy as np
import pytest

from permbp.autgroup import PermutationReservoir
from permbp.channel import make_batch
from permbp.codes import CodeError, build_bch_code
from permbp.decoder import DecoderConfig, DecoderParams, decode, run_blocks
from permbp.training import (
    HistoryRow,
    LossBreakdown,
    NumericalError,
    TrainConfig,
    TrainState,
    gradient,
    loss,
    loss_and_gradient,
    rmsprop_step,
    train,
    validation_setup,
    write_learning_curve_csv,
)


def _fd_gradient(code, w0, config, llrs, targets, lam, perms, indices, h=1e-4):
    out = {}
    for a in indices:
        shifted = []
        for sign in (+1.0, -1.0):
            w = w0.copy()
            w[a] += sign * h
            run = run_blocks(code, DecoderParams(w), config, llrs, perms,
                             record=True)
            shifted.append(loss(run.trace, targets, DecoderParams(w), lam).total)
        out[a] = (shifted[0] - shifted[1]) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# loss values


def test_loss_hand_values_zero_llr():
    # zero llr freezes every message at 0, so every sigmoid is 1/2 and each
    # cross-entropy term is ln 2; unit weights make l3 = E
    code = build_bch_code(4, 1)
    config = DecoderConfig(i_permutations=2, i_bp=2)
    params = DecoderParams.unit(code)
    res = PermutationReservoir.for_code(code, 10, 50, seed=1)
    run = run_blocks(code, params, config, np.zeros((3, code.n)),
                     res.sample_chain(2), record=True)
    bd = loss(run.trace, np.zeros(code.n), params, lam=100.0)
    assert bd.l1_per_block.shape == (2,)
    assert bd.l2_per_block_iter.shape == (2, 2)
    assert np.allclose(bd.l1_per_block, math.log(2.0), atol=1e-9)
    assert np.allclose(bd.l2_per_block_iter, math.log(2.0), atol=1e-9)
    E = code.graph.edge_count
    assert bd.l3 == pytest.approx(E)
    assert bd.lam * bd.l3 == pytest.approx(100.0 * E)
    assert bd.total == pytest.approx(6 * math.log(2.0) + 100.0 * E, rel=1e-9)


def test_confident_correct_outputs_drive_l1_to_zero():
    code = build_bch_code(4, 1)
    params = DecoderParams.unit(code)
    run = run_blocks(code, params, DecoderConfig(i_permutations=1, i_bp=2),
                     np.full((1, code.n), -14.0), [  # strongly the zero word
                         PermutationReservoir.for_code(code, 10, 50, 2).sample()],
                     record=True)
    bd = loss(run.trace, np.zeros(code.n), params, lam=0.0)
    assert np.all(bd.l1_per_block < 1e-5)
    assert bd.total < 1e-3


def test_loss_recomposition_and_path_agreement():
    code = build_bch_code(4, 1)
    config = DecoderConfig(i_permutations=3, i_bp=2)
    rng = np.random.default_rng(11)
    batch = make_batch(code, [1, 3, 5], 40, rng)  # > one gradient chunk
    res = PermutationReservoir.for_code(code, 10, 50, seed=3)
    perms = res.sample_chain(3)
    params = DecoderParams(rng.uniform(0.5, 1.5, code.graph.edge_count))

    via_grad, _ = loss_and_gradient(code, params, config, batch.llrs,
                                    batch.targets, 2.5, perms)
    run = run_blocks(code, params, config, batch.llrs, perms, record=True)
    via_trace = loss(run.trace, batch.targets, params, 2.5)
    for bd in (via_grad, via_trace):
        assert abs(bd.total - bd.recomposed()) <= 1e-12 * abs(bd.total)
    assert via_grad.total == pytest.approx(via_trace.total, rel=1e-12)
    assert np.allclose(via_grad.l1_per_block, via_trace.l1_per_block,
                       rtol=1e-12)
    assert np.allclose(via_grad.l2_per_block_iter,
                       via_trace.l2_per_block_iter, rtol=1e-12)


def test_loss_validates_target_shape():
    code = build_bch_code(4, 1)
    params = DecoderParams.unit(code)
    run = run_blocks(code, params, DecoderConfig(i_permutations=1, i_bp=1),
                     np.zeros((2, code.n)),
                     [PermutationReservoir.for_code(code, 10, 50, 2).sample()],
                     record=True)
    with pytest.raises(CodeError):
        loss(run.trace, np.zeros((3, code.n)), params, 0.0)


# ---------------------------------------------------------------------------
# gradient vs finite differences (the oracle)


def test_gradient_matches_finite_differences_across_batches():
    # >= 50 weights across >= 5 random batches on BCH(15,11), depth 2x2
    code = build_bch_code(4, 1)
    config = DecoderConfig(i_permutations=2, i_bp=2)
    E = code.graph.edge_count
    rng = np.random.default_rng(2024)
    res = PermutationReservoir.for_code(code, 10, 50, seed=8)
    checked = 0
    for b in range(5):
        batch = make_batch(code, [1, 3, 5, 7], 3, rng)
        perms = res.sample_chain(2)
        w0 = rng.uniform(0.5, 1.5, E)
        lam = [0.0, 1.0, 3.7, 0.0, 50.0][b]
        _, g = loss_and_gradient(code, DecoderParams(w0), config, batch.llrs,
                                 batch.targets, lam, perms)
        indices = rng.choice(E, size=10, replace=False)
        fd = _fd_gradient(code, w0, config, batch.llrs, batch.targets, lam,
                          perms, indices)
        for a, fd_val in fd.items():
            rel = abs(fd_val - g[a]) / max(abs(fd_val), abs(g[a]), 1e-8)
            assert rel < 1e-4, f"weight {a}: fd={fd_val} analytic={g[a]}"
            checked += 1
    assert checked >= 50


def test_gradient_of_regularizer_alone_is_2_lambda_w():
    code = build_bch_code(4, 1)
    config = DecoderConfig(i_permutations=2, i_bp=2)
    rng = np.random.default_rng(31)
    batch = make_batch(code, [2, 4], 4, rng)
    perms = PermutationReservoir.for_code(code, 10, 50, 4).sample_chain(2)
    w0 = rng.uniform(0.5, 1.5, code.graph.edge_count)
    _, g0 = loss_and_gradient(code, DecoderParams(w0), config, batch.llrs,
                              batch.targets, 0.0, perms)
    _, g100 = loss_and_gradient(code, DecoderParams(w0), config, batch.llrs,
                                batch.targets, 100.0, perms)
    assert np.allclose(g100 - g0, 200.0 * w0, rtol=1e-12, atol=1e-12)


def test_saturated_clamps_pass_zero_gradient():
    # with a tiny clamp and huge llr, every pre-clamp argument saturates;
    # the surviving path through the marginal also saturates its sigmoid,
    # so the whole gradient collapses to (numerically) nothing
    code = build_bch_code(4, 1)
    config = DecoderConfig(i_permutations=1, i_bp=1, llr_clip=2.0)
    rng = np.random.default_rng(41)
    llrs = 50.0 * np.sign(rng.normal(size=(4, code.n)))
    params = DecoderParams.unit(code)
    perms = [PermutationReservoir.for_code(code, 10, 50, 5).sample()]
    run = run_blocks(code, params, config, llrs, perms, record=True)
    assert not run.trace.blocks[0].iters[0].mask_pre.any()
    _, g = loss_and_gradient(code, params, config, llrs,
                             np.zeros(code.n), 0.0, perms)
    assert np.max(np.abs(g)) < 1e-18


def test_gradient_contract_wrapper():
    code = build_bch_code(4, 1)
    cfg = TrainConfig(decoder=DecoderConfig(i_permutations=2, i_bp=2),
                      epochs=1, snr_list=(2.0, 4.0), per_snr=3, lam=1.5)
    rng = np.random.default_rng(77)
    batch = make_batch(code, list(cfg.snr_list), cfg.per_snr, rng)
    perms = PermutationReservoir.for_code(code, 10, 50, 6).sample_chain(2)
    params = DecoderParams.unit(code)
    g = gradient(code, batch, params, cfg, perms)
    _, expect = loss_and_gradient(code, params, cfg.decoder, batch.llrs,
                                  batch.targets, cfg.lam, perms)
    assert np.array_equal(g, expect)


# ---------------------------------------------------------------------------
# optimizer


def test_rmsprop_zero_gradient_is_a_fixed_point():
    code = build_bch_code(4, 1)
    state = TrainState.fresh(code)
    state.rms_acc = np.full_like(state.params.weights, 0.5)
    cfg = TrainConfig(decoder=DecoderConfig(i_permutations=1, i_bp=1),
                      epochs=1)
    before = state.params.weights.copy()
    rmsprop_step(state, np.zeros_like(before), cfg)
    assert np.array_equal(state.params.weights, before)
    assert np.allclose(state.rms_acc, 0.5 * cfg.rms_decay)


def test_rmsprop_global_norm_clip():
    code = build_bch_code(4, 1)
    E = code.graph.edge_count
    state = TrainState.fresh(code)
    cfg = TrainConfig(decoder=DecoderConfig(i_permutations=1, i_bp=1),
                      epochs=1, grad_clip=0.1, learning_rate=1e-3)
    g = np.zeros(E)
    g[0] = 1.0  # unit norm; must be scaled to 0.1
    rmsprop_step(state, g, cfg)
    eff = 0.1
    acc = (1 - cfg.rms_decay) * eff ** 2
    expect = 1.0 - cfg.learning_rate * eff / np.sqrt(acc + cfg.rms_eps)
    assert state.params.weights[0] == pytest.approx(expect, rel=1e-12)
    assert np.array_equal(state.params.weights[1:], np.ones(E - 1))


def test_rmsprop_per_element_clip_flag():
    code = build_bch_code(4, 1)
    E = code.graph.edge_count
    state = TrainState.fresh(code)
    cfg = TrainConfig(decoder=DecoderConfig(i_permutations=1, i_bp=1),
                      epochs=1, grad_clip=0.1, grad_clip_per_element=True)
    g = np.zeros(E)
    g[0], g[1] = 5.0, -0.01
    rmsprop_step(state, g, cfg)
    moved = 1.0 - state.params.weights
    # element 0 clips to 0.1, element 1 passes through untouched
    assert moved[0] > 0
    assert moved[1] < 0
    ratio = abs(moved[0]) / abs(moved[1])
    acc0 = (1 - cfg.rms_decay) * 0.1 ** 2
    acc1 = (1 - cfg.rms_decay) * 0.01 ** 2
    expect_ratio = (0.1 / np.sqrt(acc0 + cfg.rms_eps)) \
        / (0.01 / np.sqrt(acc1 + cfg.rms_eps))
    assert ratio == pytest.approx(expect_ratio, rel=1e-9)


def test_rmsprop_projection_never_goes_negative():
    code = build_bch_code(4, 1)
    state = TrainState.fresh(code)
    state.params = DecoderParams(np.full(code.graph.edge_count, 0.05))
    cfg = TrainConfig(decoder=DecoderConfig(i_permutations=1, i_bp=1),
                      epochs=1, learning_rate=10.0, grad_clip=1e9)
    g = np.ones(code.graph.edge_count)
    rmsprop_step(state, g, cfg)
    assert np.all(state.params.weights >= 0.0)
    assert np.all(state.params.weights == 0.0)


# ---------------------------------------------------------------------------
# the training loop


def _tiny_config(**overrides):
    base = dict(
        decoder=DecoderConfig(i_permutations=2, i_bp=2),
        epochs=3,
        snr_list=(2.0, 5.0),
        per_snr=4,
        val_per_snr=50,
        seed=10,
    )
    base.update(overrides)
    return TrainConfig(**base)


def test_train_history_shape_and_epoch0_baseline():
    code = build_bch_code(4, 1)
    cfg = _tiny_config()
    state = train(code, cfg, perms_seed=3)
    assert [row.epoch for row in state.history] == [0, 1, 2, 3]
    assert not state.diverged
    assert state.epoch == 3
    # row 0 is the unit-weight (plain-BP-equivalent) baseline on exactly
    # the validation setup the trainer used
    val, val_perms = validation_setup(code, cfg, perms_seed=3)
    unit = decode(code, DecoderParams.unit(code), cfg.decoder, val.llrs,
                  val_perms, stop_on_zero=True)
    expect = float(np.mean(unit.hard != val.targets))
    assert state.history[0].val_ber == expect


def test_train_is_bit_deterministic():
    code = build_bch_code(4, 1)
    a = train(code, _tiny_config(), perms_seed=3)
    b = train(code, _tiny_config(), perms_seed=3)
    assert np.array_equal(a.params.weights, b.params.weights)
    for ra, rb in zip(a.history, b.history):
        assert ra.breakdown.total == rb.breakdown.total
        assert ra.val_ber == rb.val_ber
    c = train(code, _tiny_config(seed=11), perms_seed=3)
    assert not np.array_equal(a.params.weights, c.params.weights)


def test_train_keeps_weights_nonnegative_every_step():
    code = build_bch_code(4, 1)
    seen = []
    train(code, _tiny_config(epochs=5, lam=100.0), perms_seed=1,
          snapshot_hook=lambda e, p: seen.append((e, p.weights.copy())))
    assert [e for e, _ in seen] == [0, 1, 2, 3, 4, 5]
    for _, w in seen:
        assert np.all(w >= 0.0)
    assert np.array_equal(seen[0][1], np.ones(code.graph.edge_count))


def test_train_divergence_keeps_last_good_params():
    code = build_bch_code(4, 1)
    # lambda at the float ceiling makes lam * l3 overflow to inf on the
    # very first loss evaluation
    state = train(code, _tiny_config(lam=1e308), perms_seed=0)
    assert state.diverged
    assert state.epoch == 0
    assert state.history == []
    assert np.array_equal(state.params.weights,
                          np.ones(code.graph.edge_count))


def test_learning_curve_csv_round_trip(tmp_path):
    rows = [
        HistoryRow(epoch=0,
                   breakdown=LossBreakdown(np.array([0.5, 0.25]),
                                           np.array([[0.125]]), 2.0, 10.0,
                                           0.5 + 0.25 + 0.125 + 20.0),
                   val_ber=0.125),
    ]
    path = tmp_path / "curve.csv"
    write_learning_curve_csv(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,total_loss,l1_sum,l2_sum,l3,val_ber"
    fields = lines[1].split(",")
    assert fields[0] == "0"
    assert float(fields[1]) == 20.875
    assert float(fields[2]) == 0.75
    assert float(fields[3]) == 0.125
    assert float(fields[4]) == 2.0
    assert float(fields[5]) == 0.125


def test_config_validation():
    dec = DecoderConfig(i_permutations=1, i_bp=1)
    with pytest.raises(CodeError):
        TrainConfig(decoder=dec, epochs=0)
    with pytest.raises(CodeError):
        TrainConfig(decoder=dec, epochs=1, learning_rate=0.0)
    with pytest.raises(CodeError):
        TrainConfig(decoder=dec, epochs=1, grad_clip=-1.0)
    with pytest.raises(CodeError):
        TrainConfig(decoder=dec, epochs=1, lam=-0.5)
    with pytest.raises(CodeError):
        TrainConfig(decoder=dec, epochs=1, rms_decay=1.0)


def test_numerical_error_reports_epoch_and_weights():
    err = NumericalError("non-finite gradient entries", epoch=7,
                         weight_ids=[3, 9])
    assert "epoch 7" in str(err)
    assert "3" in str(err) and "9" in str(err)
    assert err.epoch == 7 and err.weight_ids == [3, 9]
