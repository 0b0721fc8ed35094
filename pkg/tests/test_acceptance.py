"""End-to-end acceptance: one test per criterion, in criterion order.

Heavy artifacts (the regularized/unregularized training twins on the
(31,16) code and the small trained (15,11) decoder) are session fixtures
shared across criteria. The (31,16) performance criteria run on a reduced
parity basis shipped in data/ — same code, same codebook, same ML decoder,
but a Tanner graph fit for message passing (no degree-1 columns, far fewer
4-cycles) as produced by tools/reduce_h.py.
"""

import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest

from permbp.autgroup import PermutationReservoir, identity
from permbp.baselines import bp_decode, ml_decode_exhaustive, osd_decode
from permbp.bench import StopRule, chunk_words_and_llrs, run_sweep, \
    wilson_interval
from permbp.channel import bpsk, hard_decision, llr_from_observation, \
    make_batch, noise_sigma, uncoded_ber
from permbp.codes import build_bch_code, load_parity_matrix, syndrome
from permbp.decoder import DecoderConfig, DecoderParams, bp_config, decode, \
    run_blocks
from permbp.hessian import hessian, probe_run, spectrum
from permbp.training import TrainConfig, loss, loss_and_gradient, train

DATA = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture(scope="session")
def code15():
    return build_bch_code(4, 1)


@pytest.fixture(scope="session")
def code31():
    return build_bch_code(5, 3)


@pytest.fixture(scope="session")
def code31r():
    return load_parity_matrix(DATA / "bch_31_16_reduced.alist",
                              name="BCH(31,16)", bch_m=5)


@pytest.fixture(scope="session")
def code63():
    return build_bch_code(6, 3)


@pytest.fixture(scope="session")
def trained15(code15):
    """A small trained (15,11) decoder: J=2 blocks of I=2 iterations."""
    config = TrainConfig(
        decoder=DecoderConfig(i_permutations=2, i_bp=2),
        epochs=200, lam=100.0, grad_clip=0.1, per_snr=20,
        learning_rate=2e-3, val_per_snr=100, seed=0)
    snapshots = {}
    state = train(code15, config, perms_seed=0,
                  snapshot_hook=lambda e, p: snapshots.__setitem__(e, p))
    best = min(state.history, key=lambda row: (row.val_ber, row.epoch))
    return snapshots[best.epoch]


@pytest.fixture(scope="session")
def probe31(code31r):
    """Matched-seed lambda=0 / lambda=100 training twins on BCH(31,16).

    This is the one expensive fixture (several minutes): both criteria 5
    and 7 draw on it. The lambda=100 twin is the trained decoder of
    criterion 5 (weights picked at the best validation epoch); the pair of
    loss curves and Hessian probes is criterion 7's raw material.
    """
    base = TrainConfig(
        decoder=DecoderConfig(i_permutations=10, i_bp=2),
        epochs=800, lam=0.0, grad_clip=0.1, per_snr=20,
        learning_rate=2e-3, val_per_snr=150, seed=0)
    with_l2 = dataclasses.replace(base, lam=100.0)
    return probe_run(code31r, base, with_l2, checkpoints=[0], perms_seed=0)


@pytest.fixture(scope="session")
def trained31(probe31):
    """Criterion-5 weights: the lambda=100 twin at its best validation
    epoch."""
    best = min(probe31.with_l2.curve,
               key=lambda row: (row["val_ber"], row["epoch"]))
    return probe31.with_l2.snapshots[best["epoch"]]


def _fer_crossing(points, target=1e-3):
    """SNR where a log-linear FER curve crosses ``target``; None if the
    grid does not bracket it."""
    for (s1, f1), (s2, f2) in zip(points, points[1:]):
        if f1 >= target >= f2 and f2 > 0:
            return s1 + (s2 - s1) * (math.log(f1) - math.log(target)) \
                / (math.log(f1) - math.log(f2))
    return None


# ---------------------------------------------------------------------------
# 1. unit-weight equivalence with classical sum-product


def test_criterion_1_bp_equivalence(code15, code31):
    config = DecoderConfig(i_permutations=1, i_bp=6)
    worst = 0.0
    for code, seed in ((code15, 1), (code31, 2)):
        params = DecoderParams.unit(code)
        g = code.graph
        rng = np.random.default_rng(seed)
        for _ in range(100):
            llr = rng.normal(0.0, 4.0, size=code.n)
            ref = bp_decode(code, llr, iterations=6)
            run = run_blocks(code, params, config, llr, [identity(code.n)],
                             record=True)
            block = run.trace.blocks[0]
            for i, it in enumerate(block.iters):
                for e in range(g.edge_count):
                    v, c = int(g.edge_v[e]), int(g.edge_c[e])
                    dv = abs(it.xv[0, e] - ref.xv[i][(v, c)])
                    dc = abs(it.xc[0, e] - ref.xc[i][(c, v)])
                    worst = max(worst, dv, dc)
                worst = max(worst, float(np.max(np.abs(it.o[0]
                                                       - ref.marginals[i]))))
    assert worst < 1e-9
    print(f"CRITERION 1: PASS - max message deviation {worst:.3e} < 1e-9 "
          f"over 2 codes x 100 LLR vectors x 6 iterations")


# ---------------------------------------------------------------------------
# 2. analytic gradient vs central finite differences


def test_criterion_2_gradient_vs_finite_differences(code15):
    config = DecoderConfig(i_permutations=2, i_bp=2)
    e_count = code15.graph.edge_count
    checked = 0
    worst = 0.0
    for seed, lam in ((11, 0.0), (12, 3.7)):
        rng = np.random.default_rng(seed)
        llrs = rng.normal(0.0, 2.0, size=(8, code15.n))
        targets = np.zeros_like(llrs, dtype=np.uint8)
        perms = [PermutationReservoir.for_code(code15, 20, 60, seed=rng)
                 .sample_chain(1)[0], identity(code15.n)]
        w0 = rng.uniform(0.6, 1.4, size=e_count)
        _, analytic = loss_and_gradient(
            code15, DecoderParams(w0), config, llrs, targets, lam, perms)
        for a in range(e_count):
            fd = []
            for sign in (+1.0, -1.0):
                w = w0.copy()
                w[a] += sign * 1e-4
                run = run_blocks(code15, DecoderParams(w), config, llrs,
                                 perms, record=True)
                fd.append(loss(run.trace, targets, DecoderParams(w),
                               lam).total)
            fd_grad = (fd[0] - fd[1]) / 2e-4
            rel = abs(analytic[a] - fd_grad) \
                / max(abs(analytic[a]), abs(fd_grad), 1e-10)
            worst = max(worst, rel)
            checked += 1
    assert checked >= 50
    assert worst < 1e-4
    print(f"CRITERION 2: PASS - worst relative error {worst:.3e} < 1e-4 "
          f"on {checked} weights")


# ---------------------------------------------------------------------------
# 3. automorphism closure under product-replacement sampling


def test_criterion_3_automorphism_closure(code15, code63):
    for code, seed in ((code15, 5), (code63, 6)):
        rng = np.random.default_rng(seed)
        msgs = rng.integers(0, 2, size=(100, code.k), dtype=np.uint8)
        words = (msgs @ code.generator) % 2
        assert not syndrome(code, words).any()
        reservoir = PermutationReservoir.for_code(code, 20, 60, seed=rng)
        for _ in range(1000):
            perm = reservoir.sample_chain(1)[0]
            assert not syndrome(code, perm.apply(words)).any()
    print("CRITERION 3: PASS - 1000 sampled permutations per code keep "
          "100 random codewords at zero syndrome on BCH(15,11) and "
          "BCH(63,45)")


# ---------------------------------------------------------------------------
# 4. exhaustive ML dominates every other decoder on identical noise


def test_criterion_4_paired_ml_dominance(code15, trained15):
    grid = [3.0, 4.0, 5.0, 6.0]
    frames = 100_000
    others = ["bp-10", "mrrd-3-5-2", "osd-2", "perm-rnn-1-2-2"]
    res = run_sweep(["ml"] + others, code15, grid,
                    StopRule(min_frame_errors=10**9, max_frames=frames),
                    seed=404, weights=trained15, chunk_frames=5000)
    lines = []
    for snr in grid:
        ml = [r for r in res.rows
              if r.decoder == "ml" and r.snr_db == snr][0]
        assert ml.frames == frames
        for label in others:
            other = [r for r in res.rows
                     if r.decoder == label and r.snr_db == snr][0]
            assert other.frames == frames
            assert ml.frame_errors <= other.frame_errors, (snr, label)
        lines.append(f"{snr:.0f}dB ml={ml.frame_errors}")
    print(f"CRITERION 4: PASS - ML frame errors minimal at every point "
          f"({', '.join(lines)}; {frames} identical frames per decoder "
          f"per point)")


# ---------------------------------------------------------------------------
# 5. trained perm-decoder near ML on BCH(31,16)


def test_criterion_5_trained_decoder_near_ml(code31r, probe31, trained31):
    config = probe31.with_l2.config
    # the mandated training setting
    assert config.decoder.i_permutations == 10
    assert config.decoder.i_bp == 2
    assert config.lam == 100.0 and config.grad_clip == 0.1

    # (a) FER gap to exhaustive ML at FER = 1e-3
    grid = [3.5, 4.0, 4.5, 5.0]
    res = run_sweep(["ml", "mrrd-rnn-5-10-2"], code31r, grid,
                    StopRule(min_frame_errors=100, max_frames=100_000),
                    seed=2026, weights=trained31, chunk_frames=5000)
    curves = {}
    for r in res.rows:
        curves.setdefault(r.decoder, []).append((r.snr_db, r.fer))
    ml_cross = _fer_crossing(curves["ml"])
    tr_cross = _fer_crossing(curves["mrrd-rnn-5-10-2"])
    assert ml_cross is not None and tr_cross is not None
    gap = tr_cross - ml_cross
    assert gap <= 0.75

    # (b) trained decoder BER never worse than unit-weight BP (same total
    # iteration count) at any training SNR, on shared noise, within 2 sigma
    unit = DecoderParams.unit(code31r)
    frames, chunks = 4000, 3
    ber_lines = []
    for snr in config.snr_list:
        t_err = b_err = 0
        for chunk in range(chunks):
            words, llrs = chunk_words_and_llrs(code31r, snr, 77, 0, chunk,
                                               frames)
            rng = np.random.default_rng(
                np.random.SeedSequence([99, int(snr * 10), chunk]))
            reservoir = PermutationReservoir.for_code(code31r, 20, 60,
                                                      seed=rng)
            perms = reservoir.sample_chain(9) + [identity(code31r.n)]
            hard_t = decode(code31r, trained31, config.decoder, llrs,
                            perms).hard
            hard_b = decode(code31r, unit, bp_config(20), llrs,
                            [identity(code31r.n)]).hard
            t_err += int((hard_t != words).sum())
            b_err += int((hard_b != words).sum())
        bits = frames * chunks * code31r.n
        p = b_err / bits
        sigma = math.sqrt(max(p * (1.0 - p), 1e-12) / bits)
        assert t_err / bits <= p + 2.0 * sigma, (snr, t_err / bits, p)
        ber_lines.append(f"{snr:.0f}dB {t_err / bits:.2e}<={p:.2e}")
    print(f"CRITERION 5: PASS - FER=1e-3 gap to ML {gap:.3f} dB <= 0.75 "
          f"(ML at {ml_cross:.2f} dB, trained at {tr_cross:.2f} dB); "
          f"trained BER <= BP at all 8 training SNRs "
          f"({'; '.join(ber_lines[:3])}; ...)")


# ---------------------------------------------------------------------------
# 6. the L2 regularizer shifts the Hessian by exactly 2*lambda*I


def test_criterion_6_hessian_identity_shift_and_conditioning(code31r):
    rng = np.random.default_rng(271)
    e_count = code31r.graph.edge_count
    params = DecoderParams(rng.uniform(0.7, 1.3, size=e_count))
    batch = make_batch(code31r, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
                       5, rng)
    reservoir = PermutationReservoir.for_code(code31r, 20, 60, seed=rng)
    perms = reservoir.sample_chain(9) + [identity(code31r.n)]

    matrices = {}
    for lam in (0.0, 10.0, 100.0):
        config = TrainConfig(
            decoder=DecoderConfig(i_permutations=10, i_bp=2),
            epochs=1, lam=lam, grad_clip=0.1, per_snr=5, val_per_snr=1)
        matrices[lam] = hessian(code31r, params, batch, config, perms)

    shift = matrices[100.0] - matrices[0.0]
    target = 2.0 * 100.0 * np.eye(e_count)
    worst = float(np.max(np.abs(shift - target))) / 200.0
    assert worst < 1e-3

    conds = [spectrum(matrices[lam]).condition_number
             for lam in (0.0, 10.0, 100.0)]
    assert conds[0] > conds[1] > conds[2]
    print(f"CRITERION 6: PASS - H(100)-H(0) = 200*I within {worst:.2e} "
          f"relative per entry; condition numbers strictly decrease "
          f"{conds[0]:.3g} > {conds[1]:.3g} > {conds[2]:.3g}")


# ---------------------------------------------------------------------------
# 7. the regularizer accelerates training and convexifies the landscape


def _drop_epoch(run):
    losses = [row["loss"] for row in run.curve]
    target = losses[0] - 0.9 * (losses[0] - losses[-1])
    for row in run.curve:
        if row["loss"] <= target:
            return row["epoch"]
    return run.curve[-1]["epoch"]


def test_criterion_7_regularized_training_accelerates(probe31):
    drop_l2 = _drop_epoch(probe31.with_l2)
    drop_plain = _drop_epoch(probe31.no_l2)
    assert drop_l2 < drop_plain

    with_l2 = probe31.with_l2.spectrum_at(drop_l2)
    plain = probe31.no_l2.spectrum_at(drop_l2)
    assert with_l2.positive_ratio > plain.positive_ratio
    print(f"CRITERION 7: PASS - lambda=100 reaches 90% of its loss "
          f"reduction at epoch {drop_l2} vs {drop_plain} for lambda=0; "
          f"positive-eigenvalue ratio at epoch {drop_l2}: "
          f"{with_l2.positive_ratio:.3f} > {plain.positive_ratio:.3f}")


# ---------------------------------------------------------------------------
# 8. order-2 OSD is a faithful near-ML reference


def test_criterion_8_osd2_agrees_with_ml(code15):
    frames = 10_000
    words, llrs = chunk_words_and_llrs(code15, 4.0, 808, 0, 0, frames)
    ml = ml_decode_exhaustive(code15, llrs)
    osd = osd_decode(code15, llrs, 2)
    disagree = int((ml != osd).any(axis=1).sum())
    assert disagree < frames * 0.001
    print(f"CRITERION 8: PASS - OSD-2 disagrees with ML on {disagree} of "
          f"{frames} frames (< 10) at 4 dB")


# ---------------------------------------------------------------------------
# 9. channel calibration against the closed-form Gaussian tail


def test_criterion_9_uncoded_channel_calibration():
    bits = 1_000_000
    details = []
    for snr in (2.0, 4.0, 6.0):
        rng = np.random.default_rng(
            np.random.SeedSequence([4, int(snr)]))
        sigma = noise_sigma(snr, 1.0, es_mode=True)
        sent = np.zeros(bits, dtype=np.uint8)
        received = bpsk(sent) + sigma * rng.standard_normal(bits)
        errors = int(hard_decision(
            llr_from_observation(received, sigma)).sum())
        lo, hi = wilson_interval(errors, bits)
        expected = uncoded_ber(snr)
        assert lo <= expected <= hi, (snr, errors / bits, expected)
        details.append(f"{snr:.0f}dB {errors / bits:.3e}~{expected:.3e}")
    print(f"CRITERION 9: PASS - empirical uncoded BER inside the Wilson "
          f"95% CI of the Gaussian tail at {'; '.join(details)}")
