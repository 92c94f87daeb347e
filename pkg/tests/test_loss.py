import math

import numpy as np
import pytest

from sactc import oracle
from sactc.loss import (
    DegenerateRiskError,
    brctc_loss,
    combined_loss,
    ctc_loss,
    grouped_posteriors,
    loss_for_mode,
    sactc_loss,
    softmax_log,
)
from sactc.serialize import RiskSpec, UnsupportedSpeakerCountError, serialize_sot
from sactc.toylab import occupancy_stats
from sactc.verify import grad_relative_error, random_instance

LOG2 = math.log(2.0)


def test_ctc_two_frame_value():
    res = ctc_loss(np.zeros((2, 2)), [1])
    assert res.loss == pytest.approx(0.2876820724517809, abs=1e-15)  # -log 0.75


def test_grouped_two_frame_value():
    grouped = grouped_posteriors(np.log(np.full((2, 2), 0.5)), [1])
    np.testing.assert_allclose(grouped.g, [[0.25, 0.5]], atol=1e-15)
    assert math.exp(grouped.log_likelihood) == pytest.approx(0.75)


def test_tiny_instance_frozen_values(tiny):
    # frozen from brute-force path enumeration
    logits, label = tiny
    assert ctc_loss(logits, label.tokens).loss == pytest.approx(4.441478525599747, abs=1e-12)
    frozen = {0.0: 5.134625706159692, 5.0: 4.647027419192234, 15.0: 4.464299345600027}
    for lam, value in frozen.items():
        assert sactc_loss(logits, label, RiskSpec(lam=lam)).loss == pytest.approx(value, abs=1e-12)


def test_single_alignment_by_hand():
    # T = U = 3 leaves exactly one path, a / sc / b, so every g_u is a single spike.
    logits = np.random.default_rng(7).normal(size=(3, 4))
    label = serialize_sot([[1], [2]], sc_id=3)
    log_post = softmax_log(logits)
    log_p = log_post[0, 1] + log_post[1, 3] + log_post[2, 2]
    lam, b = 15.0, 0.5
    w_a = 1 / (1 + math.exp(lam * (1 / 3 - b)))
    w_b = 1 / (1 + math.exp(-lam * (1.0 - b)))
    expected = -log_p - 0.5 * (math.log(w_a) + math.log(w_b))
    assert sactc_loss(logits, label, RiskSpec(lam=lam)).loss == pytest.approx(expected, abs=1e-12)


def test_degeneration_identity(rng):
    for _ in range(20):
        logits, label = random_instance(rng, 10, 6, 6)
        diff = (sactc_loss(logits, label, RiskSpec(lam=0.0)).loss
                - ctc_loss(logits, label.tokens).loss)
        assert diff == pytest.approx(LOG2, abs=1e-9)


def test_shift_invariance(rng):
    logits, label = random_instance(rng, 8, 4, 5)
    shifted = logits + rng.normal(size=(logits.shape[0], 1)) * 50
    for mode in ("ctc", "sactc"):
        a = loss_for_mode(logits, label, mode, RiskSpec()).loss
        b = loss_for_mode(shifted, label, mode, RiskSpec()).loss
        assert a == pytest.approx(b, abs=1e-9)


def test_losses_nonnegative(rng):
    for _ in range(30):
        logits, label = random_instance(rng, 8, 4, 5, logit_scale=6.0)
        assert ctc_loss(logits, label.tokens).loss >= 0
        assert sactc_loss(logits, label, RiskSpec(lam=20.0)).loss >= 0


def test_gradient_rows_sum_to_zero(rng):
    logits, label = random_instance(rng, 8, 4, 5)
    for res in (ctc_loss(logits, label.tokens), sactc_loss(logits, label)):
        np.testing.assert_allclose(res.grad.sum(axis=1), 0.0, atol=1e-12)


def test_sactc_gradient_matches_finite_differences(tiny):
    logits, label = tiny
    spec = RiskSpec(lam=15.0)
    res = sactc_loss(logits, label, spec)
    fd = oracle.finite_diff_grad(
        lambda z: sactc_loss(z, label, spec, compute_grad=False).loss, logits)
    assert grad_relative_error(res.grad, fd) < 1e-7


def test_global_normalization_matches_oracle(tiny):
    logits, label = tiny
    spec = RiskSpec(lam=5.0, normalize="global", include_sc=True, frame_center=True)
    ref = oracle.brute_force_sactc(softmax_log(logits), label, spec)
    assert sactc_loss(logits, label, spec).loss == pytest.approx(ref, abs=1e-12)


def test_per_token_losses_skip_sc(tiny):
    logits, label = tiny
    res = sactc_loss(logits, label, RiskSpec(lam=15.0))
    assert np.isnan(res.per_token_losses[1])
    assert res.loss == pytest.approx(0.5 * np.nansum(res.per_token_losses), abs=1e-12)


def test_infeasible_reports_status_not_exception():
    label = serialize_sot([[1, 1], [2]], sc_id=3)
    res = sactc_loss(np.zeros((3, 4)), label)
    assert not res.feasible and res.status == "infeasible"
    assert res.loss == math.inf
    assert np.all(res.grad == 0)
    assert not ctc_loss(np.zeros((2, 3)), [1, 1]).feasible


def test_sactc_rejects_other_speaker_counts():
    with pytest.raises(UnsupportedSpeakerCountError):
        sactc_loss(np.zeros((6, 5)), serialize_sot([[1], [2], [3]], sc_id=4))
    with pytest.raises(UnsupportedSpeakerCountError):
        sactc_loss(np.zeros((6, 5)), serialize_sot([[1, 2]], sc_id=4))
    with pytest.raises(TypeError):
        sactc_loss(np.zeros((6, 5)), [1, 2])


def test_brctc_all_ones_equals_ctc(rng):
    logits = rng.normal(size=(7, 4))
    labels = [1, 3, 3]
    ones = brctc_loss(logits, labels, np.ones((3, 7)))
    assert ones.loss == pytest.approx(ctc_loss(logits, labels).loss, abs=1e-12)
    np.testing.assert_allclose(ones.grad, ctc_loss(logits, labels).grad, atol=1e-12)


def test_brctc_callable_and_array_agree(rng):
    logits = rng.normal(size=(6, 4))
    fn = lambda u, t, n: 1.0 / (1.0 + u + t)  # noqa: E731
    arr = [[fn(u, t, 6) for t in range(1, 7)] for u in range(2)]
    a = brctc_loss(logits, [2, 1], fn)
    b = brctc_loss(logits, [2, 1], arr)
    assert a.loss == b.loss


def test_brctc_zero_weight_handling(rng):
    logits = rng.normal(size=(4, 3))
    w = np.ones((2, 4))
    w[0] = 0.0
    with pytest.raises(DegenerateRiskError):
        brctc_loss(logits, [1, 2], w)
    # weights vanish exactly where token 0 can end -> zero mass, not a crash
    w = np.ones((2, 4))
    w[0, :3] = 0.0
    res = brctc_loss(logits, [1, 2], w)
    assert res.status == "zero_mass" and res.loss == math.inf


def test_brctc_weight_range_checked(rng):
    with pytest.raises(ValueError):
        brctc_loss(rng.normal(size=(4, 3)), [1], np.full((1, 4), 1.5))
    with pytest.raises(ValueError):
        brctc_loss(rng.normal(size=(4, 3)), [1], np.ones((1, 3)))


def test_combined_loss(tiny):
    logits, label = tiny
    base = ctc_loss(logits, label.tokens)
    assert combined_loss(logits, label, mode="sactc", aux_weight=0.0).loss == base.loss
    doubled = combined_loss(logits, label, mode="ctc", aux_weight=1.0)
    assert doubled.loss == pytest.approx(2 * base.loss, abs=1e-12)
    np.testing.assert_allclose(doubled.grad, 2 * base.grad, atol=1e-12)
    mixed = combined_loss(logits, label, RiskSpec(lam=0.0), mode="sactc", aux_weight=1.0)
    assert mixed.loss - doubled.loss == pytest.approx(LOG2, abs=1e-9)
    with pytest.raises(ValueError):
        combined_loss(logits, label, aux_weight=-1.0)


def test_risk_direction_aggregate():
    # One small descent step on the speaker-aware loss moves occupancy toward each
    # speaker's side of the boundary more than the same step on plain CTC does.
    rng = np.random.default_rng(0)
    spec = RiskSpec(lam=15.0)
    gain_sa, gain_ctc = [], []
    for _ in range(200):
        logits, label = random_instance(rng, 8, 4, 5)
        before = occupancy_stats(softmax_log(logits), label, spec).compliance
        sa = sactc_loss(logits, label, spec)
        step = logits - 0.05 * sa.grad
        assert sactc_loss(step, label, spec, compute_grad=False).loss < sa.loss
        gain_sa.append(occupancy_stats(softmax_log(step), label, spec).compliance - before)
        step = logits - 0.05 * ctc_loss(logits, label.tokens).grad
        gain_ctc.append(occupancy_stats(softmax_log(step), label, spec).compliance - before)
    assert np.mean(gain_sa) > 0
    assert np.mean(gain_sa) > np.mean(gain_ctc)


def test_brctc_half_weights_add_log2(rng):
    logits = rng.normal(size=(6, 4))
    res = brctc_loss(logits, [1, 2], np.full((2, 6), 0.5))
    assert res.loss == pytest.approx(ctc_loss(logits, [1, 2]).loss + LOG2, abs=1e-12)
    assert np.allclose(res.per_token_losses, res.loss)


def test_brctc_last_frame_limit(rng):
    logits = rng.normal(size=(5, 3))
    eps = 1e-12
    w = np.full((1, 5), eps)
    w[0, -1] = 1.0
    res = brctc_loss(logits, [1], w)
    g = oracle.brute_force_grouped(softmax_log(logits), [1])
    assert res.loss == pytest.approx(-math.log(g[0, -1]), rel=1e-6)


def test_grouped_single_frame():
    log_post = np.log([[0.3, 0.7]])
    np.testing.assert_allclose(grouped_posteriors(log_post, [1]).g, [[0.7]], rtol=1e-15)


def test_finite_diff_shift_direction_is_flat(tiny):
    logits, label = tiny
    fd = oracle.finite_diff_grad(lambda z: sactc_loss(z, label, compute_grad=False).loss, logits)
    np.testing.assert_allclose(fd.sum(axis=1), 0.0, atol=1e-8)
