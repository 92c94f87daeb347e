import math

import numpy as np
import pytest

from sactc import oracle
from sactc.loss import grouped_posteriors, softmax_log
from sactc.verify import random_instance


def test_two_frame_path_set():
    assert oracle.enumerate_paths([1], 2, 2) == {(0, 1), (1, 0), (1, 1)}


def test_repeat_needs_blank():
    assert oracle.enumerate_paths([1, 1], 3, 2) == {(1, 0, 1)}
    assert oracle.enumerate_paths([1, 1], 2, 2) == set()


def test_run_end_frames():
    assert oracle.run_end_frames((0, 1, 1, 0, 2)) == [3, 5]
    assert oracle.run_end_frames((1, 0, 1, 1)) == [1, 4]
    assert oracle.run_end_frames((2, 1, 1)) == [1, 3]


def test_brute_force_ctc_uniform():
    log_post = np.log(np.full((2, 2), 0.5))
    assert oracle.brute_force_ctc(log_post, [1]) == pytest.approx(0.75, abs=1e-15)


def test_grouped_matches_dp(rng):
    for _ in range(25):
        logits, label = random_instance(rng, 6, 3, 5)
        log_post = softmax_log(logits)
        ref = oracle.brute_force_grouped(log_post, label.tokens)
        got = grouped_posteriors(log_post, label).g
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-300)
        np.testing.assert_allclose(ref.sum(axis=1), oracle.brute_force_ctc(log_post, label.tokens),
                                   rtol=1e-12)


def test_budget_guard():
    with pytest.raises(oracle.BudgetExceededError):
        oracle.enumerate_paths([1], 20, 5)


def test_finite_diff_of_quadratic():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    fd = oracle.finite_diff_grad(lambda z: float(np.sum(z**2)), x)
    np.testing.assert_allclose(fd, 2 * x, atol=1e-8)


def test_finite_diff_rejects_nonfinite():
    with pytest.raises(ArithmeticError):
        oracle.finite_diff_grad(lambda z: math.inf, np.zeros((1, 1)))


def test_two_labels_two_frames():
    assert oracle.enumerate_paths([1, 2], 2, 3) == {(1, 2)}


def test_zero_posterior_gives_zero():
    with np.errstate(divide="ignore"):
        log_post = np.log(np.array([[0.5, 0.5, 0.0]] * 3))
        assert oracle.brute_force_ctc(log_post, [2]) == 0.0
