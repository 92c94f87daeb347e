"""Randomised verification suites: DP vs brute force, analytic vs finite-difference
gradients, and lattice invariants.  Shared by the ``verify`` command and the tests.
"""

import math

import numpy as np

from . import lattice, oracle
from ._validation import min_frames
from .loss import ctc_loss, grouped_posteriors, sactc_loss, softmax_log
from .serialize import RiskSpec, serialize_sot

ORACLE_TOL = 1e-9
GRAD_RTOL = 1e-4
GRAD_STEP = 1e-5
ROW_SUM_TOL = 1e-8
INVARIANT_RTOL = 1e-10
DEGENERATION_TOL = 1e-9
LAMBDAS = (0.0, 5.0, 15.0)


def random_instance(rng, max_frames, max_tokens, max_vocab, logit_scale=2.0):
    """Random feasible two-speaker instance.

    Token ids: 0 is blank, ``V - 1`` the speaker-change token, the rest words.
    ``max_tokens`` counts the speaker-change token.
    """
    n_vocab = int(rng.integers(3, max_vocab + 1))
    sc_id = n_vocab - 1
    while True:
        n_words = int(rng.integers(2, max_tokens))  # at least one word per speaker
        m = int(rng.integers(1, n_words))
        words = rng.integers(1, sc_id, size=n_words).tolist() if sc_id > 1 else [1] * n_words
        label = serialize_sot([words[:m], words[m:]], sc_id=sc_id)
        need = min_frames(label.tokens)
        if need <= max_frames:
            break
    n_frames = int(rng.integers(need, max_frames + 1))
    logits = logit_scale * rng.normal(size=(n_frames, n_vocab))
    return logits, label


def _rel_close(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def oracle_suite(trials, seed, max_frames=6, max_tokens=3, max_vocab=5):
    """DP losses against exhaustive path enumeration."""
    rng = np.random.default_rng(seed)
    worst_ctc = worst_sactc = 0.0
    for _ in range(trials):
        logits, label = random_instance(rng, max_frames, max_tokens, max_vocab)
        log_post = softmax_log(logits)
        bf = -math.log(oracle.brute_force_ctc(log_post, label.tokens))
        worst_ctc = max(worst_ctc, abs(ctc_loss(logits, label.tokens).loss - bf))
        for lam in LAMBDAS:
            spec = RiskSpec(lam=lam)
            ref = oracle.brute_force_sactc(log_post, label, spec)
            got = sactc_loss(logits, label, spec, compute_grad=False).loss
            worst_sactc = max(worst_sactc, abs(got - ref))
    return {
        "trials": trials,
        "max_abs_error_ctc": worst_ctc,
        "max_abs_error_sactc": worst_sactc,
        "tolerance": ORACLE_TOL,
        "passed": worst_ctc <= ORACLE_TOL and worst_sactc <= ORACLE_TOL,
    }


def grad_relative_error(analytic, numeric):
    """Largest entrywise error, relative to the largest finite-difference entry."""
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def grad_suite(trials, seed, max_frames=8, max_tokens=4, max_vocab=5):
    """Analytic logit gradients against central finite differences."""
    rng = np.random.default_rng(seed)
    worst = {"ctc": 0.0, "sactc": 0.0}
    worst_rows = 0.0
    for i in range(trials):
        logits, label = random_instance(rng, max_frames, max_tokens, max_vocab)
        spec = RiskSpec(lam=LAMBDAS[i % len(LAMBDAS)])
        checks = {
            "ctc": lambda z, compute_grad=True: ctc_loss(z, label.tokens, compute_grad=compute_grad),
            "sactc": lambda z, compute_grad=True: sactc_loss(z, label, spec,
                                                             compute_grad=compute_grad),
        }
        for name, fn in checks.items():
            res = fn(logits)
            fd = oracle.finite_diff_grad(lambda z: fn(z, compute_grad=False).loss, logits, GRAD_STEP)
            worst[name] = max(worst[name], grad_relative_error(res.grad, fd))
            worst_rows = max(worst_rows, float(np.max(np.abs(res.grad.sum(axis=1)))))
    return {
        "trials": trials,
        "max_rel_error_ctc": worst["ctc"],
        "max_rel_error_sactc": worst["sactc"],
        "max_row_sum": worst_rows,
        "tolerance": GRAD_RTOL,
        "row_sum_tolerance": ROW_SUM_TOL,
        "passed": max(worst.values()) <= GRAD_RTOL and worst_rows <= ROW_SUM_TOL,
    }


def invariants_suite(trials, seed, max_frames=12, max_tokens=6, max_vocab=6):
    """Frame-invariance of the total, end-frame partition, and the lambda = 0 identity."""
    rng = np.random.default_rng(seed)
    worst_time = worst_part = worst_degen = 0.0
    for _ in range(trials):
        logits, label = random_instance(rng, max_frames, max_tokens, max_vocab)
        log_post = softmax_log(logits)
        tables = lattice.compute_tables(log_post, label.tokens)
        p = math.exp(tables.log_likelihood)
        totals = np.exp(lattice.frame_log_totals(tables, log_post))
        worst_time = max(worst_time, float((totals.max() - totals.min()) / p))
        grouped = grouped_posteriors(log_post, label)
        for row in grouped.g:
            worst_part = max(worst_part, _rel_close(math.fsum(row), p))
        gap = (sactc_loss(logits, label, RiskSpec(lam=0.0), compute_grad=False).loss
               - ctc_loss(logits, label.tokens, compute_grad=False).loss)
        worst_degen = max(worst_degen, abs(gap - math.log(2.0)))
    return {
        "trials": trials,
        "max_time_spread": worst_time,
        "max_partition_error": worst_part,
        "max_degeneration_error": worst_degen,
        "tolerance": INVARIANT_RTOL,
        "passed": (worst_time <= INVARIANT_RTOL and worst_part <= INVARIANT_RTOL
                   and worst_degen <= DEGENERATION_TOL),
    }


SUITES = {"oracle": oracle_suite, "grad": grad_suite, "invariants": invariants_suite}


def run_suites(names, trials, seed):
    report = {}
    for name in names:
        try:
            report[name] = SUITES[name](trials, seed)
        except ArithmeticError as exc:
            report[name] = {"trials": trials, "passed": False, "error": str(exc)}
    return report
