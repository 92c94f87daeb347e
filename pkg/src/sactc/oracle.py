"""Brute-force references for tiny instances.

Everything here works path by path in the probability domain, with no lattice
recursions, so it can check the dynamic programs in :mod:`sactc.lattice` and
:mod:`sactc.loss`.
"""

import itertools
import math

import numpy as np

DEFAULT_BUDGET = 10**7


class BudgetExceededError(RuntimeError):
    pass


def _collapse(path, blank_id):
    out = []
    prev = None
    for tok in path:
        if tok != prev and tok != blank_id:
            out.append(tok)
        prev = tok
    return tuple(out)


def enumerate_paths(labels, n_frames, n_vocab, blank_id=0, budget=DEFAULT_BUDGET):
    """All length-``n_frames`` token sequences that collapse to ``labels``."""
    if n_vocab**n_frames > budget:
        raise BudgetExceededError(f"{n_vocab}^{n_frames} paths exceed the budget of {budget}")
    target = tuple(int(t) for t in labels)
    return {
        path
        for path in itertools.product(range(n_vocab), repeat=n_frames)
        if _collapse(path, blank_id) == target
    }


def run_end_frames(path, blank_id=0):
    """1-based last frame of each emitted label run along ``path``."""
    ends = []
    prev = blank_id
    for t, tok in enumerate(path, start=1):
        if tok != blank_id and tok == prev:
            ends[-1] = t
        elif tok != blank_id:
            ends.append(t)
        prev = tok
    return ends


def _path_prob(post, path):
    return math.prod(post[t][tok] for t, tok in enumerate(path))


def _as_prob_rows(log_post):
    post = np.exp(np.asarray(log_post, dtype=np.float64))
    return [list(map(float, row)) for row in post]


def brute_force_ctc(log_post, labels, blank_id=0, budget=DEFAULT_BUDGET):
    """``P(labels | x)`` by summing every valid path (not its log)."""
    post = _as_prob_rows(log_post)
    paths = enumerate_paths(labels, len(post), len(post[0]), blank_id, budget)
    return math.fsum(_path_prob(post, p) for p in paths)


def brute_force_grouped(log_post, labels, blank_id=0, budget=DEFAULT_BUDGET):
    """(U, T) array: mass of paths whose ``u``-th label run ends at each frame."""
    post = _as_prob_rows(log_post)
    n_frames = len(post)
    paths = enumerate_paths(labels, n_frames, len(post[0]), blank_id, budget)
    buckets = [[[] for _ in range(n_frames)] for _ in labels]
    for path in paths:
        p = _path_prob(post, path)
        for u, end in enumerate(run_end_frames(path, blank_id)):
            buckets[u][end - 1].append(p)
    return np.array([[math.fsum(b) for b in row] for row in buckets])


def _weight(lam, b, speaker, pos):
    x = lam * (pos - b)
    if speaker == 1:
        return 1.0 / (1.0 + math.exp(x)) if x < 700 else 0.0
    return 1.0 / (1.0 + math.exp(-x)) if x > -700 else 0.0


def brute_force_sactc(log_post, label, spec, blank_id=0, budget=DEFAULT_BUDGET):
    """Speaker-aware CTC loss from explicit per-path end-frame bookkeeping."""
    if label.speaker_count != 2:
        raise ValueError("brute-force speaker-aware loss needs exactly 2 speakers")
    m, n = label.per_speaker_counts
    b = spec.boundary_b if spec.boundary_b is not None else m / (m + n)
    post = _as_prob_rows(log_post)
    n_frames = len(post)
    tokens = label.tokens
    paths = enumerate_paths(tokens, n_frames, len(post[0]), blank_id, budget)
    terms = [[] for _ in tokens]
    for path in paths:
        p = _path_prob(post, path)
        for u, end in enumerate(run_end_frames(path, blank_id)):
            pos = (end - 0.5) / n_frames if spec.frame_center else end / n_frames
            terms[u].append(_weight(spec.lam, b, label.speaker_of_token[u], pos) * p)

    total = []
    for s in (1, 2):
        mine = [
            u
            for u, (tok, spk) in enumerate(zip(tokens, label.speaker_of_token))
            if spk == s and (spec.include_sc or tok != label.sc_id)
        ]
        denom = len(mine) if spec.normalize == "speaker" else len(tokens)
        per_tok = []
        for u in mine:
            mass = math.fsum(terms[u])
            per_tok.append(math.inf if mass == 0.0 else -math.log(mass))
        total.append(math.fsum(per_tok) / denom)
    return math.fsum(total) / 2


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise ArithmeticError(f"non-finite function value at perturbed index {idx}")
        grad[idx] = (up - down) / (2 * h)
    return grad
