"""Log-domain forward, backward and revised-backward variables on the CTC lattice.

Positions in the extended label sequence are 0-based here: blanks sit at even
indices and the ``u``-th label (0-based) sits at index ``2u + 1``.  The backward
variable includes the emission of its own frame, so
``alpha[t, v] + beta[t, v] - log_post[t, ext[v]]`` is the log of the posterior
mass of all valid paths visiting node ``(t, v)``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import InfeasibleAlignmentError, check_labels, min_frames

NEG_INF = -np.inf

# Relative tolerance on negative probabilities produced by the revised-backward subtraction.
REVISED_BACKWARD_RTOL = 1e-12


def extend_labels(labels, blank_id=0):
    """Interleave ``labels`` with blanks: ``[a, b] -> [blank, a, blank, b, blank]``."""
    labels = check_labels(labels, blank_id)
    ext = np.full(2 * labels.size + 1, blank_id, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _skip_allowed(ext, blank_id):
    # skip[v]: the transition v - 2 -> v is legal.
    skip = np.zeros(ext.size, dtype=bool)
    skip[2:] = (ext[2:] != blank_id) & (ext[2:] != ext[:-2])
    return skip


def _blank_of(ext):
    return int(ext[0])


def _check_feasible(n_frames, ext):
    need = min_frames(ext[1::2])
    if n_frames < need:
        raise InfeasibleAlignmentError(n_frames, need)


def forward(log_post, ext):
    """Forward table ``alpha`` of shape (T, 2U+1), log domain.

    ``alpha[t, v]`` sums the probabilities of path prefixes over frames
    ``0..t`` that end on node ``v``.
    """
    log_post = np.asarray(log_post, dtype=np.float64)
    ext = np.asarray(ext, dtype=np.int64)
    n_frames = log_post.shape[0]
    _check_feasible(n_frames, ext)
    skip = _skip_allowed(ext, _blank_of(ext))
    emit = log_post[:, ext]

    alpha = np.full((n_frames, ext.size), NEG_INF)
    alpha[0, :2] = emit[0, :2]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]
    return alpha


def backward(log_post, ext):
    """Backward table ``beta`` of shape (T, 2U+1), log domain.

    ``beta[t, v]`` sums the probabilities of path suffixes over frames
    ``t..T-1`` that start on node ``v``; the frame-``t`` emission is included.
    """
    log_post = np.asarray(log_post, dtype=np.float64)
    ext = np.asarray(ext, dtype=np.int64)
    n_frames = log_post.shape[0]
    _check_feasible(n_frames, ext)
    skip = _skip_allowed(ext, _blank_of(ext))
    emit = log_post[:, ext]

    beta = np.full((n_frames, ext.size), NEG_INF)
    beta[-1, -2:] = emit[-1, -2:]
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]
    return beta


def log_sub(a, b, rtol=REVISED_BACKWARD_RTOL):
    """Elementwise ``log(exp(a) - exp(b))``.

    Differences that are negative by no more than ``rtol`` (relative to
    ``exp(a)``) are rounded to zero probability; larger ones raise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        gap = b - a
    bad = gap > np.log1p(rtol)
    if np.any(bad):
        raise ArithmeticError(
            f"negative probability in log-domain difference (max log gap {np.max(gap[bad]):.3e})"
        )
    out = np.full(np.broadcast(a, b).shape, NEG_INF)
    b_zero = np.isneginf(b)
    out = np.where(b_zero, a, out)
    live = ~b_zero & (gap < 0)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        out = np.where(live, a + np.log1p(-np.exp(np.where(live, gap, -1.0))), out)
    return out


def backward_revised(beta, log_post, ext):
    """Revised backward table: suffix mass of paths whose label run ends at frame ``t``.

    Only label positions (odd indices) are defined; blank positions hold ``-inf``.
    For ``t < T-1``, ``beta_hat[t, v] = beta[t, v] - beta[t+1, v] * y[t, ext[v]]``
    (removing suffixes that stay on ``v``), and ``beta_hat[T-1, v] = beta[T-1, v]``.
    """
    beta = np.asarray(beta, dtype=np.float64)
    log_post = np.asarray(log_post, dtype=np.float64)
    ext = np.asarray(ext, dtype=np.int64)
    pos = np.arange(1, ext.size, 2)
    emit = log_post[:-1, ext[pos]]

    beta_hat = np.full(beta.shape, NEG_INF)
    beta_hat[-1, pos] = beta[-1, pos]
    beta_hat[:-1, pos] = log_sub(beta[:-1, pos], beta[1:, pos] + emit)
    return beta_hat


def node_log_mass(left, right, log_post, ext):
    """``left + right - log y`` per node, with zero-probability emissions mapped to ``-inf``."""
    emit = np.asarray(log_post, dtype=np.float64)[:, ext]
    if left.ndim == 3:
        emit = emit[None]
    dead = np.isneginf(emit) | np.isneginf(left) | np.isneginf(right)
    with np.errstate(invalid="ignore"):
        out = left + right - np.where(dead, 0.0, emit)
    return np.where(dead, NEG_INF, out)


@dataclass(frozen=True)
class LatticeTables:
    """Forward, backward and revised backward tables for one (posteriors, labels) pair."""

    ext: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    beta_hat: np.ndarray

    @property
    def log_likelihood(self):
        """``log P(labels | x)`` read off the last forward column."""
        return float(np.logaddexp(self.alpha[-1, -1], self.alpha[-1, -2]))

    @property
    def n_frames(self):
        return self.alpha.shape[0]

    @property
    def n_labels(self):
        return self.ext.size // 2


def compute_tables(log_post, labels, blank_id=0):
    """Build all three lattice tables; raises :class:`InfeasibleAlignmentError` when T is too short."""
    ext = extend_labels(labels, blank_id)
    if int(ext.max()) >= np.shape(log_post)[1]:
        raise ValueError("label id outside the posterior vocabulary")
    alpha = forward(log_post, ext)
    beta = backward(log_post, ext)
    beta_hat = backward_revised(beta, log_post, ext)
    for arr in (ext, alpha, beta, beta_hat):
        arr.setflags(write=False)
    return LatticeTables(ext=ext, alpha=alpha, beta=beta, beta_hat=beta_hat)


def frame_log_totals(tables, log_post):
    """Per-frame ``log sum_v alpha*beta/y``; every entry equals ``log P(l|x)``."""
    mass = node_log_mass(tables.alpha, tables.beta, log_post, tables.ext)
    return np.logaddexp.reduce(mass, axis=1)
