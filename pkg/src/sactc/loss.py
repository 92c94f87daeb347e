"""CTC, Bayes-risk CTC and speaker-aware CTC losses with exact logit gradients.

Every loss here is a function of per-frame softmax outputs, so its logit
gradient is ``sum_i c_i * (y - gamma_i / F_i)`` where ``F_i`` is a (weighted)
path sum and ``gamma_i[t, k]`` the share of it carried by paths emitting ``k``
at frame ``t``.  For the risk-weighted sums the weight depends on the frame a
label run ends on, so ``gamma_i`` comes from a weighted forward/backward pass
in which the weight is applied on the transition that leaves the label node.
"""

from dataclasses import dataclass

import numpy as np

from . import lattice
from ._validation import InfeasibleAlignmentError, check_labels, check_logits
from .serialize import RiskSpec, SerializedLabel, UnsupportedSpeakerCountError, risk_weights

NEG_INF = -np.inf


class DegenerateRiskError(ValueError):
    """A constrained token has an all-zero risk weight."""


@dataclass
class LossResult:
    """Loss value and its gradient with respect to the logits.

    ``status`` is ``"ok"``, ``"infeasible"`` (no alignment exists; loss is
    ``inf`` and the gradient zero) or ``"zero_mass"`` (the risk weights vanish
    wherever the label has posterior mass).
    """

    loss: float
    grad: np.ndarray
    status: str = "ok"
    per_token_losses: np.ndarray = None

    @property
    def feasible(self):
        return self.status != "infeasible"

    def __add__(self, other):
        status = self.status if self.status != "ok" else other.status
        return LossResult(self.loss + other.loss, self.grad + other.grad, status)

    def scaled(self, weight):
        return LossResult(
            weight * self.loss, weight * self.grad, self.status, self.per_token_losses
        )


@dataclass(frozen=True)
class GroupedPosterior:
    """``log_g[u, t]``: log mass of paths whose ``u``-th label run ends at frame ``t``."""

    log_g: np.ndarray
    log_likelihood: float

    @property
    def g(self):
        return np.exp(self.log_g)


def softmax_log(logits):
    """Per-frame log-softmax."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _tokens_of(label):
    if isinstance(label, SerializedLabel):
        return np.asarray(label.tokens, dtype=np.int64)
    return np.asarray(label, dtype=np.int64)


def _infeasible(shape, n_tokens=None):
    per_tok = None if n_tokens is None else np.full(n_tokens, np.inf)
    return LossResult(np.inf, np.zeros(shape), "infeasible", per_tok)


def _scatter_vocab(node_weights, ext, n_vocab):
    """Sum a (T, 2U+1) node array into a (T, V) array by emitted token."""
    out = np.zeros((node_weights.shape[0], n_vocab))
    for v, tok in enumerate(ext):
        out[:, tok] += node_weights[:, v]
    return out


def ctc_loss(logits, labels, blank_id=0, compute_grad=True):
    """Negative log posterior of ``labels`` summed over all CTC alignments."""
    logits = check_logits(logits)
    labels = check_labels(_tokens_of(labels), blank_id, logits.shape[1])
    log_post = softmax_log(logits)
    ext = lattice.extend_labels(labels, blank_id)
    try:
        alpha = lattice.forward(log_post, ext)
    except InfeasibleAlignmentError:
        return _infeasible(logits.shape)
    log_p = float(np.logaddexp(alpha[-1, -1], alpha[-1, -2]))
    if not np.isfinite(log_p):
        return _infeasible(logits.shape)
    if not compute_grad:
        return LossResult(-log_p, None)
    beta = lattice.backward(log_post, ext)
    occ = np.exp(lattice.node_log_mass(alpha, beta, log_post, ext) - log_p)
    grad = np.exp(log_post) - _scatter_vocab(occ, ext, logits.shape[1])
    return LossResult(-log_p, grad)


def _label_node_mass(tables, log_post, pos):
    emit = log_post[:, tables.ext[pos]]
    left = tables.alpha[:, pos]
    right = tables.beta_hat[:, pos]
    dead = np.isneginf(emit) | np.isneginf(left) | np.isneginf(right)
    with np.errstate(invalid="ignore"):
        out = left + right - np.where(dead, 0.0, emit)
    return np.where(dead, NEG_INF, out).T


def grouped_posteriors(log_post, label, blank_id=0):
    """End-frame grouped posteriors ``g_u(t) = alpha(t, 2u) * beta_hat(t, 2u) / y``.

    Raises:
        InfeasibleAlignmentError: if the frames cannot cover the label.
    """
    log_post = np.asarray(log_post, dtype=np.float64)
    tables = lattice.compute_tables(log_post, _tokens_of(label), blank_id)
    pos = np.arange(1, tables.ext.size, 2)
    return GroupedPosterior(_label_node_mass(tables, log_post, pos), tables.log_likelihood)


def _weighted_occupancy(log_post, tables, sel, log_w):
    """Occupancy of the risk-weighted path sums, one per selected token.

    Args:
        log_post: (T, V) log posteriors.
        tables: lattice tables for the same instance.
        sel: (n,) 0-based label indices.
        log_w: (n, T) log weights indexed by the frame the label run ends on.

    Returns:
        (n, T, 2U+1) log node masses; ``logsumexp`` over the last axis equals
        the log weighted path sum at every frame.
    """
    ext, alpha, beta, beta_hat = tables.ext, tables.alpha, tables.beta, tables.beta_hat
    n_frames, n_nodes = alpha.shape
    n = sel.size
    rows = np.arange(n)
    pos = 2 * sel + 1
    below = np.arange(n_nodes)[None, :] <= pos[:, None]
    skip = lattice._skip_allowed(ext, int(ext[0]))
    emit = log_post[:, ext]
    inject_b = log_w + beta_hat[:, pos].T  # (n, T)
    inject_a = log_w + alpha[:, pos].T

    bw = np.full((n, n_frames, n_nodes), NEG_INF)
    bw[rows, -1, pos] = inject_b[:, -1]
    for t in range(n_frames - 2, -1, -1):
        nxt = bw[:, t + 1]
        acc = nxt.copy()
        acc[:, :-1] = np.logaddexp(acc[:, :-1], nxt[:, 1:])
        acc[:, :-2] = np.where(skip[2:], np.logaddexp(acc[:, :-2], nxt[:, 2:]), acc[:, :-2])
        acc += emit[t]
        acc[~below] = NEG_INF
        acc[rows, pos] = np.logaddexp(acc[rows, pos], inject_b[:, t])
        bw[:, t] = acc

    aw = np.full((n, n_frames, n_nodes), NEG_INF)
    for t in range(1, n_frames):
        prev = aw[:, t - 1].copy()
        prev[rows, pos] = inject_a[:, t - 1]
        acc = prev.copy()
        acc[:, 1:] = np.logaddexp(acc[:, 1:], prev[:, :-1])
        acc[:, 2:] = np.where(skip[2:], np.logaddexp(acc[:, 2:], prev[:, :-2]), acc[:, 2:])
        acc += emit[t]
        acc[below] = NEG_INF
        aw[:, t] = acc

    left = np.where(below[:, None, :], alpha[None], aw)
    right = np.where(below[:, None, :], bw, beta[None])
    return lattice.node_log_mass(left, right, log_post, ext)


def _risk_weight_matrix(risk_fn, n_tokens, n_frames):
    if callable(risk_fn):
        w = np.array(
            [[risk_fn(u, t, n_frames) for t in range(1, n_frames + 1)] for u in range(n_tokens)],
            dtype=np.float64,
        )
    else:
        w = np.array(risk_fn, dtype=np.float64)
    if w.shape != (n_tokens, n_frames):
        raise ValueError(f"risk weights must have shape {(n_tokens, n_frames)}, got {w.shape}")
    if np.any(~np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
        raise ValueError("risk weights must lie in [0, 1]")
    return w


def _bayes_risk(logits, tokens, weights, coef, blank_id, compute_grad):
    """Core of every risk-weighted loss.

    ``loss = sum_u coef[u] * -log sum_t weights[u, t] * g_u(t)`` over tokens
    with ``coef[u] > 0``.
    """
    n_frames, n_vocab = logits.shape
    sel = np.flatnonzero(coef > 0)
    if np.any(np.all(weights[sel] == 0, axis=1)):
        raise DegenerateRiskError("a constrained token has all-zero risk weights")
    log_post = softmax_log(logits)
    try:
        tables = lattice.compute_tables(log_post, tokens, blank_id)
    except InfeasibleAlignmentError:
        return _infeasible(logits.shape, tokens.size)
    if not np.isfinite(tables.log_likelihood):
        return _infeasible(logits.shape, tokens.size)

    with np.errstate(divide="ignore"):
        log_w = np.log(weights[sel])
    log_g = _label_node_mass(tables, log_post, 2 * sel + 1)
    log_f = np.logaddexp.reduce(log_w + log_g, axis=1)
    per_token = np.full(tokens.size, np.nan)
    per_token[sel] = -log_f
    if not np.all(np.isfinite(log_f)):
        return LossResult(np.inf, np.zeros(logits.shape), "zero_mass", per_token)
    loss = float(np.dot(coef[sel], -log_f))
    if not compute_grad:
        return LossResult(loss, None, per_token_losses=per_token)

    occ = _weighted_occupancy(log_post, tables, sel, log_w)
    node_w = np.einsum("i,itv->tv", coef[sel], np.exp(occ - log_f[:, None, None]))
    grad = coef[sel].sum() * np.exp(log_post) - _scatter_vocab(node_w, tables.ext, n_vocab)
    return LossResult(loss, grad, per_token_losses=per_token)


def brctc_loss(logits, label, risk_fn, blank_id=0, tokens=None, compute_grad=True):
    """Bayes-risk CTC averaged over the designated tokens.

    Args:
        logits: (T, V) frame scores.
        label: token sequence or :class:`SerializedLabel`.
        risk_fn: either a callable ``risk_fn(u, t, T)`` (``u`` a 0-based label
            index, ``t`` a 1-based frame) or a (U, T) array of weights in [0, 1].
        tokens: 0-based indices of the tokens to average over; all by default.
    """
    logits = check_logits(logits)
    labels = check_labels(_tokens_of(label), blank_id, logits.shape[1])
    weights = _risk_weight_matrix(risk_fn, labels.size, logits.shape[0])
    idx = np.arange(labels.size) if tokens is None else np.asarray(tokens, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("no tokens designated")
    coef = np.zeros(labels.size)
    coef[idx] = 1.0 / idx.size
    return _bayes_risk(logits, labels, weights, coef, blank_id, compute_grad)


def sactc_weights(label, spec, n_frames):
    """Risk weight matrix and per-token aggregation coefficients for a 2-speaker label."""
    spec = spec.resolve(label)
    spk = np.asarray(label.speaker_of_token)
    designated = np.ones(len(label), dtype=bool) if spec.include_sc else ~label.is_sc
    weights = np.stack([risk_weights(spec, int(s), n_frames) for s in spk])
    coef = np.zeros(len(label))
    n_spk = label.speaker_count
    for s in range(1, n_spk + 1):
        mine = designated & (spk == s)
        if spec.normalize == "speaker":
            coef[mine] = 1.0 / (n_spk * mine.sum())
        else:
            coef[mine] = 1.0 / (n_spk * len(label))
    return weights, coef


def sactc_loss(logits, label, spec=None, blank_id=0, compute_grad=True):
    """Speaker-aware CTC loss for a two-speaker serialized label."""
    if not isinstance(label, SerializedLabel):
        raise TypeError("sactc_loss needs a SerializedLabel")
    if label.speaker_count != 2:
        raise UnsupportedSpeakerCountError(
            f"speaker-aware risk supports 2 speakers, got {label.speaker_count}"
        )
    spec = RiskSpec() if spec is None else spec
    logits = check_logits(logits)
    tokens = check_labels(_tokens_of(label), blank_id, logits.shape[1])
    weights, coef = sactc_weights(label, spec, logits.shape[0])
    return _bayes_risk(logits, tokens, weights, coef, blank_id, compute_grad)


def combined_loss(logits, label, spec=None, mode="sactc", aux_weight=1.0, blank_id=0):
    """CTC plus ``aux_weight`` times an auxiliary CTC or speaker-aware CTC term."""
    if aux_weight < 0:
        raise ValueError("aux_weight must be nonnegative")
    main = ctc_loss(logits, _tokens_of(label), blank_id)
    if aux_weight == 0:
        return main
    if mode == "ctc":
        aux = ctc_loss(logits, _tokens_of(label), blank_id)
    elif mode == "sactc":
        aux = sactc_loss(logits, label, spec, blank_id)
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    if not main.feasible or not aux.feasible:
        return _infeasible(main.grad.shape)
    return main + aux.scaled(aux_weight)


def loss_for_mode(logits, label, mode, spec=None, blank_id=0, compute_grad=True):
    if mode == "ctc":
        return ctc_loss(logits, _tokens_of(label), blank_id, compute_grad)
    if mode == "sactc":
        return sactc_loss(logits, label, spec, blank_id, compute_grad)
    raise ValueError(f"unknown loss mode {mode!r}")
