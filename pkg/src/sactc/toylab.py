"""Desk-scale two-speaker experiment: synthetic mixtures, a windowed frame model, and
emission statistics showing where each speaker's tokens are emitted in time.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import loss as losses
from ._validation import InfeasibleAlignmentError, min_frames
from .decode import greedy_decode
from .metrics import overlap_ratio
from .serialize import RiskSpec, SpeakerTranscripts, frame_positions, serialize_sot


class TrainingDivergedError(RuntimeError):
    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"training diverged at step {step} (loss {value})")


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic mixture settings.

    Token ids run ``1..n_tokens``; the blank is 0 and the speaker-change token
    is ``n_tokens + 1``.  ``max_offset`` of ``None`` lets the second speaker
    start anywhere up to the end of the first.  ``auto_pad`` appends silent
    frames when a mixture is too short to align its label; without it such a
    draw raises :class:`InfeasibleAlignmentError`.
    """

    n_tokens: int = 8
    dim: int = 16
    span: int = 3
    span_jitter: int = 0
    min_tokens: int = 2
    max_tokens: int = 4
    min_offset: int = 0
    max_offset: int = None
    pad: int = 1
    auto_pad: bool = True
    noise: float = 0.1
    table_seed: int = 0

    @property
    def blank_id(self):
        return 0

    @property
    def sc_id(self):
        return self.n_tokens + 1

    @property
    def n_vocab(self):
        return self.n_tokens + 2

    def embedding_table(self):
        rng = np.random.default_rng(self.table_seed)
        table = rng.normal(size=(self.n_tokens + 1, self.dim))
        table[0] = 0.0
        return table / np.linalg.norm(table, axis=1, keepdims=True).clip(min=1e-12)


@dataclass(frozen=True)
class SyntheticMixture:
    frames: np.ndarray
    label: object
    spans: tuple  # per speaker (first, last) frame, 1-based inclusive
    overlap: float

    @property
    def n_frames(self):
        return self.frames.shape[0]


def _render(table, tokens, span):
    return np.repeat(table[list(tokens)], span, axis=0)


def synth_mixture(cfg, seed, tokens=None, offset=None):
    """One two-speaker mixture.

    Speaker A's tokens occupy consecutive blocks of frames from the start;
    speaker B's start ``offset`` frames later and are summed in where they
    overlap.  Each speaker draws its own block length (speaking rate) from
    ``span +- span_jitter``.  ``tokens``/``offset`` override the random draw.
    """
    rng = np.random.default_rng(seed)
    rates = rng.integers(cfg.span - cfg.span_jitter, cfg.span + cfg.span_jitter + 1, size=2)
    if rates.min() < 1:
        raise ValueError("span - span_jitter must be at least 1")
    if tokens is None:
        tokens = [
            tuple(int(t) for t in rng.integers(1, cfg.n_tokens + 1,
                                               size=rng.integers(cfg.min_tokens, cfg.max_tokens + 1)))
            for _ in range(2)
        ]
    tok_a, tok_b = (tuple(t) for t in tokens)
    len_a, len_b = len(tok_a) * rates[0], len(tok_b) * rates[1]
    if offset is None:
        hi = len_a if cfg.max_offset is None else min(cfg.max_offset, len_a)
        offset = int(rng.integers(cfg.min_offset, hi + 1))
    label = serialize_sot(
        SpeakerTranscripts((tok_a, tok_b), start_times=(0.0, float(offset))),
        sc_id=cfg.sc_id, blank_id=cfg.blank_id,
    )
    n_frames = cfg.pad + max(len_a, offset + len_b) + cfg.pad
    need = min_frames(label.tokens)
    if n_frames < need:
        if not cfg.auto_pad:
            raise InfeasibleAlignmentError(n_frames, need)
        n_frames = need

    table = cfg.embedding_table()
    frames = np.zeros((n_frames, cfg.dim))
    frames[cfg.pad:cfg.pad + len_a] += _render(table, tok_a, rates[0])
    frames[cfg.pad + offset:cfg.pad + offset + len_b] += _render(table, tok_b, rates[1])
    frames += cfg.noise * rng.normal(size=frames.shape)

    spans = ((cfg.pad + 1, cfg.pad + int(len_a)),
             (cfg.pad + offset + 1, cfg.pad + offset + int(len_b)))
    ratio = overlap_ratio([(s - 1, e - s + 1) for s, e in spans])
    return SyntheticMixture(frames=frames, label=label, spans=spans, overlap=ratio)


def make_mixtures(cfg, seed, n, split=0):
    """``n`` mixtures drawn from independent child seeds of ``(seed, split)``."""
    return [synth_mixture(cfg, (seed, split, i)) for i in range(n)]


def _windowed(frames, window):
    half = window // 2
    padded = np.pad(frames, ((half, half), (0, 0)))
    return np.concatenate([padded[k:k + frames.shape[0]] for k in range(window)], axis=1)


class ToyCTCModel(BaseEstimator):
    """Frame-local network: a symmetric context window, one tanh layer, V logits.

    ``fit`` minimises the selected loss (``"ctc"`` or ``"sactc"``) by plain
    gradient descent with optional global-norm clipping.

    Parameters
    ----------
    n_vocab : int
        Output vocabulary size, blank and speaker-change token included.
    window : int
        Odd context window in frames.
    hidden : int
        Hidden units; 0 makes the map linear.
    positional : bool
        Append the normalised frame position ``t / T`` to every input.
    mode : {"ctc", "sactc"}
    lam : float
        Risk factor for ``mode="sactc"``.
    boundary_b : float or None
        Fixed speaker boundary; ``None`` uses each label's token ratio.
    aux_weight : float or None
        When set, train on ``ctc + aux_weight * <mode loss>`` instead.
    """

    def __init__(self, n_vocab=10, window=5, hidden=32, positional=True, mode="ctc", lam=15.0,
                 boundary_b=None, aux_weight=None, learning_rate=0.5, n_steps=300, batch_size=16,
                 clip=5.0, init_scale=0.3, blank_id=0, random_state=0):
        self.n_vocab = n_vocab
        self.window = window
        self.hidden = hidden
        self.positional = positional
        self.mode = mode
        self.lam = lam
        self.boundary_b = boundary_b
        self.aux_weight = aux_weight
        self.learning_rate = learning_rate
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.clip = clip
        self.init_scale = init_scale
        self.blank_id = blank_id
        self.random_state = random_state

    def _features(self, frames):
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError(f"frames must be (T, D), got shape {frames.shape}")
        if hasattr(self, "n_features_in_") and frames.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {frames.shape[1]}")
        feats = _windowed(frames, self.window)
        if self.positional:
            feats = np.hstack([feats, frame_positions(frames.shape[0])[:, None]])
        return feats

    def _init_params(self, n_in):
        rng = np.random.default_rng(self.random_state)
        params = {}
        if self.hidden:
            params["W1"] = rng.normal(scale=self.init_scale / np.sqrt(n_in), size=(n_in, self.hidden))
            params["b1"] = np.zeros(self.hidden)
            n_in = self.hidden
        params["W2"] = rng.normal(scale=self.init_scale / np.sqrt(n_in), size=(n_in, self.n_vocab))
        params["b2"] = np.zeros(self.n_vocab)
        return params

    def _forward(self, params, feats):
        if self.hidden:
            h = np.tanh(feats @ params["W1"] + params["b1"])
            return h @ params["W2"] + params["b2"], h
        return feats @ params["W2"] + params["b2"], feats

    def _backward(self, params, feats, h, dlogits, grads):
        grads["W2"] += h.T @ dlogits
        grads["b2"] += dlogits.sum(axis=0)
        if self.hidden:
            dpre = (dlogits @ params["W2"].T) * (1.0 - h**2)
            grads["W1"] += feats.T @ dpre
            grads["b1"] += dpre.sum(axis=0)

    def _spec(self):
        return RiskSpec(lam=self.lam, boundary_b=self.boundary_b)

    def _sample_loss(self, logits, label):
        if self.aux_weight is not None:
            return losses.combined_loss(logits, label, self._spec(), self.mode,
                                        self.aux_weight, self.blank_id)
        return losses.loss_for_mode(logits, label, self.mode, self._spec(), self.blank_id)

    def fit(self, X, y):
        """Train on frame matrices ``X`` with serialized labels ``y``."""
        if self.mode not in ("ctc", "sactc"):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if not np.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        if len(X) != len(y) or not len(X):
            raise ValueError("X and y must be nonempty and of equal length")
        self.n_features_in_ = np.asarray(X[0]).shape[1]
        feats = [self._features(x) for x in X]
        params = self._init_params(feats[0].shape[1])
        rng = np.random.default_rng(self.random_state)
        curve = []
        for step in range(self.n_steps):
            batch = rng.choice(len(X), size=min(self.batch_size, len(X)), replace=False)
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            total, used = 0.0, 0
            for i in batch:
                logits, h = self._forward(params, feats[i])
                if not np.all(np.isfinite(logits)):
                    raise TrainingDivergedError(step, float("nan"))
                res = self._sample_loss(logits, y[i])
                if not res.feasible:
                    continue
                if not np.isfinite(res.loss):
                    raise TrainingDivergedError(step, res.loss)
                total += res.loss
                used += 1
                self._backward(params, feats[i], h, res.grad, grads)
            if used == 0:
                raise ValueError(f"no feasible samples in the batch at step {step}")
            curve.append(total / used)
            norm = np.sqrt(sum(np.sum(g**2) for g in grads.values())) / used
            if not np.isfinite(norm):
                raise TrainingDivergedError(step, norm)
            scale = self.learning_rate / used
            if self.clip and norm > self.clip:
                scale *= self.clip / norm
            for k in params:
                params[k] -= scale * grads[k]
        self.params_ = params
        self.loss_curve_ = np.array(curve)
        return self

    def decision_function(self, frames):
        """(T, V) logits for one utterance."""
        check_is_fitted(self, "params_")
        return self._forward(self.params_, self._features(frames))[0]

    def predict_log_proba(self, frames):
        return losses.softmax_log(self.decision_function(frames))

    def predict(self, X):
        """Greedy token sequences, one per frame matrix."""
        return [greedy_decode(self.predict_log_proba(x), self.blank_id).tokens for x in X]

    def score(self, X, y):
        """Negative mean training loss over the feasible samples."""
        vals = [self._sample_loss(self.decision_function(x), lab).loss for x, lab in zip(X, y)]
        vals = [v for v in vals if np.isfinite(v)]
        return -float(np.mean(vals))


def train(model, data, mode="ctc", spec=None, **opt):
    """Fit ``model`` on ``data`` (a sequence of :class:`SyntheticMixture`).

    ``opt`` may set ``learning_rate``, ``n_steps``, ``batch_size`` and ``clip``.
    Returns the fitted model and its per-step loss curve.
    """
    spec = RiskSpec(lam=0.0) if spec is None else spec
    model.set_params(mode=mode, lam=spec.lam, boundary_b=spec.boundary_b, **opt)
    model.fit([m.frames for m in data], [m.label for m in data])
    return model, model.loss_curve_


@dataclass
class EmissionStats:
    occupancy: np.ndarray  # (n_tokens, T), rows sum to 1
    speakers: np.ndarray   # 1-based speaker of each occupancy row
    centers: dict          # speaker -> mean expected end position / T
    compliance: float
    boundary_b: float


def occupancy_stats(log_post, label, spec, blank_id=0):
    """Where each token's emission ends, and how much of it falls on its speaker's side."""
    spec = spec.resolve(label) if label.speaker_count == 2 else spec
    if spec.boundary_b is None:
        raise ValueError("a boundary is required for labels without two speakers")
    grouped = losses.grouped_posteriors(log_post, label, blank_id)
    n_frames = grouped.log_g.shape[1]
    keep = np.ones(len(label), dtype=bool) if spec.include_sc else ~label.is_sc
    occ = np.exp(grouped.log_g[keep] - grouped.log_likelihood)
    occ /= occ.sum(axis=1, keepdims=True)
    speakers = np.asarray(label.speaker_of_token)[keep]
    pos = frame_positions(n_frames, spec.frame_center)
    early = pos <= spec.boundary_b
    good = np.where(speakers[:, None] == 1, early[None, :], ~early[None, :])
    expected = occ @ pos
    centers = {int(s): float(expected[speakers == s].mean()) for s in np.unique(speakers)}
    compliance = float((occ * good).sum() / occ.sum())
    return EmissionStats(occ, speakers, centers, compliance, spec.boundary_b)


def emission_stats(model, mix, spec):
    return occupancy_stats(model.predict_log_proba(mix.frames), mix.label, spec)


@dataclass(frozen=True)
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    runs: tuple = ({"mode": "ctc", "lambda": 0.0}, {"mode": "sactc", "lambda": 15.0})
    seeds: tuple = (0, 1, 2, 3, 4)
    n_train: int = 64
    n_test: int = 32

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        obj.pop("format_version", None)
        known = {"generator", "model", "optimizer", "runs", "seeds", "n_train", "n_test"}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        gen = GeneratorConfig(**obj.pop("generator", {}))
        runs = tuple(dict(r) for r in obj.pop("runs", cls.runs))
        for r in runs:
            if r.get("mode") not in ("ctc", "sactc"):
                raise ValueError(f"run has invalid mode: {r}")
        seeds = tuple(int(s) for s in obj.pop("seeds", cls.seeds))
        return cls(generator=gen, runs=runs, seeds=seeds, **obj)

    def to_dict(self):
        return {
            "format_version": 1,
            "generator": asdict(self.generator),
            "model": dict(self.model),
            "optimizer": dict(self.optimizer),
            "runs": [dict(r) for r in self.runs],
            "seeds": list(self.seeds),
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


def run_experiment(cfg):
    """Train every (seed, run) pair and measure compliance on held-out mixtures.

    Returns a dict with ``curves`` (keyed by ``(mode, lam, seed)``), per-model
    ``stats`` rows, per-mixture ``by_overlap`` rows and a ``summary``.
    """
    gen = cfg.generator
    curves, stats_rows, overlap_rows = {}, [], []
    for seed in cfg.seeds:
        train_set = make_mixtures(gen, seed, cfg.n_train, split=0)
        test_set = make_mixtures(gen, seed, cfg.n_test, split=1)
        for run in cfg.runs:
            mode, lam = run["mode"], float(run.get("lambda", 0.0))
            model = ToyCTCModel(n_vocab=gen.n_vocab, blank_id=gen.blank_id, random_state=seed,
                                **cfg.model)
            model, curve = train(model, train_set, mode, RiskSpec(lam=lam), **cfg.optimizer)
            curves[(mode, lam, seed)] = curve
            eval_spec = RiskSpec(lam=lam)
            per_mix = [emission_stats(model, mix, eval_spec) for mix in test_set]
            for idx, (mix, st) in enumerate(zip(test_set, per_mix)):
                overlap_rows.append({"seed": seed, "mode": mode, "lambda": lam, "mixture": idx,
                                     "overlap_ratio": mix.overlap, "compliance": st.compliance})
            stats_rows.append({
                "seed": seed, "mode": mode, "lambda": lam,
                "compliance": float(np.mean([s.compliance for s in per_mix])),
                "center_spk1": float(np.mean([s.centers[1] for s in per_mix])),
                "center_spk2": float(np.mean([s.centers[2] for s in per_mix])),
                "final_loss": float(curve[-1]) if len(curve) else float("nan"),
            })
    summary = {}
    for run in cfg.runs:
        mode, lam = run["mode"], float(run.get("lambda", 0.0))
        rows = [r for r in stats_rows if r["mode"] == mode and r["lambda"] == lam]
        summary[f"{mode}_lambda{lam:g}"] = {
            "mode": mode, "lambda": lam,
            "mean_compliance": float(np.mean([r["compliance"] for r in rows])),
            "mean_center_spk1": float(np.mean([r["center_spk1"] for r in rows])),
            "mean_center_spk2": float(np.mean([r["center_spk2"] for r in rows])),
        }
    return {"curves": curves, "stats": stats_rows, "by_overlap": overlap_rows, "summary": summary}
