"""Serialized (SOT) multi-talker labels and the speaker-aware risk weights.

Speakers are ordered first-in-first-out by start time and their transcripts are
joined with a speaker-change token.  The risk is stored as a positive weight in
(0, 1): speaker 1 is favoured at frames before the boundary ``b * T``, speaker 2
after it.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np


class UnsupportedSpeakerCountError(ValueError):
    pass


@dataclass(frozen=True)
class SpeakerTranscripts:
    per_speaker: tuple
    start_times: tuple = None

    def __post_init__(self):
        per_speaker = tuple(tuple(int(tok) for tok in seq) for seq in self.per_speaker)
        if not per_speaker:
            raise ValueError("at least one speaker is required")
        if any(len(seq) == 0 for seq in per_speaker):
            raise ValueError("every speaker needs a nonempty transcript")
        object.__setattr__(self, "per_speaker", per_speaker)
        if self.start_times is not None:
            starts = tuple(float(s) for s in self.start_times)
            if len(starts) != len(per_speaker):
                raise ValueError("start_times must have one entry per speaker")
            object.__setattr__(self, "start_times", starts)

    def fifo_order(self):
        """Speaker indices sorted by start time; ties keep list order."""
        if self.start_times is None:
            return list(range(len(self.per_speaker)))
        return sorted(range(len(self.per_speaker)), key=lambda i: self.start_times[i])


@dataclass(frozen=True)
class SerializedLabel:
    """SOT token stream plus the speaker bookkeeping the risk needs.

    ``speaker_of_token`` is 1-based; a speaker-change token carries the index
    of the speaker it terminates.
    """

    tokens: tuple
    speaker_of_token: tuple
    sc_id: int
    per_speaker_counts: tuple = field(default=None)

    def __post_init__(self):
        tokens = tuple(int(t) for t in self.tokens)
        spk = tuple(int(s) for s in self.speaker_of_token)
        if not tokens:
            raise ValueError("serialized label is empty")
        if len(spk) != len(tokens):
            raise ValueError("speaker_of_token must match tokens in length")
        if spk[0] != 1 or any(b - a not in (0, 1) for a, b in zip(spk, spk[1:])):
            raise ValueError("speaker_of_token must start at 1 and increase by at most 1")
        n_spk = spk[-1]
        n_sc = sum(t == self.sc_id for t in tokens)
        if n_sc != n_spk - 1:
            raise ValueError(f"expected {n_spk - 1} speaker-change tokens, found {n_sc}")
        for i, tok in enumerate(tokens):
            if tok == self.sc_id:
                if i + 1 >= len(tokens) or spk[i + 1] != spk[i] + 1:
                    raise ValueError("speaker-change token must end its speaker's segment")
        counts = tuple(
            sum(1 for t, s in zip(tokens, spk) if s == k and t != self.sc_id)
            for k in range(1, n_spk + 1)
        )
        if self.per_speaker_counts is not None and tuple(self.per_speaker_counts) != counts:
            raise ValueError(f"per_speaker_counts {self.per_speaker_counts} != {counts}")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "speaker_of_token", spk)
        object.__setattr__(self, "per_speaker_counts", counts)

    @property
    def speaker_count(self):
        return self.speaker_of_token[-1]

    @property
    def is_sc(self):
        return np.array([t == self.sc_id for t in self.tokens])

    def __len__(self):
        return len(self.tokens)

    def deserialize(self):
        """Per-speaker token lists, splitting at the speaker-change tokens."""
        out = [[] for _ in range(self.speaker_count)]
        for tok, s in zip(self.tokens, self.speaker_of_token):
            if tok != self.sc_id:
                out[s - 1].append(tok)
        return [tuple(seq) for seq in out]

    @classmethod
    def single_speaker(cls, tokens, sc_id):
        tokens = tuple(tokens)
        return cls(tokens=tokens, speaker_of_token=(1,) * len(tokens), sc_id=sc_id)


def serialize_sot(transcripts, sc_id, blank_id=0):
    """Concatenate speaker transcripts (FIFO order) with single ``sc_id`` separators."""
    if not isinstance(transcripts, SpeakerTranscripts):
        transcripts = SpeakerTranscripts(per_speaker=transcripts)
    if sc_id == blank_id:
        raise ValueError("speaker-change id must differ from the blank id")
    tokens, spk = [], []
    order = transcripts.fifo_order()
    for rank, idx in enumerate(order, start=1):
        seq = transcripts.per_speaker[idx]
        if sc_id in seq or blank_id in seq:
            raise ValueError("transcripts must not contain the blank or speaker-change id")
        if rank > 1:
            tokens.append(sc_id)
            spk.append(rank - 1)
        tokens.extend(seq)
        spk.extend([rank] * len(seq))
    return SerializedLabel(tokens=tuple(tokens), speaker_of_token=tuple(spk), sc_id=sc_id)


def boundary_ratio(label):
    """``M / (M + N)`` from the two speakers' token counts."""
    if label.speaker_count != 2:
        raise UnsupportedSpeakerCountError(
            f"boundary ratio is defined for 2 speakers, got {label.speaker_count}"
        )
    m, n = label.per_speaker_counts
    return m / (m + n)


@dataclass(frozen=True)
class RiskSpec:
    """Speaker-aware risk configuration.

    Attributes:
        lam: sigmoid sharpness (risk factor); 0 gives uniform weights.
        boundary_b: speaker boundary as a fraction of T; ``None`` derives it
            from the label's token counts.
        speaker_count: only 2 is supported.
        include_sc: also constrain speaker-change tokens, using the risk of
            the speaker they terminate.
        normalize: ``"speaker"`` averages each speaker's tokens by that
            speaker's own count; ``"global"`` divides by the full label length.
        frame_center: position frames at ``(t - 0.5) / T`` instead of ``t / T``.
    """

    lam: float = 15.0
    boundary_b: float = None
    speaker_count: int = 2
    include_sc: bool = False
    normalize: str = "speaker"
    frame_center: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.boundary_b is not None and not 0.0 < self.boundary_b < 1.0:
            raise ValueError(f"boundary_b must lie in (0, 1), got {self.boundary_b}")
        if self.speaker_count != 2:
            raise UnsupportedSpeakerCountError("only two-speaker risks are supported")
        if self.normalize not in ("speaker", "global"):
            raise ValueError(f"unknown normalization {self.normalize!r}")

    def resolve(self, label):
        """Copy with ``boundary_b`` filled in from ``label`` when unset."""
        if label.speaker_count != self.speaker_count:
            raise UnsupportedSpeakerCountError(
                f"label has {label.speaker_count} speakers, risk expects {self.speaker_count}"
            )
        if self.boundary_b is not None:
            return self
        return replace(self, boundary_b=boundary_ratio(label))


def frame_positions(n_frames, center=False):
    """Normalised frame positions for 1-based frames ``t = 1..T``."""
    t = np.arange(1, n_frames + 1, dtype=np.float64)
    if center:
        t -= 0.5
    return t / n_frames


def _sigmoid(x):
    # overflow-free logistic
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def risk_weights(spec, speaker, n_frames):
    """Weights ``w(s, t)`` for all 1-based frames ``t = 1..T`` as a length-T array."""
    if spec.boundary_b is None:
        raise ValueError("risk spec has no boundary; call spec.resolve(label) first")
    if speaker not in (1, 2):
        raise UnsupportedSpeakerCountError(f"speaker index must be 1 or 2, got {speaker}")
    arg = spec.lam * (frame_positions(n_frames, spec.frame_center) - spec.boundary_b)
    return _sigmoid(-arg if speaker == 1 else arg)


def risk_weight(spec, s, t, n_frames):
    """Scalar ``w(s, t)`` for a 1-based frame ``t``."""
    if not 1 <= t <= n_frames:
        raise ValueError(f"frame {t} outside 1..{n_frames}")
    return float(risk_weights(spec, s, n_frames)[t - 1])


def _token_index(vocab, tok):
    try:
        return vocab.index(tok)
    except ValueError:
        raise ValueError(f"token {tok!r} not in vocabulary") from None


@dataclass(frozen=True)
class LabelFile:
    vocab: tuple
    blank_id: int
    sc_id: int
    label: SerializedLabel

    @property
    def n_vocab(self):
        return len(self.vocab)


def parse_label_json(obj):
    """Validate a label-file object and serialize its speakers."""
    if not isinstance(obj, dict):
        raise ValueError("label file must hold a JSON object")
    for key in ("vocab", "blank_id", "sc_id", "speakers"):
        if key not in obj:
            raise ValueError(f"label file is missing {key!r}")
    vocab = list(obj["vocab"])
    if len(set(vocab)) != len(vocab) or not all(isinstance(v, str) for v in vocab):
        raise ValueError("vocab must be a list of distinct strings")
    blank_id, sc_id = obj["blank_id"], obj["sc_id"]
    for name, val in (("blank_id", blank_id), ("sc_id", sc_id)):
        if not isinstance(val, int) or not 0 <= val < len(vocab):
            raise ValueError(f"{name} must be an index into vocab")
    speakers = obj["speakers"]
    if not isinstance(speakers, list) or not speakers:
        raise ValueError("speakers must be a nonempty list")
    per_speaker = []
    for seq in speakers:
        if not isinstance(seq, list):
            raise ValueError("each speaker transcript must be a list of token strings")
        per_speaker.append([_token_index(vocab, tok) for tok in seq])
    starts = obj.get("start_times")
    transcripts = SpeakerTranscripts(per_speaker=per_speaker, start_times=starts)
    label = serialize_sot(transcripts, sc_id=sc_id, blank_id=blank_id)
    return LabelFile(vocab=tuple(vocab), blank_id=blank_id, sc_id=sc_id, label=label)


def load_label_file(path):
    with open(path, encoding="utf-8") as fh:
        return parse_label_json(json.load(fh))

