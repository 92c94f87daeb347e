"""Multi-talker ASR scoring: WER, permutation-invariant WER, overlap bins and OA-WER."""

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

BINS = ("single", "low", "mid", "high")
OVERLAP_BINS = ("low", "mid", "high")
MAX_PI_SPEAKERS = 6


class EditCounts(NamedTuple):
    errors: int
    ref_len: int

    @property
    def empty_reference(self):
        return self.ref_len == 0

    @property
    def wer(self):
        # an empty reference scores its insertions against a length of 1
        return self.errors / max(self.ref_len, 1)


def edit_distance_wer(ref, hyp):
    """Levenshtein word errors (sub + ins + del) and reference length."""
    ref, hyp = list(ref), list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return EditCounts(prev[-1], len(ref))


def _pad(seqs, n):
    return list(seqs) + [()] * (n - len(seqs))


def pi_errors(refs, hyps, max_speakers=MAX_PI_SPEAKERS):
    """Best speaker permutation: ``(errors, ref_len, perm)`` with ``perm[i]`` the hyp for ref ``i``."""
    n = max(len(refs), len(hyps))
    if n > max_speakers:
        raise ValueError(f"{n} streams exceed the permutation budget of {max_speakers}")
    refs, hyps = _pad(refs, n), _pad(hyps, n)
    cost = np.array([[edit_distance_wer(r, h).errors for h in hyps] for r in refs])
    best = min(itertools.permutations(range(n)), key=lambda p: cost[range(n), p].sum())
    ref_len = sum(len(r) for r in refs)
    return int(cost[range(n), best].sum()), ref_len, best


def pi_wer(refs, hyps, max_speakers=MAX_PI_SPEAKERS):
    errors, ref_len, _ = pi_errors(refs, hyps, max_speakers)
    return errors / max(ref_len, 1)


def identity_errors(refs, hyps):
    n = max(len(refs), len(hyps))
    refs, hyps = _pad(refs, n), _pad(hyps, n)
    counts = [edit_distance_wer(r, h) for r, h in zip(refs, hyps)]
    return sum(c.errors for c in counts), sum(c.ref_len for c in counts)


@dataclass(frozen=True)
class Utterance:
    words: tuple
    start: float
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("utterance duration must be positive")

    @property
    def end(self):
        return self.start + self.duration


def overlap_ratio(spans):
    """Time covered by two or more spans over time covered by at least one.

    ``spans`` holds :class:`Utterance` objects or ``(start, duration)`` pairs.
    """
    spans = [(u.start, u.duration) if isinstance(u, Utterance) else tuple(u) for u in spans]
    if not spans:
        raise ValueError("need at least one utterance")
    events = []
    for start, dur in spans:
        events.append((start, 1))
        events.append((start + dur, -1))
    events.sort(key=lambda e: (e[0], e[1]))
    covered = overlapped = 0.0
    active = 0
    last = events[0][0]
    for time, delta in events:
        width = time - last
        if active >= 1:
            covered += width
        if active >= 2:
            overlapped += width
        active += delta
        last = time
    return overlapped / covered if covered > 0 else 0.0


def bin_overlap(ratio):
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"overlap ratio {ratio} outside [0, 1]")
    if ratio == 0.0:
        return "single"
    if ratio <= 0.2:
        return "low"
    if ratio <= 0.5:
        return "mid"
    return "high"


def oa_wer(per_bin_wers):
    """Unweighted mean of the low/mid/high bin WERs."""
    missing = [b for b in OVERLAP_BINS if b not in per_bin_wers]
    if missing:
        raise KeyError(f"missing overlap bins: {missing}")
    return float(np.mean([per_bin_wers[b] for b in OVERLAP_BINS]))


@dataclass(frozen=True)
class MixtureRecord:
    id: str
    refs: Sequence
    hyps: Sequence
    timings: Sequence

    @classmethod
    def from_json(cls, obj):
        for key in ("id", "refs", "hyps", "timings"):
            if key not in obj:
                raise ValueError(f"record missing {key!r}")
        refs = [tuple(map(str, r)) for r in obj["refs"]]
        hyps = [tuple(map(str, h)) for h in obj["hyps"]]
        timings = [Utterance((), float(t["start"]), float(t["duration"])) for t in obj["timings"]]
        if not timings:
            raise ValueError(f"record {obj['id']!r} has no timings")
        return cls(str(obj["id"]), refs, hyps, timings)


def score_records(records):
    """Pool errors over records: overall (given order), PI-WER, per-bin PI-WER and OA-WER."""
    pooled = {b: [0, 0, 0] for b in BINS}  # errors, ref words, records
    ident = [0, 0]
    pi = [0, 0]
    for rec in records:
        e, n = identity_errors(rec.refs, rec.hyps)
        ident[0] += e
        ident[1] += n
        pe, pn, _ = pi_errors(rec.refs, rec.hyps)
        pi[0] += pe
        pi[1] += pn
        slot = pooled[bin_overlap(overlap_ratio(rec.timings))]
        slot[0] += pe
        slot[1] += pn
        slot[2] += 1
    bins = {
        b: {"wer": (v[0] / v[1] if v[1] else None), "errors": v[0], "ref_words": v[1], "n": v[2]}
        for b, v in pooled.items()
    }
    have_all = all(bins[b]["wer"] is not None for b in OVERLAP_BINS)
    return {
        "overall_wer": ident[0] / max(ident[1], 1),
        "pi_wer": pi[0] / max(pi[1], 1),
        "bins": bins,
        "oa_wer": oa_wer({b: bins[b]["wer"] for b in OVERLAP_BINS}) if have_all else None,
    }
