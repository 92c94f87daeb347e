"""Collapse function and greedy (best-path) CTC decoding."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple
    trace: tuple


def collapse(path, blank_id=0):
    """Merge repeated consecutive tokens, then drop blanks."""
    out = []
    prev = None
    for tok in path:
        tok = int(tok)
        if tok != prev:
            out.append(tok)
        prev = tok
    return tuple(tok for tok in out if tok != blank_id)


def greedy_decode(log_post, blank_id=0):
    """Per-frame argmax (ties go to the lowest id) followed by :func:`collapse`."""
    trace = tuple(int(k) for k in np.argmax(np.asarray(log_post), axis=1))
    return Hypothesis(tokens=collapse(trace, blank_id), trace=trace)


def split_by_sc(tokens, sc_id):
    """Split a token stream at speaker-change tokens, keeping empty segments."""
    if isinstance(tokens, Hypothesis):
        tokens = tokens.tokens
    segments = [[]]
    for tok in tokens:
        if tok == sc_id:
            segments.append([])
        else:
            segments[-1].append(tok)
    return [tuple(seg) for seg in segments]
