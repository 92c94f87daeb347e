"""Input validation helpers shared by the lattice, loss and estimator code."""

import numpy as np


class InfeasibleAlignmentError(ValueError):
    """Raised when a label sequence cannot be aligned to the given frame count."""

    def __init__(self, n_frames, min_frames):
        self.n_frames = n_frames
        self.min_frames = min_frames
        super().__init__(
            f"{n_frames} frames cannot align the labels; at least {min_frames} are needed"
        )


def check_logits(logits):
    """Return ``logits`` as a finite float64 (T, V) array."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"logits must be 2-D (T, V), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 2:
        raise ValueError(f"logits need T >= 1 and V >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logits contain non-finite entries")
    return arr


def check_log_posteriors(log_post, atol=1e-9):
    """Return ``log_post`` as a (T, V) array of per-frame normalised log-probabilities.

    Entries equal to ``-inf`` (zero probability) are allowed.
    """
    arr = np.asarray(log_post, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 2:
        raise ValueError(f"log posteriors must be (T >= 1, V >= 2), got shape {arr.shape}")
    if np.any(np.isnan(arr)) or np.any(arr == np.inf):
        raise ValueError("log posteriors contain NaN or +inf")
    with np.errstate(divide="ignore"):
        norm = np.logaddexp.reduce(arr, axis=1)
    if not np.all(np.abs(norm) <= atol):
        raise ValueError("log posteriors are not normalised per frame")
    return arr


def check_labels(labels, blank_id, n_vocab=None):
    """Return ``labels`` as a 1-D int array, rejecting empty input and blank ids."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError("labels must be a 1-D token sequence")
    if arr.size == 0:
        raise ValueError("label sequence is empty")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("labels must be integer token ids")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise ValueError("token ids must be nonnegative")
    if np.any(arr == blank_id):
        raise ValueError(f"blank id {blank_id} appears in the label sequence")
    if n_vocab is not None:
        if blank_id >= n_vocab:
            raise ValueError(f"blank id {blank_id} outside vocabulary of size {n_vocab}")
        if np.any(arr >= n_vocab):
            raise ValueError(f"token id {arr.max()} outside vocabulary of size {n_vocab}")
    return arr


def min_frames(labels):
    """Shortest frame count admitting an alignment: U plus adjacent repeats."""
    labels = np.asarray(labels)
    return int(labels.size + np.count_nonzero(labels[1:] == labels[:-1]))
