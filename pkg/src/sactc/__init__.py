"""Speaker-aware CTC: lattice recursions, Bayes-risk losses with exact gradients,
brute-force oracles, decoding, multi-talker scoring and a synthetic testbed."""

from ._validation import InfeasibleAlignmentError
from .decode import Hypothesis, collapse, greedy_decode, split_by_sc
from .lattice import LatticeTables, compute_tables, extend_labels
from .loss import (
    DegenerateRiskError,
    GroupedPosterior,
    LossResult,
    brctc_loss,
    combined_loss,
    ctc_loss,
    grouped_posteriors,
    sactc_loss,
    softmax_log,
)
from .metrics import edit_distance_wer, oa_wer, overlap_ratio, pi_wer, score_records
from .serialize import (
    RiskSpec,
    SerializedLabel,
    SpeakerTranscripts,
    UnsupportedSpeakerCountError,
    risk_weight,
    serialize_sot,
)
from .toylab import ToyCTCModel

__version__ = "0.1.0"

__all__ = [
    "DegenerateRiskError", "GroupedPosterior", "Hypothesis", "InfeasibleAlignmentError",
    "LatticeTables", "LossResult", "RiskSpec", "SerializedLabel", "SpeakerTranscripts",
    "ToyCTCModel", "UnsupportedSpeakerCountError", "brctc_loss", "collapse", "combined_loss",
    "compute_tables", "ctc_loss", "edit_distance_wer", "extend_labels", "greedy_decode",
    "grouped_posteriors", "oa_wer", "overlap_ratio", "pi_wer", "risk_weight", "sactc_loss",
    "score_records", "serialize_sot", "softmax_log", "split_by_sc",
]
