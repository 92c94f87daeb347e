import json
import math

import numpy as np
import pytest

from sactc.serialize import (
    RiskSpec,
    SerializedLabel,
    SpeakerTranscripts,
    UnsupportedSpeakerCountError,
    boundary_ratio,
    frame_positions,
    load_label_file,
    parse_label_json,
    risk_weight,
    risk_weights,
    serialize_sot,
)


def test_two_speakers_joined_by_sc():
    lab = serialize_sot([[1, 2], [4]], sc_id=5)
    assert lab.tokens == (1, 2, 5, 4)
    assert lab.speaker_of_token == (1, 1, 1, 2)
    assert lab.per_speaker_counts == (2, 1)
    assert lab.is_sc.tolist() == [False, False, True, False]
    assert lab.deserialize() == [(1, 2), (4,)]


def test_fifo_order_uses_start_times():
    tr = SpeakerTranscripts(per_speaker=[[1], [2]], start_times=[3.0, 0.5])
    lab = serialize_sot(tr, sc_id=9)
    assert lab.tokens == (2, 9, 1)


def test_fifo_ties_keep_input_order():
    tr = SpeakerTranscripts(per_speaker=[[1], [2]], start_times=[1.0, 1.0])
    assert serialize_sot(tr, sc_id=9).tokens == (1, 9, 2)


def test_single_speaker_has_no_sc():
    lab = serialize_sot([[3, 3]], sc_id=7)
    assert lab.tokens == (3, 3)
    assert lab.speaker_count == 1


def test_three_speakers_serialize_but_no_boundary():
    lab = serialize_sot([[1], [2], [3]], sc_id=4)
    assert lab.tokens == (1, 4, 2, 4, 3)
    with pytest.raises(UnsupportedSpeakerCountError):
        boundary_ratio(lab)


def test_rejects_reserved_ids_and_empty_speaker():
    with pytest.raises(ValueError):
        serialize_sot([[1, 5], [2]], sc_id=5)
    with pytest.raises(ValueError):
        serialize_sot([[1, 0], [2]], sc_id=5)
    with pytest.raises(ValueError):
        serialize_sot([[1], []], sc_id=5)
    with pytest.raises(ValueError):
        serialize_sot([[1], [2]], sc_id=0)


def test_label_invariants_checked():
    with pytest.raises(ValueError):
        SerializedLabel(tokens=(1, 2), speaker_of_token=(1, 2), sc_id=5)
    with pytest.raises(ValueError):
        SerializedLabel(tokens=(1, 5, 2), speaker_of_token=(1, 1, 2), sc_id=5,
                        per_speaker_counts=(2, 1))


def test_boundary_ratio_from_counts():
    assert boundary_ratio(serialize_sot([[1, 1, 2], [3]], sc_id=4)) == 0.75


def test_risk_weight_worked_value():
    # lambda 15, b 0.5, speaker 1, t/T = 0.25 -> 1 / (1 + exp(-3.75))
    spec = RiskSpec(lam=15.0, boundary_b=0.5)
    w = risk_weight(spec, 1, 1, 4)
    assert w == pytest.approx(0.9770226300899744, abs=1e-15)
    assert w == pytest.approx(1 / (1 + math.exp(-3.75)), abs=1e-15)
    assert risk_weight(spec, 2, 1, 4) == pytest.approx(1 - w, abs=1e-15)


def test_lambda_zero_is_flat_half():
    spec = RiskSpec(lam=0.0, boundary_b=0.3)
    for s in (1, 2):
        np.testing.assert_array_equal(risk_weights(spec, s, 7), np.full(7, 0.5))


def test_weights_monotone_and_bounded():
    spec = RiskSpec(lam=20.0, boundary_b=0.4)
    w1, w2 = risk_weights(spec, 1, 50), risk_weights(spec, 2, 50)
    assert np.all(np.diff(w1) < 0) and np.all(np.diff(w2) > 0)
    assert np.all((w1 > 0) & (w1 < 1))
    np.testing.assert_allclose(w1 + w2, 1.0, atol=1e-15)


def test_extreme_lambda_does_not_overflow():
    w = risk_weights(RiskSpec(lam=1e6, boundary_b=0.5), 1, 10)
    assert np.all(np.isfinite(w))
    assert w[0] == 1.0 and w[-1] == 0.0


def test_frame_positions():
    np.testing.assert_allclose(frame_positions(4), [0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(frame_positions(4, center=True), [0.125, 0.375, 0.625, 0.875])


def test_risk_weight_frame_range():
    with pytest.raises(ValueError):
        risk_weight(RiskSpec(boundary_b=0.5), 1, 0, 4)


def test_resolve_fills_boundary():
    lab = serialize_sot([[1], [2, 2, 2]], sc_id=4)
    assert RiskSpec().resolve(lab).boundary_b == 0.25
    assert RiskSpec(boundary_b=0.6).resolve(lab).boundary_b == 0.6


@pytest.mark.parametrize("kwargs", [{"lam": -1.0}, {"boundary_b": 1.0}, {"boundary_b": 0.0},
                                    {"normalize": "token"}])
def test_risk_spec_validation(kwargs):
    with pytest.raises(ValueError):
        RiskSpec(**kwargs)


def test_risk_spec_three_speakers_unsupported():
    with pytest.raises(UnsupportedSpeakerCountError):
        RiskSpec(speaker_count=3)


def test_label_file_round_trip(tmp_path):
    obj = {"vocab": ["<b>", "hi", "yo", "<sc>"], "blank_id": 0, "sc_id": 3,
           "speakers": [["yo"], ["hi", "hi"]], "start_times": [1.0, 0.0]}
    path = tmp_path / "lab.json"
    path.write_text(json.dumps(obj))
    lf = load_label_file(path)
    assert lf.n_vocab == 4
    assert lf.label.tokens == (1, 1, 3, 2)


@pytest.mark.parametrize("broken", [
    {"vocab": ["<b>", "x"], "blank_id": 0, "sc_id": 1},
    {"vocab": ["<b>", "x", "x"], "blank_id": 0, "sc_id": 2, "speakers": [["x"]]},
    {"vocab": ["<b>", "x", "<sc>"], "blank_id": 0, "sc_id": 7, "speakers": [["x"]]},
    {"vocab": ["<b>", "x", "<sc>"], "blank_id": 0, "sc_id": 2, "speakers": [["zz"]]},
    [1, 2],
])
def test_label_file_schema_errors(broken):
    with pytest.raises(ValueError):
        parse_label_json(broken)


def test_weight_at_boundary_is_half():
    spec = RiskSpec(lam=40.0, boundary_b=0.5)
    assert risk_weight(spec, 1, 4, 8) == 0.5 and risk_weight(spec, 2, 4, 8) == 0.5


@pytest.mark.parametrize("m,n,b", [(3, 1, 0.75), (2, 2, 0.5), (1, 3, 0.25)])
def test_boundary_ratio_table(m, n, b):
    assert boundary_ratio(serialize_sot([[1] * m, [2] * n], sc_id=3)) == b
