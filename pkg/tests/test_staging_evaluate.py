from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodestage.errors import InputError, ParameterError
from nodestage.evaluate import ConfusionMatrix, score_patients, weighted_kappa
from nodestage.labels import PNStage, SlideLabel
from nodestage.staging import stage_patient

from oracles import kappa_double_loop, stage_rule_table

N, I, MI, MA = SlideLabel.NEGATIVE, SlideLabel.ITC, SlideLabel.MICRO, SlideLabel.MACRO


@pytest.mark.parametrize("labels,stage", [
    ([N, N, N, N, N], "pN0"),
    ([I, N, N, N, N], "pN0(i+)"),
    ([MI, I, N, N, N], "pN1mi"),
    ([MA, MI, N, N, N], "pN1"),
    ([MA, MA, MI, MI, N], "pN2"),
])
def test_worked_examples(labels, stage):
    assert stage_patient(labels).text == stage


def test_all_tuples_match_rule_table():
    for combo in product(list(SlideLabel), repeat=5):
        assert stage_patient(combo).text == stage_rule_table([l.text for l in combo])


def test_itc_not_positive():
    assert stage_patient([MA, MI, MI, I, I]) is PNStage.PN1


def test_staging_errors():
    with pytest.raises(ParameterError):
        stage_patient([])
    with pytest.raises(ParameterError):
        stage_patient([N] * 6)


def test_stage_text_round_trip():
    for s in PNStage:
        assert PNStage.parse(s.text) is s


def test_kappa_examples():
    assert weighted_kappa(ConfusionMatrix(np.diag([3, 1, 4, 1, 5]), list("abcde"))) == 1.0
    assert weighted_kappa(ConfusionMatrix(np.array([[1, 1], [1, 1]]), ["a", "b"])) == 0.0
    with pytest.raises(ParameterError):
        weighted_kappa(ConfusionMatrix(np.zeros((3, 3), int), ["a", "b", "c"]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kappa_matches_oracle(seed):
    counts = np.random.default_rng(seed).integers(0, 20, (5, 5))
    counts[0, 0] += 1
    ours = weighted_kappa(ConfusionMatrix(counts, list("abcde")))
    assert abs(ours - kappa_double_loop(counts.tolist())) <= 1e-12


def test_linear_weights_differ():
    cm = ConfusionMatrix(np.array([[5, 2, 0], [1, 4, 3], [0, 2, 6]]), list("abc"))
    assert weighted_kappa(cm, "linear") != weighted_kappa(cm)


def test_score_patients():
    stages = list(PNStage)
    truth = {f"p{i}": stages[i % 5] for i in range(20)}
    kappa, cm = score_patients(dict(truth), truth)
    assert kappa == 1.0 and cm.counts.shape == (5, 5)
    const = {k: PNStage.PN0 for k in truth}
    assert score_patients(const, truth)[0] <= 0
    pred = {k: stages[(i * 3) % 5] for i, k in enumerate(truth)}
    assert score_patients(pred, truth)[0] == pytest.approx(score_patients(truth, pred)[0], abs=1e-15)
    with pytest.raises(InputError):
        score_patients({"p0": PNStage.PN0}, truth)


def test_confusion_text_alignment():
    cm = ConfusionMatrix(np.array([[10, 0], [2, 7]]), ["neg", "pos"])
    lines = cm.to_text().splitlines()
    assert len({len(l) for l in lines}) == 1
    assert cm.recall().tolist() == [1.0, 7 / 9]
