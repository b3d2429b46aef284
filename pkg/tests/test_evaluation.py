"""ASR evaluation: rule-model oracles, exclusions, determinism, ranking."""

import numpy as np
import pytest

from backdoorlab import datasets, triggers
from backdoorlab.errors import EvaluationError
from backdoorlab.evaluation import evaluate_asr, rank_candidates
from backdoorlab.extraction import TriggerCandidate


class TopLeftRedRule:
    """Predicts class 1 iff the top-left pixel is (close to) pure red."""

    num_classes = 2

    def predict(self, xs, batch_size=None):
        red = ((xs[:, 0, 0, 0] > 0.9) & (xs[:, 0, 0, 1] < 0.1)
               & (xs[:, 0, 0, 2] < 0.1))
        return red.astype(np.int64)


@pytest.fixture(scope="module")
def test_set():
    return datasets.make_synthetic_dataset(25, 2, 8, seed=0,
                                           split=datasets.TEST)


def red_patch(location):
    return triggers.make_color_patch((2, 2), (1.0, 0.0, 0.0),
                                     placement=triggers.FIXED,
                                     location=location)


def test_rule_model_asr_one_and_zero(test_set):
    model = TopLeftRedRule()
    at_origin = evaluate_asr(model, test_set, red_patch((0, 0)), target=1,
                             seed=1)
    assert at_origin.asr == 1.0
    elsewhere = evaluate_asr(model, test_set, red_patch((4, 4)), target=1,
                             seed=1)
    assert elsewhere.asr == 0.0
    assert at_origin.num_evaluated == 25  # non-target images only


def test_target_only_test_set_errors(test_set):
    only_target = test_set.subset(test_set.class_indices(1))
    with pytest.raises(EvaluationError):
        evaluate_asr(TopLeftRedRule(), only_target, red_patch((0, 0)), 1, 0)


def test_report_fields_and_ranges(test_set):
    rep = evaluate_asr(TopLeftRedRule(), test_set, red_patch((0, 0)), 1,
                       seed=3, model_id="m", trigger_id="t")
    assert 0.0 <= rep.asr <= 1.0
    assert 0.0 <= rep.clean_accuracy <= 1.0
    assert sum(rep.histogram) == rep.num_evaluated
    assert rep.placement == triggers.FIXED
    d = rep.to_dict()
    assert d["model_id"] == "m" and d["trigger_id"] == "t"


def test_determinism_with_random_placement(test_set):
    trig = triggers.TriggerSpec(np.ones((2, 2, 3), dtype=np.float32))
    a = evaluate_asr(TopLeftRedRule(), test_set, trig, 1, seed=7)
    b = evaluate_asr(TopLeftRedRule(), test_set, trig, 1, seed=7)
    assert a == b
    c = evaluate_asr(TopLeftRedRule(), test_set, trig, 1, seed=8)
    assert c.seed != a.seed


def test_rank_candidates_ordering(test_set):
    model = TopLeftRedRule()
    cands = [
        TriggerCandidate("color", red_patch((4, 4))),      # never fires
        TriggerCandidate("color", red_patch((0, 0))),      # always fires
        TriggerCandidate("color", triggers.make_color_patch(
            (2, 2), (0.5, 0.5, 0.5), placement=triggers.FIXED,
            location=(0, 0))),                             # wrong color
    ]
    ranked, orig = rank_candidates(model, test_set, cands, target=1, seed=9,
                                   original=red_patch((0, 0)))
    asrs = [rep.asr for _, rep in ranked]
    assert asrs == sorted(asrs, reverse=True)
    assert ranked[0][1].asr == 1.0
    assert orig.asr == 1.0
    # singleton case
    single, none = rank_candidates(model, test_set, cands[:1], 1, seed=9)
    assert len(single) == 1 and none is None
    # ordering consistent with independently recomputed ASRs
    for cand, rep in ranked:
        again = evaluate_asr(model, test_set, cand.trigger, 1, seed=9)
        assert again.asr == rep.asr
