"""Attack-success-rate measurement and candidate ranking.

ASR is the fraction of non-target-class test images that the *base*
classifier sends to the target class once the trigger is applied
(smoothing is an analysis instrument, never the victim).  Random
placements draw once per image from a seed-derived stream, so a report
is reproducible from (model, trigger, test set, seed).
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EvaluationError
from .triggers import apply_trigger_batch
from .util import derive_seed


@dataclass
class EvalReport:
    model_id: str
    trigger_id: str
    target_class: int
    asr: float
    clean_accuracy: float
    num_evaluated: int
    histogram: list  # predictions on triggered non-target images, per class
    placement: str
    seed: int

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def evaluate_asr(model, test, trigger, target, seed=0, model_id="",
                 trigger_id=""):
    """Apply the trigger to every non-target test image and measure ASR;
    clean accuracy comes from the unmodified full test set."""
    nontarget = np.flatnonzero(test.labels != target)
    if len(nontarget) == 0:
        raise EvaluationError("test set has no non-target-class images")
    patched, _ = apply_trigger_batch(test.images[nontarget], trigger,
                                     rng_seed=derive_seed(seed, "eval-place"))
    preds = model.predict(patched)
    asr = float((preds == target).mean())
    clean_acc = float((model.predict(test.images) == test.labels).mean())
    return EvalReport(
        model_id=model_id,
        trigger_id=trigger_id,
        target_class=int(target),
        asr=asr,
        clean_accuracy=clean_acc,
        num_evaluated=int(len(nontarget)),
        histogram=np.bincount(preds, minlength=test.num_classes).tolist(),
        placement=trigger.placement,
        seed=int(seed),
    )


def rank_candidates(model, test, candidates, target, seed=0, original=None,
                    model_id=""):
    """Evaluate every candidate under a shared seed and sort by ASR
    (descending).  Returns (ranked list of (candidate, report),
    original-trigger report or None)."""
    scored = []
    for i, cand in enumerate(candidates):
        report = evaluate_asr(model, test, cand.trigger, target, seed=seed,
                              model_id=model_id,
                              trigger_id=cand.trigger.name or f"cand-{i}")
        scored.append((cand, report))
    scored.sort(key=lambda cr: -cr[1].asr)
    original_report = None
    if original is not None:
        original_report = evaluate_asr(model, test, original, target,
                                       seed=seed, model_id=model_id,
                                       trigger_id=original.name or "original")
    return scored, original_report
