"""Softmax scoring of the reference split and IQR-based low-confidence selection.

The threshold is the lower outlier boundary gamma = Q1 - 1.5 * IQR of the
per-sample true-class confidences, with quartiles computed by linear
interpolation at position p * (n - 1).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .datasets import LabeledSet
from .errors import InvalidInputError
from .models import ClassifierModel, forward_logits
from . import storage

log = logging.getLogger(__name__)

EMPTY_FALLBACK_FRACTION = 0.05


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise InvalidInputError("softmax input must be non-empty")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax input must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _quantile(sorted_scores: np.ndarray, p: float) -> float:
    pos = p * (len(sorted_scores) - 1)
    lo = int(math.floor(pos))
    hi = int(math.ceil(pos))
    frac = pos - lo
    return float(sorted_scores[lo] + frac * (sorted_scores[hi] - sorted_scores[lo]))


def compute_threshold(scores) -> tuple[float, float, float]:
    """Returns (Q1, IQR, gamma) with gamma = Q1 - 1.5 * IQR."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise InvalidInputError("cannot compute a threshold from empty scores")
    s = np.sort(scores)
    q1 = _quantile(s, 0.25)
    q3 = _quantile(s, 0.75)
    iqr = q3 - q1
    return q1, iqr, q1 - 1.5 * iqr


def true_class_confidences(model: ClassifierModel, d_ref: LabeledSet,
                           mode: str = "true-class", batch_size: int = 256) -> np.ndarray:
    """Per-sample softmax confidence, in D_REF order.

    mode "true-class" reads the probability of the labeled class; "max-prob"
    reads the predicted class's probability instead.
    """
    if len(d_ref) == 0:
        raise InvalidInputError("D_REF must be non-empty")
    if mode not in ("true-class", "max-prob"):
        raise InvalidInputError(f"unknown confidence mode {mode!r}")
    out = np.empty(len(d_ref))
    for start in range(0, len(d_ref), batch_size):
        stop = min(start + batch_size, len(d_ref))
        probs = softmax(forward_logits(model, d_ref.images[start:stop]))
        if mode == "true-class":
            out[start:stop] = probs[np.arange(stop - start), d_ref.labels[start:stop]]
        else:
            out[start:stop] = probs.max(axis=1)
    return out


def select_low_confidence(d_ref: LabeledSet, scores, gamma: float) -> LabeledSet:
    """Samples with score <= gamma, order and labels preserved."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(d_ref),):
        raise InvalidInputError(f"scores length {scores.shape} does not match D_REF size {len(d_ref)}")
    return d_ref.take(np.flatnonzero(scores <= gamma))


@dataclass(frozen=True)
class FilterReport:
    sample_ids: np.ndarray
    true_labels: np.ndarray
    predicted_labels: np.ndarray
    confidences: np.ndarray
    q1: float
    iqr: float
    gamma: float
    selected_ids: np.ndarray
    fallback_used: bool = False
    mode: str = "true-class"

    def to_dict(self):
        return {
            "schema_version": storage.SCHEMA_VERSION,
            "mode": self.mode,
            "q1": self.q1,
            "iqr": self.iqr,
            "gamma": self.gamma,
            "fallback_used": self.fallback_used,
            "selected_ids": [int(i) for i in self.selected_ids],
            "samples": [
                {
                    "id": int(self.sample_ids[i]),
                    "true_label": int(self.true_labels[i]),
                    "predicted_label": int(self.predicted_labels[i]),
                    "confidence": float(self.confidences[i]),
                }
                for i in range(len(self.sample_ids))
            ],
        }

    @staticmethod
    def from_dict(d):
        samples = d["samples"]
        return FilterReport(
            sample_ids=np.array([s["id"] for s in samples], dtype=np.int64),
            true_labels=np.array([s["true_label"] for s in samples], dtype=np.int64),
            predicted_labels=np.array([s["predicted_label"] for s in samples], dtype=np.int64),
            confidences=np.array([s["confidence"] for s in samples]),
            q1=d["q1"],
            iqr=d["iqr"],
            gamma=d["gamma"],
            selected_ids=np.array(d["selected_ids"], dtype=np.int64),
            fallback_used=d["fallback_used"],
            mode=d["mode"],
        )


def filter_low_confidence(model: ClassifierModel, d_ref: LabeledSet,
                          mode: str = "true-class") -> tuple[LabeledSet, FilterReport]:
    """Score D_REF, derive gamma, and select the low-confidence subset.

    When nothing falls at or below gamma (a very confident model), falls back
    to the lowest-confidence ceil(5%) of D_REF so the downstream VAE has a
    non-empty seed set; the report flags this prominently.
    """
    scores = true_class_confidences(model, d_ref, mode=mode)
    preds = forward_logits(model, d_ref.images).argmax(axis=1)
    q1, iqr, gamma = compute_threshold(scores)
    selected = select_low_confidence(d_ref, scores, gamma)
    fallback = False
    if len(selected) == 0:
        fallback = True
        k = math.ceil(EMPTY_FALLBACK_FRACTION * len(d_ref))
        order = np.lexsort((d_ref.ids, scores))  # ties broken by id for determinism
        selected = d_ref.take(np.sort(order[:k]))
        log.warning(
            "no sample fell below gamma=%.6f; falling back to the %d lowest-confidence samples",
            gamma, k,
        )
    report = FilterReport(
        sample_ids=d_ref.ids.copy(),
        true_labels=d_ref.labels.copy(),
        predicted_labels=preds,
        confidences=scores,
        q1=q1,
        iqr=iqr,
        gamma=gamma,
        selected_ids=selected.ids.copy(),
        fallback_used=fallback,
        mode=mode,
    )
    return selected, report


def plot_confidence_histogram(report: FilterReport, path) -> None:
    """Histogram of reference confidences with the gamma boundary marked."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(report.confidences, bins=30, color="steelblue", edgecolor="black")
    ax.axvline(report.gamma, color="crimson", linestyle="--",
               label=f"gamma = {report.gamma:.4f}")
    ax.set_xlabel("true-class confidence" if report.mode == "true-class" else "max-prob confidence")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
