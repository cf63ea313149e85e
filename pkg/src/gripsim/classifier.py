"""Three-class slip predictor: multinomial logistic regression.

Training is full-batch gradient descent on class-weighted cross-entropy
with an L2 penalty on the weights (bias unpenalized). Class weights are
inverse class frequencies so the rarer slip windows are not drowned out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import CLASSES, CLASS_INDEX, Label, fork_rng, write_csv
from .features import LAYOUT_VERSION, N_FEATURES, FeatureLayout, Normalizer, fit_normalizer

FORMAT = "gripsim-slip-model"


class ModelError(ValueError):
    pass


class LayoutMismatch(ModelError):
    pass


@dataclass(frozen=True)
class SlipModel:
    weights: np.ndarray  # (3, n_features)
    bias: np.ndarray  # (3,)
    normalizer: Normalizer
    layout: FeatureLayout
    tau_f: int
    meta: dict = field(default_factory=dict, compare=False)
    loss_history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __eq__(self, other):
        if not isinstance(other, SlipModel):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights) and np.array_equal(self.bias, other.bias)
                and self.normalizer == other.normalizer and self.layout == other.layout
                and self.tau_f == other.tau_f and self.meta == other.meta)

    @property
    def variant(self) -> str:
        return self.layout.variant

    def check_layout(self, layout: FeatureLayout) -> None:
        if layout != self.layout:
            raise LayoutMismatch(f"model expects features {self.layout}, got {layout}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def class_weights(y: np.ndarray) -> np.ndarray:
    counts = np.bincount(y, minlength=len(CLASSES)).astype(float)
    return len(y) / (len(CLASSES) * counts)


def loss_and_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray, sample_w: np.ndarray,
                  l2: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient."""
    z = X @ W.T + b
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    total_w = sample_w.sum()
    nll = -np.sum(sample_w * logp[np.arange(len(y)), y]) / total_w
    loss = nll + 0.5 * l2 * np.sum(W * W)
    p = np.exp(logp)
    p[np.arange(len(y)), y] -= 1.0
    p *= (sample_w / total_w)[:, None]
    gW = p.T @ X + l2 * W
    gb = p.sum(axis=0)
    return float(loss), gW, gb


def _encode(labels: Sequence[Label | str | int]) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, (int, np.integer)):
            out.append(int(lab))
        else:
            out.append(CLASS_INDEX[Label(lab)])
    return np.asarray(out, dtype=np.int64)


def train(X: np.ndarray, labels: Sequence, layout: FeatureLayout, tau_f: int, *,
          learning_rate: float = 0.1, epochs: int = 500, l2: float = 1e-4, seed: int = 0,
          balanced: bool = True) -> SlipModel:
    X = np.asarray(X, dtype=float)
    y = _encode(labels)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ModelError("features must be (n, d) with one label per row")
    if X.shape[1] != layout.size:
        raise LayoutMismatch(f"features have {X.shape[1]} slots, layout has {layout.size}")
    if not np.all(np.isfinite(X)):
        raise ModelError("non-finite feature values in training set")
    missing = [CLASSES[i].value for i in range(len(CLASSES)) if not np.any(y == i)]
    if missing:
        raise ModelError(f"training set has no examples of class(es): {', '.join(missing)}")

    norm = fit_normalizer(X)
    Xn = norm.apply(X)
    sample_w = class_weights(y)[y] if balanced else np.ones(len(y))
    rng = fork_rng(seed, "classifier/init")
    W = 0.01 * rng.standard_normal((len(CLASSES), X.shape[1]))
    b = np.zeros(len(CLASSES))
    history = []
    for _ in range(epochs):
        loss, gW, gb = loss_and_grad(W, b, Xn, y, sample_w, l2)
        history.append(loss)
        W = W - learning_rate * gW
        b = b - learning_rate * gb
    final, _, _ = loss_and_grad(W, b, Xn, y, sample_w, l2)
    history.append(final)
    meta = {"seed": seed, "epochs": epochs, "learning_rate": learning_rate, "l2": l2,
            "final_loss": final, "n_train": int(len(y))}
    return SlipModel(W, b, norm, layout, tau_f, meta, tuple(history))


def predict_proba(model: SlipModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.layout.size:
        raise LayoutMismatch(f"vector has {X.shape[-1]} slots, model expects {model.layout.size}")
    return softmax(model.normalizer.apply(X) @ model.weights.T + model.bias)


def predict(model: SlipModel, x: np.ndarray, layout: FeatureLayout | None = None) -> tuple[Label, np.ndarray]:
    """Label and class probabilities for one feature vector.

    Passing the vector's ``layout`` guards against feeding one sensor
    variant's features to a model trained on the other.
    """
    if layout is not None:
        model.check_layout(layout)
    p = predict_proba(model, np.asarray(x, dtype=float)[None])[0]
    return CLASSES[int(np.argmax(p))], p


def predict_many(model: SlipModel, X: np.ndarray) -> np.ndarray:
    """Class indices (argmax, first index wins ties)."""
    return np.argmax(predict_proba(model, X), axis=1)


@dataclass(frozen=True)
class ThresholdBaseline:
    """Two cut points on a single feature slot, one class per interval.

    Used as the pressure-only reference the learned model has to beat.
    """

    slot: int
    cuts: tuple[float, float]
    classes: tuple[int, int, int]

    def predict(self, X: np.ndarray) -> np.ndarray:
        v = np.asarray(X, dtype=float)[:, self.slot]
        lo, hi = self.cuts
        c = self.classes
        return np.where(v <= lo, c[0], np.where(v <= hi, c[1], c[2]))


def fit_threshold_baseline(X: np.ndarray, labels: Sequence, slot: int = 0, grid: int = 256) -> ThresholdBaseline:
    """Best training accuracy over cut pairs on a quantile grid.

    For fixed cuts the best class for each interval is its majority class,
    so only the cut pairs need searching.
    """
    v = np.asarray(X, dtype=float)[:, slot]
    y = _encode(labels)
    cuts = np.unique(np.quantile(v, np.linspace(0.0, 1.0, grid)))
    k = len(CLASSES)
    # cum[i, c]: count of class c with value <= cuts[i]
    order = np.argsort(v, kind="stable")
    pos = np.searchsorted(v[order], cuts, side="right")
    onehot = np.zeros((len(y), k))
    onehot[np.arange(len(y)), y[order]] = 1.0
    cum = np.vstack([np.zeros(k), np.cumsum(onehot, axis=0)])[pos]
    total = cum[-1] if pos[-1] == len(y) else onehot.sum(axis=0)
    best, arg = -1.0, (0, 0)
    for i in range(len(cuts)):
        first = cum[i].max()
        mid = (cum[i:] - cum[i]).max(axis=1)
        last = (total - cum[i:]).max(axis=1)
        j = int(np.argmax(mid + last))
        score = first + mid[j] + last[j]
        if score > best:
            best, arg = score, (i, i + j)
    i, j = arg
    classes = (int(np.argmax(cum[i])), int(np.argmax(cum[j] - cum[i])), int(np.argmax(total - cum[j])))
    return ThresholdBaseline(slot, (float(cuts[i]), float(cuts[j])), classes)


# ---------------------------------------------------------------------------
# Evaluation

@dataclass(frozen=True)
class Evaluation:
    confusion: np.ndarray  # rows: true class, cols: predicted
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    support: tuple[int, ...]
    accuracy: float

    def as_rows(self) -> list[dict]:
        rows = [{"class": c.value, "precision": self.precision[i], "recall": self.recall[i],
                 "support": self.support[i]} for i, c in enumerate(CLASSES)]
        return rows

    def recall_of(self, label: Label) -> float:
        return self.recall[CLASS_INDEX[label]]


def confusion_metrics(y_true: Sequence, y_pred: Sequence) -> Evaluation:
    t = _encode(y_true)
    p = _encode(y_pred)
    if len(t) == 0:
        raise ModelError("cannot evaluate on an empty set")
    k = len(CLASSES)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    diag = np.diag(cm)
    precision = tuple(float(diag[i] / predicted[i]) if predicted[i] else 0.0 for i in range(k))
    recall = tuple(float(diag[i] / support[i]) if support[i] else 0.0 for i in range(k))
    return Evaluation(cm, precision, recall, tuple(int(s) for s in support), float(diag.sum() / cm.sum()))


def evaluate(model: SlipModel, X: np.ndarray, labels: Sequence) -> Evaluation:
    return confusion_metrics(labels, predict_many(model, X))


def write_evaluation_csv(ev: Evaluation, path: str | Path) -> None:
    rows = ev.as_rows()
    rows.append({"class": "accuracy", "precision": ev.accuracy, "recall": ev.accuracy, "support": sum(ev.support)})
    write_csv(path, rows, ["class", "precision", "recall", "support"])


def read_evaluation_csv(path: str | Path) -> dict:
    from .core import read_csv
    rows = read_csv(path)
    out = {r["class"]: {"precision": float(r["precision"]), "recall": float(r["recall"]),
                        "support": int(r["support"])} for r in rows}
    return out


# ---------------------------------------------------------------------------
# Persistence

def model_to_dict(model: SlipModel) -> dict:
    return {
        "format": FORMAT,
        "layout_version": model.layout.version,
        "variant": model.layout.variant,
        "tau_h": model.layout.tau_h,
        "tau_f": model.tau_f,
        "classes": [c.value for c in CLASSES],
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "normalizer": {"mean": list(model.normalizer.mean), "std": list(model.normalizer.std)},
        "meta": model.meta,
    }


def save_model(model: SlipModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1, allow_nan=False) + "\n")


def load_model(path: str | Path) -> SlipModel:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model {path}: {exc}") from None
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise ModelError(f"{path} is not a slip model file")
    if d.get("layout_version") != LAYOUT_VERSION:
        raise LayoutMismatch(f"{path} has feature layout version {d.get('layout_version')}, "
                             f"this build uses {LAYOUT_VERSION}")
    try:
        W = np.array(d["weights"], dtype=float)
        b = np.array(d["bias"], dtype=float)
        norm = Normalizer(tuple(d["normalizer"]["mean"]), tuple(d["normalizer"]["std"]))
        layout = FeatureLayout(d["variant"], int(d["tau_h"]), d["layout_version"])
        tau_f = int(d["tau_f"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"corrupt model file {path}: {exc}") from None
    if W.shape != (len(CLASSES), N_FEATURES) or b.shape != (len(CLASSES),) or len(norm.mean) != N_FEATURES:
        raise ModelError(f"corrupt model file {path}: parameter shapes do not match the feature layout")
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise ModelError(f"corrupt model file {path}: non-finite parameters")
    return SlipModel(W, b, norm, layout, tau_f, d.get("meta", {}))
