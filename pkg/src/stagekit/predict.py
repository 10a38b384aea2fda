"""Stage 4: prediction heads — linear classifiers and small decoder nets."""

from dataclasses import dataclass, field

import numpy as np

from . import loaddata
from .nnkernel import Dense, Net, Relu
from .utils import RngStream

_CLASSIFIER_KINDS = ("logistic", "linear_svm")


@dataclass
class LinearClassifier:
    """Binary linear model: score = w . x + b, class 1 iff score > 0."""

    kind: str
    w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b: float = 0.0
    lam: float = 0.0
    fitted: bool = False


def linear_classifier_loss(clf: LinearClassifier, features, labels) -> float:
    """Mean training objective (data loss plus lam * ||w||^2 / 2)."""
    x = np.asarray(features, dtype=np.float64)
    sign = 2.0 * np.asarray(labels, dtype=np.float64) - 1.0
    scores = x @ clf.w + clf.b
    if clf.kind == "logistic":
        # log(1 + exp(-z s)) evaluated stably on both tails
        margin = sign * scores
        data = np.mean(np.logaddexp(0.0, -margin))
    else:
        data = np.mean(np.maximum(0.0, 1.0 - sign * scores))
    return float(data + 0.5 * clf.lam * float(clf.w @ clf.w))


def fit_linear_classifier(
    kind: str,
    features,
    labels,
    lam: float = 0.0,
    epochs: int = 200,
    lr: float = 0.5,
    rng: RngStream | None = None,
) -> LinearClassifier:
    """Full-batch gradient descent on the mean logistic or hinge loss.

    Weights start at zero, so the fit is deterministic; ``rng`` is accepted
    for interface uniformity with the neural trainers but unused.

    Raises:
        ValueError: labels outside {0, 1} or only one class present.
    """
    del rng
    if kind not in _CLASSIFIER_KINDS:
        raise ValueError(f"classifier kind must be one of {_CLASSIFIER_KINDS}, got {kind!r}")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError(f"expected (n, d) features and (n,) labels, got {x.shape}, {y.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite entries")
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0, 1))):
        raise ValueError(f"labels must be binary 0/1, got classes {classes}")
    if classes.size < 2:
        raise ValueError("training labels contain a single class")
    if lam < 0 or epochs < 0 or lr < 0:
        raise ValueError("lam, epochs, and lr must be non-negative")

    n = x.shape[0]
    sign = 2.0 * y.astype(np.float64) - 1.0
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        scores = x @ w + b
        if kind == "logistic":
            # d/ds log(1 + exp(-z s)) = -z * sigmoid(-z s)
            weight = sign / (1.0 + np.exp(sign * scores))
        else:
            # hinge subgradient; the margin exactly at 1 contributes 0
            weight = sign * ((1.0 - sign * scores) > 0.0)
        gw = -(x.T @ weight) / n + lam * w
        gb = -float(weight.mean())
        w -= lr * gw
        b -= lr * gb
    return LinearClassifier(kind=kind, w=w, b=float(b), lam=float(lam), fitted=True)


def decision_function(clf: LinearClassifier, features) -> np.ndarray:
    """Raw scores w . x + b."""
    if not clf.fitted:
        raise ValueError("classifier is not fitted")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != clf.w.shape[0]:
        raise ValueError(
            f"features of shape {x.shape} do not match weight dim {clf.w.shape[0]}"
        )
    return x @ clf.w + clf.b


def classifier_predict(clf: LinearClassifier, features) -> np.ndarray:
    """Class labels: score > 0 maps to 1, ties to 0."""
    return (decision_function(clf, features) > 0.0).astype(np.int64)


def save_classifier(clf: LinearClassifier, directory) -> None:
    if not clf.fitted:
        raise ValueError("classifier is not fitted")
    loaddata.save_bundle(
        directory,
        {"w": clf.w, "b": np.asarray([clf.b])},
        {"kind": "linear_classifier", "model": clf.kind, "lam": clf.lam},
    )


def load_classifier(directory) -> LinearClassifier:
    tensors, meta = loaddata.load_bundle(directory)
    if meta.get("kind") != "linear_classifier":
        raise ValueError(f"bundle at {directory} is not a serialized classifier")
    return LinearClassifier(
        kind=meta["model"],
        w=tensors["w"],
        b=float(tensors["b"][0]),
        lam=float(meta["lam"]),
        fitted=True,
    )


@dataclass(frozen=True)
class HeadSpec:
    """Prediction-head description.

    ``class_head``: one dense layer to ``n_classes`` logits.
    ``domain_head``: dense / relu / dense to 2 domain logits (hidden width
    defaults to the feature dim).
    ``mlp_decoder``: dense / relu / dense / relu / dense to one real output;
    ``hidden`` must name the two hidden widths.
    """

    kind: str
    feature_dim: int
    n_classes: int | None = None
    hidden: tuple = ()


def build_head(spec: HeadSpec, rng: RngStream) -> Net:
    """Construct a deterministic prediction head."""
    if spec.feature_dim < 1:
        raise ValueError(f"feature_dim must be positive, got {spec.feature_dim}")
    f = spec.feature_dim

    if spec.kind == "class_head":
        if spec.n_classes is None or spec.n_classes < 2:
            raise ValueError("class_head requires n_classes >= 2")
        return Net((f,), [Dense(f, spec.n_classes)], rng)

    if spec.kind == "domain_head":
        width = int(spec.hidden[0]) if spec.hidden else f
        return Net((f,), [Dense(f, width), Relu(), Dense(width, 2)], rng)

    if spec.kind == "mlp_decoder":
        if len(spec.hidden) != 2:
            raise ValueError("mlp_decoder requires exactly two hidden widths")
        h1, h2 = (int(h) for h in spec.hidden)
        layers = [Dense(f, h1), Relu(), Dense(h1, h2), Relu(), Dense(h2, 1)]
        return Net((f,), layers, rng)

    raise ValueError(f"unknown head kind {spec.kind!r}")
