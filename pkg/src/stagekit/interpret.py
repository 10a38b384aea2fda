"""Stage 6: model interpretation — top-weight selection, back-projection, file export.

Visualization is realized as file export (CSV tables and 8-bit PGM slice
images) so interpretation artifacts are byte-reproducible and reviewable
without a plotting stack.
"""

import os
from dataclasses import dataclass

import numpy as np

from .embed import MpcaModel, mpca_inverse_transform
from .predict import LinearClassifier


@dataclass
class WeightMap:
    """Model weights arranged in the input-sample shape."""

    values: np.ndarray
    provenance: str = ""


def select_top_weight(weights: np.ndarray, k) -> np.ndarray:
    """Keep the k largest-|value| entries, zeroing the rest.

    ``k`` is a count when given as an integer >= 1, or a fraction of the
    entries when given as a float in (0, 1]. Ties at the threshold keep the
    lower flat (row-major) index.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.size
    if isinstance(k, bool) or n == 0:
        raise ValueError("k must be a count or fraction over a non-empty tensor")
    if isinstance(k, int):
        count = k
    elif isinstance(k, float):
        if not 0.0 < k <= 1.0:
            raise ValueError(f"fractional k must be in (0, 1], got {k}")
        count = max(1, int(round(k * n)))
    else:
        raise ValueError(f"k must be int or float, got {type(k).__name__}")
    if not 1 <= count <= n:
        raise ValueError(f"k = {count} outside [1, {n}]")

    flat = weights.reshape(-1)
    # primary key: descending |value|; secondary: ascending flat index
    order = np.lexsort((np.arange(n), -np.abs(flat)))
    out = np.zeros(n)
    keep = order[:count]
    out[keep] = flat[keep]
    return out.reshape(weights.shape)


def weights_to_input_space(mpca: MpcaModel, clf: LinearClassifier) -> WeightMap:
    """Back-project linear-classifier weights through a fitted MPCA model.

    The classifier must have been trained on the model's vector features
    (same ordering and truncation). The weight vector is embedded into the
    full projected space (zeros for truncated features), inverse-transformed,
    and the training mean is subtracted, leaving the pure back-projected
    direction.
    """
    if not clf.fitted:
        raise ValueError("classifier is not fitted")
    k = clf.w.shape[0]
    if k > mpca.n_features:
        raise ValueError(
            f"classifier has {k} weights, MPCA model holds {mpca.n_features} features"
        )
    values = mpca_inverse_transform(mpca, clf.w) - mpca.mean
    return WeightMap(
        values=values,
        provenance=f"{clf.kind} weights via mpca inverse transform ({k} features)",
    )


def _rescale_to_bytes(values: np.ndarray) -> np.ndarray:
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.full(values.shape, 128, dtype=np.uint8)
    scaled = np.rint((values - lo) / (hi - lo) * 255.0)
    return scaled.astype(np.uint8)


def _write_pgm(path, image: np.ndarray) -> None:
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(image.tobytes(order="C"))


def export_weight_map(weight_map: WeightMap, path, format: str) -> None:
    """Write a weight map to disk.

    ``csv``: one row per entry at exactly ``path`` with columns flat_index,
    multi_index (space-separated), value (full precision).

    ``pgm-slices``: 8-bit binary PGM images, one per trailing-mode slice
    (``{path}_000.pgm`` onward; an order-2 map yields a single slice), with
    the whole map rescaled linearly so min maps to 0 and max to 255; a
    constant map renders as all 128.
    """
    values = np.asarray(weight_map.values, dtype=np.float64)
    if format == "csv":
        lines = ["flat_index,multi_index,value"]
        flat = values.reshape(-1)
        for i in range(flat.size):
            multi = np.unravel_index(i, values.shape)
            lines.append(f"{i},{' '.join(str(m) for m in multi)},{flat[i]!r}")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        return

    if format == "pgm-slices":
        if values.ndim < 2:
            raise ValueError(f"pgm export needs an order >= 2 map, got order {values.ndim}")
        stack = values.reshape(values.shape[0], values.shape[1], -1)
        bytes_all = _rescale_to_bytes(stack)
        prefix = os.fspath(path)
        if prefix.endswith(".pgm"):
            prefix = prefix[: -len(".pgm")]
        for t in range(stack.shape[2]):
            _write_pgm(f"{prefix}_{t:03d}.pgm", bytes_all[:, :, t])
        return

    raise ValueError(f"unknown export format {format!r}; expected 'csv' or 'pgm-slices'")
