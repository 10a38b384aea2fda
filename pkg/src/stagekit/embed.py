"""Stage 3: representation learning — multilinear PCA and neural feature extractors.

MPCA learns one orthonormal projection matrix per tensor mode by alternating
eigendecompositions of mode-wise scatter matrices: initialize every mode from
the scatter of the centered samples, then refine each mode in turn against
the samples projected along all other modes (Gauss-Seidel style, matching the
classic algorithm). Retained dimensions per mode are the smallest count whose
eigenvalue sum reaches the requested variance fraction, fixed at
initialization.
"""

from dataclasses import dataclass

import numpy as np

from . import loaddata, tensorkit
from .nnkernel import Conv1d, Dense, Embedding, GlobalMaxPool, Net, Relu
from .utils import RngStream


@dataclass
class MpcaModel:
    """Fitted multilinear projection.

    ``proj[n]`` has orthonormal rows of shape (P_n, I_n); ``feature_order``
    permutes the flattened projected entries by descending training variance
    (ties keep ascending flat index), which defines the vector-output order.
    """

    mean: np.ndarray
    proj: list
    shape_in: tuple
    shape_out: tuple
    var_ratio: float
    max_iters: int
    feature_order: np.ndarray
    feature_variance: np.ndarray
    fitted: bool = True

    @property
    def n_features(self) -> int:
        return int(np.prod(self.shape_out, dtype=np.int64))


def _retained_count(eigenvalues: np.ndarray, var_ratio: float) -> int:
    cum = np.cumsum(eigenvalues)
    total = cum[-1]
    reached = np.nonzero(cum >= var_ratio * total)[0]
    return int(reached[0]) + 1 if reached.size else eigenvalues.size


def _mode_scatter(stacked_centered: np.ndarray, mode: int) -> np.ndarray:
    """Total scatter of per-sample mode-``mode`` unfoldings (samples on axis 0)."""
    m = tensorkit.unfold(stacked_centered, mode + 1)
    return m @ m.T


def mpca_fit(samples, var_ratio: float = 0.97, max_iters: int = 1) -> MpcaModel:
    """Fit MPCA on training samples of identical shape.

    Args:
        samples: (n, I_1, ..., I_N) array or list of (I_1, ..., I_N) tensors,
            n >= 2, N >= 2.
        var_ratio: per-mode fraction of eigenvalue mass to retain, in (0, 1].
        max_iters: refinement passes after initialization.
    """
    if not 0.0 < var_ratio <= 1.0:
        raise ValueError(f"var_ratio must be in (0, 1], got {var_ratio}")
    if max_iters < 0:
        raise ValueError(f"max_iters must be >= 0, got {max_iters}")
    if isinstance(samples, np.ndarray):
        x = np.asarray(samples, dtype=np.float64)
    else:
        samples = list(samples)
        if len(samples) >= 2:
            shapes = {np.asarray(s).shape for s in samples}
            if len(shapes) > 1:
                raise ValueError(f"samples disagree in shape: {sorted(shapes)}")
        x = np.asarray(samples, dtype=np.float64)
    if x.ndim < 3:
        raise ValueError(f"samples must be tensors of order >= 2, got input ndim {x.ndim}")
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 samples, got {x.shape[0]}")

    n_modes = x.ndim - 1
    mean = x.mean(axis=0)
    centered = x - mean

    proj = []
    shape_out = []
    for mode in range(n_modes):
        values, vectors = tensorkit.sym_eig_desc(_mode_scatter(centered, mode))
        keep = _retained_count(values, var_ratio)
        shape_out.append(keep)
        proj.append(vectors[:, :keep].T.copy())

    other = lambda mode: [m for m in range(n_modes) if m != mode]
    for _ in range(max_iters):
        for mode in range(n_modes):
            partial = tensorkit.multi_mode_product(
                centered,
                [proj[m] for m in other(mode)],
                [m + 1 for m in other(mode)],
            )
            values, vectors = tensorkit.sym_eig_desc(_mode_scatter(partial, mode))
            proj[mode] = vectors[:, : shape_out[mode]].T.copy()

    projected = tensorkit.multi_mode_product(centered, proj, list(range(1, n_modes + 1)))
    variance = projected.reshape(x.shape[0], -1).var(axis=0)
    order = np.argsort(-variance, kind="stable")

    return MpcaModel(
        mean=mean,
        proj=proj,
        shape_in=tuple(x.shape[1:]),
        shape_out=tuple(shape_out),
        var_ratio=float(var_ratio),
        max_iters=int(max_iters),
        feature_order=order.astype(np.int64),
        feature_variance=variance,
    )


def _check_fitted(model: MpcaModel):
    if not model.fitted:
        raise ValueError("MPCA model is not fitted")


def mpca_transform(
    model: MpcaModel,
    x: np.ndarray,
    return_vector: bool = False,
    n_features: int | None = None,
):
    """Project sample(s) into the learned subspace.

    Accepts a single (I_1, ..., I_N) tensor or a batch with a leading sample
    axis. With ``return_vector`` the projection is flattened, reordered by
    descending training variance, and truncated to ``n_features``.
    """
    _check_fitted(model)
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == model.shape_in
    if single:
        x = x[None]
    if x.shape[1:] != model.shape_in:
        raise ValueError(f"input shape {x.shape[1:]} does not match fitted {model.shape_in}")

    n_modes = len(model.shape_in)
    out = tensorkit.multi_mode_product(
        x - model.mean, model.proj, list(range(1, n_modes + 1))
    )
    if return_vector:
        out = out.reshape(out.shape[0], -1)[:, model.feature_order]
        if n_features is not None:
            if not 1 <= n_features <= model.n_features:
                raise ValueError(
                    f"n_features must be in [1, {model.n_features}], got {n_features}"
                )
            out = out[:, :n_features]
    return out[0] if single else out


def mpca_inverse_transform(model: MpcaModel, y: np.ndarray) -> np.ndarray:
    """Map projections (tensor or vector form) back to the input space.

    Vector input (ndim <= 2) is interpreted in the model's feature order;
    truncated features are treated as 0. Adds the training mean back, so
    ``inverse(transform(x)) == x`` when every mode is fully retained.
    """
    _check_fitted(model)
    y = np.asarray(y, dtype=np.float64)
    n_modes = len(model.shape_in)

    if y.ndim <= 2:
        single = y.ndim == 1
        vec = y[None] if single else y
        k = vec.shape[1]
        if k > model.n_features:
            raise ValueError(
                f"vector input has {k} features, model holds {model.n_features}"
            )
        full = np.zeros((vec.shape[0], model.n_features))
        full[:, model.feature_order[:k]] = vec
        tensor = full.reshape((vec.shape[0],) + model.shape_out)
    elif y.shape == model.shape_out:
        single = True
        tensor = y[None]
    elif y.shape[1:] == model.shape_out:
        single = False
        tensor = y
    else:
        raise ValueError(f"input shape {y.shape} does not match projected {model.shape_out}")

    rec = tensorkit.multi_mode_product(
        tensor, model.proj, list(range(1, n_modes + 1)), transpose=True
    )
    rec = rec + model.mean
    return rec[0] if single else rec


def save_mpca(model: MpcaModel, directory) -> None:
    """Serialize the fitted model as a KTF bundle with a JSON manifest."""
    _check_fitted(model)
    tensors = {"mean": model.mean, "feature_variance": model.feature_variance}
    for i, u in enumerate(model.proj):
        tensors[f"proj{i}"] = u
    meta = {
        "kind": "mpca",
        "shape_in": list(model.shape_in),
        "shape_out": list(model.shape_out),
        "var_ratio": model.var_ratio,
        "max_iters": model.max_iters,
        "feature_order": [int(i) for i in model.feature_order],
    }
    loaddata.save_bundle(directory, tensors, meta)


def load_mpca(directory) -> MpcaModel:
    tensors, meta = loaddata.load_bundle(directory)
    if meta.get("kind") != "mpca":
        raise ValueError(f"bundle at {directory} is not a serialized MPCA model")
    n_modes = len(meta["shape_in"])
    return MpcaModel(
        mean=tensors["mean"],
        proj=[tensors[f"proj{i}"] for i in range(n_modes)],
        shape_in=tuple(meta["shape_in"]),
        shape_out=tuple(meta["shape_out"]),
        var_ratio=float(meta["var_ratio"]),
        max_iters=int(meta["max_iters"]),
        feature_order=np.asarray(meta["feature_order"], dtype=np.int64),
        feature_variance=tensors["feature_variance"],
    )


@dataclass(frozen=True)
class ExtractorSpec:
    """Feature-extractor description.

    ``small_vector_mlp`` consumes flat vectors: dense/relu blocks through
    ``hidden`` then a relu-terminated projection to ``output_dim``.
    ``sequence_cnn`` consumes encoded sequences: embedding, conv/relu blocks
    per (filters, kernels) pair, global max pooling, then a relu-terminated
    projection to ``output_dim``.
    """

    kind: str
    output_dim: int
    input_dim: int | None = None
    hidden: tuple = ()
    vocab_size: int | None = None
    max_len: int | None = None
    embed_dim: int | None = None
    filters: tuple = ()
    kernels: tuple = ()


def build_feature_extractor(spec: ExtractorSpec, rng: RngStream) -> Net:
    """Construct a deterministic extractor net ending in a flat feature vector."""
    if spec.output_dim < 1:
        raise ValueError(f"output_dim must be positive, got {spec.output_dim}")

    if spec.kind == "small_vector_mlp":
        if spec.input_dim is None or spec.input_dim < 1:
            raise ValueError("small_vector_mlp requires a positive input_dim")
        layers = []
        width = spec.input_dim
        for h in spec.hidden:
            layers += [Dense(width, int(h)), Relu()]
            width = int(h)
        layers += [Dense(width, spec.output_dim), Relu()]
        return Net((spec.input_dim,), layers, rng)

    if spec.kind == "sequence_cnn":
        if None in (spec.vocab_size, spec.max_len, spec.embed_dim):
            raise ValueError("sequence_cnn requires vocab_size, max_len, and embed_dim")
        if len(spec.filters) != len(spec.kernels) or not spec.filters:
            raise ValueError("sequence_cnn requires matching non-empty filters and kernels")
        layers = [Embedding(spec.vocab_size, spec.embed_dim)]
        channels = spec.embed_dim
        for f, k in zip(spec.filters, spec.kernels):
            layers += [Conv1d(channels, int(f), int(k)), Relu()]
            channels = int(f)
        layers += [GlobalMaxPool(), Dense(channels, spec.output_dim), Relu()]
        return Net((spec.max_len,), layers, rng)

    raise ValueError(f"unknown extractor kind {spec.kind!r}")
