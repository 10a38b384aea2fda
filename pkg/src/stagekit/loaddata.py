"""Stage 1: dataset construction — file ingestion, splits, domain pairing, generators.

The synthetic generators stand in for the usual benchmark downloads so every
example runs offline: Gaussian blob pairs with a rigid target-domain shift,
drug/target string pairs with a countable affinity signal, and noise tensors
with a planted mean-shifted block.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .prepdata import SequenceEncoding, encode_sequence
from .utils import RngStream

KTF_MAGIC = b"KALE"
KTF_VERSION = 1
KTF_DTYPE_F64 = 0

DRUG_ALPHABET = "ABCDEFGH"
TARGET_ALPHABET = "ACDEFGHIKLMNPQRSTVWY"


class KtfError(Exception):
    """Base class for KTF container failures."""


class KtfMagicError(KtfError):
    """File does not start with the KALE magic."""


class KtfVersionError(KtfError):
    """Unsupported container version."""


class KtfDtypeError(KtfError):
    """Unsupported payload dtype."""


class KtfTruncatedError(KtfError):
    """Payload or header shorter than the declared shape demands."""


def save_ktf(path, arr) -> None:
    """Write a tensor as a KTF file (magic, version, dtype, shape, payload)."""
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    with open(path, "wb") as fh:
        fh.write(KTF_MAGIC)
        fh.write(bytes([KTF_VERSION, KTF_DTYPE_F64, arr.ndim]))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def load_ktf(path) -> np.ndarray:
    """Read a KTF file back into a float64 tensor (exact round-trip)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise KtfTruncatedError(f"{path}: file shorter than the 4-byte magic")
    if data[:4] != KTF_MAGIC:
        raise KtfMagicError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 7:
        raise KtfTruncatedError(f"{path}: header truncated")
    version, dtype, order = data[4], data[5], data[6]
    if version != KTF_VERSION:
        raise KtfVersionError(f"{path}: unsupported version {version}")
    if dtype != KTF_DTYPE_F64:
        raise KtfDtypeError(f"{path}: unsupported dtype code {dtype}")
    header_end = 7 + 8 * order
    if len(data) < header_end:
        raise KtfTruncatedError(f"{path}: shape header truncated")
    shape = struct.unpack_from(f"<{order}Q", data, 7) if order else ()
    count = int(np.prod(shape, dtype=np.int64)) if order else 1
    payload = data[header_end:]
    if len(payload) < 8 * count:
        raise KtfTruncatedError(
            f"{path}: payload holds {len(payload)} bytes, shape {shape} needs {8 * count}"
        )
    if len(payload) > 8 * count:
        raise KtfError(f"{path}: {len(payload) - 8 * count} trailing bytes after payload")
    arr = np.frombuffer(payload, dtype="<f8", count=count).astype(np.float64)
    return arr.reshape(shape)


def save_bundle(directory, tensors: dict, meta: dict) -> None:
    """Write named tensors plus a JSON manifest into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    manifest = {"meta": meta, "tensors": {}}
    for name in sorted(tensors):
        if not name.replace("_", "").isalnum():
            raise ValueError(f"bundle tensor name {name!r} is not filename-safe")
        filename = f"{name}.ktf"
        save_ktf(os.path.join(directory, filename), tensors[name])
        manifest["tensors"][name] = filename
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_bundle(directory):
    """Read back a bundle written by :func:`save_bundle`.

    Returns:
        (tensors, meta) where tensors maps each name to its array.
    """
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    tensors = {
        name: load_ktf(os.path.join(directory, filename))
        for name, filename in manifest["tensors"].items()
    }
    return tensors, manifest["meta"]


@dataclass
class Dataset:
    """Indexed (feature, label) pairs.

    Features are per-sample arrays of one common shape, or tuples of encoded
    integer sequences for paired-sequence data.
    """

    features: list
    labels: np.ndarray
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if len(self.features) != len(self.labels):
            raise ValueError(
                f"{self.name}: {len(self.features)} features vs {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.features)

    def feature_array(self) -> np.ndarray:
        """Stack uniform-shape array features into one (n, ...) tensor."""
        return np.stack([np.asarray(f, dtype=np.float64) for f in self.features])


class MultiDomainDataset:
    """A labeled source domain paired with an unlabeled target domain.

    Target labels are retained for evaluation but are reachable only through
    :meth:`target_eval_labels`, which training code must never call.
    """

    def __init__(self, source: Dataset, target: Dataset):
        src_shape = np.asarray(source.features[0]).shape
        tgt_shape = np.asarray(target.features[0]).shape
        if src_shape != tgt_shape:
            raise ValueError(
                f"domain feature shapes differ: source {src_shape} vs target {tgt_shape}"
            )
        self.source = source
        self.target_features = list(target.features)
        self.target_name = target.name
        self._target_labels = np.asarray(target.labels)

    @property
    def n_target(self) -> int:
        return len(self.target_features)

    def target_feature_array(self) -> np.ndarray:
        return np.stack([np.asarray(f, dtype=np.float64) for f in self.target_features])

    def target_eval_labels(self) -> np.ndarray:
        """Held-out target labels. Evaluation only; never feed into training."""
        return self._target_labels.copy()


@dataclass(frozen=True)
class Split:
    """Disjoint train/val/test index lists covering range(n)."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_three_way(n: int, fractions, rng: RngStream) -> Split:
    """Random three-way split with floor allocation, remainder to train."""
    if n < 3:
        raise ValueError(f"need at least 3 samples to split, got {n}")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be three positive reals, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got sum {sum(fractions)!r}")
    n_val = int(n * fractions[1])
    n_test = int(n * fractions[2])
    n_train = n - n_val - n_test  # floor allocation; remainder goes to train
    perm = rng.permutation(n)
    return Split(
        train=perm[:n_train],
        val=perm[n_train : n_train + n_val],
        test=perm[n_train + n_val :],
    )


def _require(params: dict, key: str, kind: str):
    if key not in params:
        raise ValueError(f"{kind} generator requires parameter {key!r}")
    return params[key]


def _gen_domain_shift_blobs(params: dict, rng: RngStream) -> MultiDomainDataset:
    n_per_class = int(_require(params, "n_per_class", "domain_shift_blobs"))
    centers = [tuple(float(v) for v in c) for c in _require(params, "centers", "domain_shift_blobs")]
    std = float(params.get("std", 1.0))
    theta = np.deg2rad(float(params.get("theta_deg", 0.0)))
    shift = np.asarray(params.get("shift", (0.0, 0.0)), dtype=np.float64)
    if n_per_class < 1 or std <= 0 or len(centers) < 2:
        raise ValueError("blobs need n_per_class >= 1, std > 0 and >= 2 class centers")
    if any(len(c) != 2 for c in centers) or shift.shape != (2,):
        raise ValueError("blob centers and shift must be 2-dimensional")

    rotation = np.array(
        [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
    )

    def draw_domain(stream: RngStream, transform: bool) -> Dataset:
        features, labels = [], []
        for label, center in enumerate(centers):
            pts = np.asarray(center) + std * stream.normals(2 * n_per_class).reshape(
                n_per_class, 2
            )
            if transform:
                pts = pts @ rotation.T + shift
            features.extend(pts)
            labels.extend([label] * n_per_class)
        suffix = "target" if transform else "source"
        return Dataset(features, np.asarray(labels, dtype=np.int64), f"blobs_{suffix}")

    return MultiDomainDataset(
        source=draw_domain(rng.child(0), transform=False),
        target=draw_domain(rng.child(1), transform=True),
    )


def _gen_dta_strings(params: dict, rng: RngStream) -> Dataset:
    n_samples = int(_require(params, "n_samples", "dta_strings"))
    noise = float(params.get("noise", 0.1))
    drug_min = int(params.get("drug_min_len", 10))
    drug_max = int(params.get("drug_max_len", 40))
    target_min = int(params.get("target_min_len", 50))
    target_max = int(params.get("target_max_len", 200))
    if n_samples < 1 or noise < 0:
        raise ValueError("dta_strings needs n_samples >= 1 and noise >= 0")
    if not (1 <= drug_min <= drug_max and 1 <= target_min <= target_max):
        raise ValueError("dta_strings length bounds are inconsistent")

    drug_enc = SequenceEncoding(DRUG_ALPHABET, drug_max)
    target_enc = SequenceEncoding(TARGET_ALPHABET, target_max)
    features, labels = [], []
    for _ in range(n_samples):
        d_len = drug_min + rng.randbelow(drug_max - drug_min + 1)
        drug = "".join(DRUG_ALPHABET[c] for c in rng.integers(d_len, len(DRUG_ALPHABET)))
        t_len = target_min + rng.randbelow(target_max - target_min + 1)
        target = "".join(
            TARGET_ALPHABET[c] for c in rng.integers(t_len, len(TARGET_ALPHABET))
        )
        affinity = drug.count("AB") + target.count("LMN") + noise * rng.normal()
        features.append((encode_sequence(drug, drug_enc), encode_sequence(target, target_enc)))
        labels.append(affinity)
    return Dataset(
        features,
        np.asarray(labels, dtype=np.float64),
        "dta_strings",
        meta={
            "drug_max_len": drug_max,
            "target_max_len": target_max,
            "drug_vocab": drug_enc.vocab_size,
            "target_vocab": target_enc.vocab_size,
        },
    )


def _gen_tensor_patterns(params: dict, rng: RngStream) -> Dataset:
    n_per_class = int(_require(params, "n_per_class", "tensor_patterns"))
    shape = tuple(int(s) for s in params.get("shape", (16, 16, 8)))
    block = tuple(int(s) for s in params.get("block", (4, 4, 2)))
    offset = tuple(int(s) for s in params.get("offset", (6, 6, 3)))
    mu = float(params.get("mu", 2.0))
    if n_per_class < 1:
        raise ValueError("tensor_patterns needs n_per_class >= 1")
    if len(block) != len(shape) or len(offset) != len(shape):
        raise ValueError("block and offset must match the tensor order")
    if any(o < 0 or b < 1 or o + b > s for s, b, o in zip(shape, block, offset)):
        raise ValueError(f"block {block} at offset {offset} does not fit in {shape}")

    window = tuple(slice(o, o + b) for o, b in zip(offset, block))
    size = int(np.prod(shape, dtype=np.int64))
    features, labels = [], []
    for label in (0, 1):
        for _ in range(n_per_class):
            sample = rng.normals(size).reshape(shape)
            if label == 1:
                sample[window] += mu
            features.append(sample)
            labels.append(label)
    return Dataset(
        features,
        np.asarray(labels, dtype=np.int64),
        "tensor_patterns",
        meta={"shape": shape, "block": block, "offset": offset, "mu": mu},
    )


_GENERATORS = {
    "domain_shift_blobs": _gen_domain_shift_blobs,
    "dta_strings": _gen_dta_strings,
    "tensor_patterns": _gen_tensor_patterns,
}


def generate_synthetic(kind: str, params: dict, rng: RngStream):
    """Build a synthetic dataset; pure function of (kind, params, seed)."""
    try:
        generator = _GENERATORS[kind]
    except KeyError:
        raise ValueError(
            f"unknown synthetic kind {kind!r}; expected one of {sorted(_GENERATORS)}"
        ) from None
    return generator(params, rng)


def _index_stream(n: int, total: int, rng: RngStream) -> np.ndarray:
    """``total`` indices into range(n): whole shuffled permutations, concatenated."""
    rounds = -(-total // n)
    return np.concatenate([rng.permutation(n) for _ in range(rounds)])[:total]


def shuffled_batches(n: int, batch_size: int, rng: RngStream) -> list:
    """Shuffled index batches over range(n); a final short batch is dropped."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    perm = rng.permutation(n)
    n_batches = n // batch_size
    return [perm[b * batch_size : (b + 1) * batch_size] for b in range(n_batches)]


def paired_domain_batches(md: MultiDomainDataset, batch_size: int, rng: RngStream):
    """One epoch of equal-size source/target batch pairs.

    The epoch length covers the larger domain once (drop-last); the smaller
    domain recycles through fresh shuffles. Yields ((source features, source
    labels), target features); target labels are never exposed here.

    Raises:
        ValueError: batch_size below 1 or exceeding either domain size.
    """
    n_src, n_tgt = len(md.source), md.n_target
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > n_src or batch_size > n_tgt:
        raise ValueError(
            f"batch_size {batch_size} exceeds a domain size ({n_src} source, {n_tgt} target)"
        )
    n_batches = max(n_src, n_tgt) // batch_size
    need = n_batches * batch_size
    src_idx = _index_stream(n_src, need, rng)
    tgt_idx = _index_stream(n_tgt, need, rng)
    src_feats = md.source.feature_array()
    src_labels = md.source.labels
    tgt_feats = md.target_feature_array()
    for b in range(n_batches):
        sl = slice(b * batch_size, (b + 1) * batch_size)
        yield (src_feats[src_idx[sl]], src_labels[src_idx[sl]]), tgt_feats[tgt_idx[sl]]


def load_csv_dataset(path, name: str | None = None) -> Dataset:
    """Read a numeric CSV with a header row; the final column is the label."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if len(lines) < 2:
        raise ValueError(f"{path}: need a header row and at least one data row")
    header = lines[0].split(",")
    width = len(header)
    if width < 2:
        raise ValueError(f"{path}: need at least one feature column and a label column")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != width:
            raise ValueError(f"{path}: line {lineno} has {len(cells)} cells, expected {width}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise ValueError(f"{path}: non-numeric cell on line {lineno}") from None
    table = np.asarray(rows, dtype=np.float64)
    labels = table[:, -1]
    if np.array_equal(labels, np.rint(labels)):
        labels = labels.astype(np.int64)
    return Dataset(
        [row for row in table[:, :-1]],
        labels,
        name or os.path.splitext(os.path.basename(os.fspath(path)))[0],
    )
