"""Preprocessing transforms: feature standardization and sequence label-encoding."""

from dataclasses import dataclass

import numpy as np

_STD_FLOOR = 1e-8


class SequenceEncodingError(ValueError):
    """A character outside the encoding's alphabet."""


class Standardizer:
    """Per-feature zero-mean/unit-variance transform fitted on training data.

    Uses the population standard deviation so the fitted training set has
    exactly mean 0 and std 1 per feature; degenerate features (std below
    1e-8) are clamped and map to 0.
    """

    def __init__(self):
        self.mean = None
        self.std = None

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def fit(self, features: np.ndarray) -> "Standardizer":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim < 1 or features.shape[0] < 1:
            raise ValueError("standardizer needs at least one training sample")
        self.mean = features.mean(axis=0)
        self.std = np.maximum(features.std(axis=0), _STD_FLOOR)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ValueError("standardizer must be fitted before applying")
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.mean.shape:
            return (x - self.mean) / self.std
        if x.shape[1:] == self.mean.shape:
            return (x - self.mean[None]) / self.std[None]
        raise ValueError(
            f"input of shape {x.shape} does not match fitted feature shape {self.mean.shape}"
        )

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ValueError("standardizer must be fitted before applying")
        z = np.asarray(z, dtype=np.float64)
        if z.shape == self.mean.shape:
            return z * self.std + self.mean
        return z * self.std[None] + self.mean[None]


def fit_standardizer(train_features: np.ndarray) -> Standardizer:
    return Standardizer().fit(train_features)


def apply_standardizer(s: Standardizer, x: np.ndarray) -> np.ndarray:
    return s.transform(x)


@dataclass(frozen=True)
class SequenceEncoding:
    """Character-level label encoding: 1-based alphabet indices, 0 = padding."""

    alphabet: str
    max_len: int

    def __post_init__(self):
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise ValueError("alphabet must be a non-empty string of unique characters")
        if self.max_len < 1:
            raise ValueError(f"max_len must be positive, got {self.max_len}")

    def index_of(self, ch: str) -> int:
        pos = self.alphabet.find(ch)
        if pos < 0:
            raise SequenceEncodingError(f"character {ch!r} is not in the alphabet")
        return pos + 1

    @property
    def vocab_size(self) -> int:
        """Alphabet size plus the padding code."""
        return len(self.alphabet) + 1


def encode_sequence(s: str, enc: SequenceEncoding) -> np.ndarray:
    """Encode a string to exactly ``enc.max_len`` integer codes.

    The prefix up to ``max_len`` is kept, codes are 1-based alphabet indices,
    and the remainder is right-padded with 0.
    """
    out = np.zeros(enc.max_len, dtype=np.int64)
    for i, ch in enumerate(s[: enc.max_len]):
        pos = enc.alphabet.find(ch)
        if pos < 0:
            raise SequenceEncodingError(
                f"unknown character {ch!r} at position {i}"
            )
        out[i] = pos + 1
    return out


def decode_sequence(codes, enc: SequenceEncoding) -> str:
    """Inverse of :func:`encode_sequence`; stops at the first padding code."""
    chars = []
    for code in codes:
        code = int(code)
        if code == 0:
            break
        if not 1 <= code <= len(enc.alphabet):
            raise SequenceEncodingError(f"code {code} outside alphabet range")
        chars.append(enc.alphabet[code - 1])
    return "".join(chars)
