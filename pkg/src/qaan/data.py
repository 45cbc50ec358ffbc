"""Synthetic data, dataset files, and bit/spin/real encodings.

Bit vectors are numpy integer arrays with entries in {0, 1}; spin vectors use
{-1, +1}.  Whenever a full probability table over {0,1}^d is needed, row ``i``
corresponds to the configuration whose big-endian binary expansion is ``i``
(see :func:`all_configs`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

MAX_TABLE_BITS = 24


def all_configs(n: int) -> np.ndarray:
    """All 2**n bit vectors, shape (2**n, n), in big-endian index order."""
    if n < 0 or n > MAX_TABLE_BITS:
        raise ValueError(f"cannot enumerate {n} bits")
    idx = np.arange(2**n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts) & 1).astype(np.int8)


def config_index(bits: np.ndarray) -> np.ndarray:
    """Inverse of :func:`all_configs`: table index of each bit vector."""
    bits = np.asarray(bits, dtype=np.int64)
    n = bits.shape[-1]
    weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def empirical_table(bits: np.ndarray) -> np.ndarray:
    """Normalized histogram of bit vectors over {0,1}^d."""
    bits = np.atleast_2d(bits)
    counts = np.bincount(config_index(bits), minlength=2 ** bits.shape[1])
    return counts / counts.sum()


def bits_to_spins(z) -> np.ndarray:
    z = np.asarray(z)
    _check_bits(z)
    return (2 * z.astype(np.int8) - 1).astype(np.int8)


def spins_to_bits(s) -> np.ndarray:
    s = np.asarray(s)
    if not np.all(np.abs(s) == 1):
        raise ValueError("spin vectors must contain only -1 and +1")
    return ((s.astype(np.int8) + 1) // 2).astype(np.int8)


def _check_bits(z: np.ndarray) -> None:
    if not np.all((z == 0) | (z == 1)):
        raise ValueError("bit vectors must contain only 0 and 1")


def bernoulli_round(p, rng: np.random.Generator) -> np.ndarray:
    """Draw independent bits with the given means."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("Bernoulli means must lie in [0, 1]")
    return (rng.random(p.shape) < p).astype(np.int8)


@dataclass(frozen=True)
class BernoulliMixture:
    """Uniform mixture of product-Bernoulli distributions centred on ``modes``.

    Each bit of a drawn sample agrees with the chosen mode with probability
    ``q`` and is flipped with probability ``1 - q``.
    """

    modes: np.ndarray
    q: float

    def __post_init__(self):
        modes = np.atleast_2d(np.asarray(self.modes)).astype(np.int8)
        _check_bits(modes)
        if modes.shape[0] < 1 or modes.shape[1] < 1:
            raise ValueError("mixture needs at least one mode of positive dimension")
        if not 0.5 < self.q <= 1.0:
            raise ValueError(f"q must lie in (0.5, 1], got {self.q}")
        object.__setattr__(self, "modes", modes)

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    @property
    def dim(self) -> int:
        return self.modes.shape[1]

    @classmethod
    def random(cls, n_modes: int, dim: int, q: float, rng: np.random.Generator) -> "BernoulliMixture":
        return cls(rng.integers(0, 2, size=(n_modes, dim)), q)


def mixture_prob(m: BernoulliMixture, z) -> np.ndarray | float:
    """Probability of ``z`` (one vector or a batch) under the mixture."""
    z = np.asarray(z)
    _check_bits(z)
    if z.shape[-1] != m.dim:
        raise ValueError(f"expected dimension {m.dim}, got {z.shape[-1]}")
    zb = np.atleast_2d(z)
    hamming = (zb[:, None, :] != m.modes[None, :, :]).sum(axis=-1)
    agree = m.dim - hamming
    flip = 1.0 - m.q
    per_mode = m.q**agree * flip**hamming
    out = per_mode.mean(axis=1)
    return float(out[0]) if z.ndim == 1 else out


def mixture_table(m: BernoulliMixture) -> np.ndarray:
    return mixture_prob(m, all_configs(m.dim))


def sample_mixture(m: BernoulliMixture, count: int, rng: np.random.Generator, return_labels: bool = False):
    if count < 1:
        raise ValueError("count must be at least 1")
    labels = rng.integers(0, m.n_modes, size=count)
    flips = (rng.random((count, m.dim)) < 1.0 - m.q).astype(np.int8)
    samples = m.modes[labels] ^ flips
    if return_labels:
        return samples, labels
    return samples


@dataclass
class Dataset:
    """Real-valued records in [0, 1]^d, read as Bernoulli means."""

    records: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        rec = np.asarray(self.records, dtype=np.float64)
        if rec.ndim != 2 or rec.shape[0] == 0:
            raise ValueError("dataset must be a non-empty 2-D array of records")
        if np.any(~np.isfinite(rec)) or rec.min() < 0.0 or rec.max() > 1.0:
            raise ValueError("dataset records must lie in [0, 1]")
        self.records = rec
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (rec.shape[0],):
                raise ValueError("one label per record required")
            self.labels = labels

    def __len__(self) -> int:
        return self.records.shape[0]

    @property
    def dim(self) -> int:
        return self.records.shape[1]

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None):
        """Yield consecutive mini-batches; shuffled when ``rng`` is given."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            yield self.records[order[start : start + batch_size]]


# Dataset file: little-endian
#   magic (8 bytes) | u32 ndim | u32 shape[ndim] | u64 count | u8 dtype | u8 has_labels
#   | count * prod(shape) values row-major | count * i32 labels (optional)
DATASET_MAGIC = b"QAANDS\x00\x01"
_DTYPES = {1: np.dtype("<u1"), 2: np.dtype("<f8")}
_IDX_TYPES = {0x08: np.dtype(">u1"), 0x09: np.dtype(">i1"), 0x0B: np.dtype(">i2"),
              0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}


class DatasetFormatError(ValueError):
    pass


def write_dataset(path, values: np.ndarray, labels: Optional[np.ndarray] = None) -> None:
    """Write raw records (first axis = record) to the binary dataset format.

    ``uint8`` arrays are stored as raw bytes (0..255); anything else is stored
    as float64 and must already lie in [0, 1].
    """
    values = np.asarray(values)
    if values.ndim < 2 or values.shape[0] == 0:
        raise ValueError("need a non-empty array with a record axis")
    if values.dtype == np.uint8:
        code = 1
    else:
        code = 2
        values = values.astype(np.float64)
    shape = values.shape[1:]
    header = DATASET_MAGIC + struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    header += struct.pack("<QBB", values.shape[0], code, labels is not None)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(values, dtype=_DTYPES[code]).tobytes())
        if labels is not None:
            fh.write(np.asarray(labels, dtype="<i4").tobytes())


def read_dataset(path) -> tuple[np.ndarray, Optional[np.ndarray], int]:
    """Return ``(raw values, labels, dtype code)`` from a dataset file."""
    blob = Path(path).read_bytes()
    if blob[:8] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic")
    off = 8
    try:
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        count, code, has_labels = struct.unpack_from("<QBB", blob, off)
        off += 10
    except struct.error as exc:
        raise DatasetFormatError(f"{path}: truncated header") from exc
    if code not in _DTYPES:
        raise DatasetFormatError(f"{path}: unknown element type {code}")
    dtype = _DTYPES[code]
    n_values = count * int(np.prod(shape, dtype=np.int64))
    need = off + n_values * dtype.itemsize + (4 * count if has_labels else 0)
    if len(blob) != need:
        raise DatasetFormatError(f"{path}: expected {need} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype=dtype, count=n_values, offset=off).reshape((count, *shape))
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<i4", count=count, offset=off + n_values * dtype.itemsize)
        labels = labels.astype(np.int64)
    return values, labels, code


def read_idx(path) -> np.ndarray:
    """Read an array stored in the IDX format used by common image corpora."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[0] != 0 or blob[1] != 0 or blob[2] not in _IDX_TYPES:
        raise DatasetFormatError(f"{path}: not an IDX file")
    dtype = _IDX_TYPES[blob[2]]
    ndim = blob[3]
    try:
        shape = struct.unpack_from(f">{ndim}I", blob, 4)
    except struct.error as exc:
        raise DatasetFormatError(f"{path}: truncated header") from exc
    off = 4 + 4 * ndim
    n_values = int(np.prod(shape, dtype=np.int64))
    if len(blob) != off + n_values * dtype.itemsize:
        raise DatasetFormatError(f"{path}: size does not match header")
    return np.frombuffer(blob, dtype=dtype, offset=off).reshape(shape)


def rescale(values: np.ndarray, source: tuple[float, float], target: tuple[float, float]) -> np.ndarray:
    lo, hi = source
    a, b = target
    if hi <= lo or b <= a:
        raise ValueError("intervals must have positive length")
    return a + (np.asarray(values, dtype=np.float64) - lo) * (b - a) / (hi - lo)


def ingest_images(path, rescale_to: tuple[float, float] = (0.0, 1.0),
                  labels_path=None) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Load images from a dataset file or an IDX file, flattened per record.

    Raw bytes map from [0, 255] and float records from [0, 1] onto
    ``rescale_to``; use (0, 1) for Boltzmann-machine input and (-1, 1) for
    GAN input.  Returns ``(records, labels)``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == DATASET_MAGIC:
        values, labels, code = read_dataset(path)
        source = (0.0, 255.0) if code == 1 else (0.0, 1.0)
    else:
        values = read_idx(path)
        labels = None
        source = (0.0, 255.0) if values.dtype.kind == "u" else (0.0, 1.0)
    if labels_path is not None:
        labels = read_idx(labels_path).astype(np.int64)
    if values.shape[0] == 0:
        raise DatasetFormatError(f"{path}: empty dataset")
    flat = values.reshape(values.shape[0], -1)
    if source == (0.0, 1.0) and (flat.min() < 0.0 or flat.max() > 1.0):
        raise DatasetFormatError(f"{path}: float records must lie in [0, 1]")
    if labels is not None and labels.shape[0] != flat.shape[0]:
        raise DatasetFormatError("label count does not match record count")
    return rescale(flat, source, rescale_to), labels


def toy_images(count: int, rng: np.random.Generator, n_modes: int = 8, side: int = 8,
               q: float = 0.9, mixture: Optional[BernoulliMixture] = None, contrast: float = 0.6,
               pixel_noise: float = 0.1) -> tuple[Dataset, BernoulliMixture]:
    """Grey-level ``side`` x ``side`` toy images built on a lifted Bernoulli mixture.

    Each pixel is ``(1 - contrast) / 2 + contrast * bit`` plus Gaussian noise,
    clipped to [0, 1].  ``contrast=1, pixel_noise=0`` gives the binary images.
    Labels are the index of the generating mode.
    """
    if not 0.0 < contrast <= 1.0 or pixel_noise < 0:
        raise ValueError("contrast must lie in (0, 1] and pixel_noise must be non-negative")
    if mixture is None:
        mixture = BernoulliMixture.random(n_modes, side * side, q, rng)
    bits, labels = sample_mixture(mixture, count, rng, return_labels=True)
    x = 0.5 * (1.0 - contrast) + contrast * bits.astype(np.float64)
    if pixel_noise > 0:
        x = np.clip(x + rng.normal(0.0, pixel_noise, size=x.shape), 0.0, 1.0)
    return Dataset(x, labels), mixture
