"""Radio frames, synthetic modulation generator, dataset container and splits."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    LabelOutOfRangeError,
    TruncatedFileError,
    VersionMismatchError,
)

MODULATIONS = ("BPSK", "QPSK", "PSK8", "QAM16", "PAM4", "GFSK", "CPFSK", "AMDSB", "WBFM")
STANDARD_SNRS = tuple(range(-20, 20, 2))
SAMPLES_PER_SYMBOL = 8

DATASET_MAGIC = b"AVGD"
DATASET_VERSION = 1


def as_series(values, name: str = "series") -> np.ndarray:
    """Validate ``values`` as a finite 1-D series of length >= 2 (float64 copy)."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < 2:
        raise ValueError(f"{name} needs at least 2 values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class IQFrame:
    """One radio sample: aligned in-phase and quadrature channels."""

    i: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        i = as_series(self.i, "I channel")
        q = as_series(self.q, "Q channel")
        if i.shape != q.shape:
            raise ValueError(f"channel lengths differ: {i.size} vs {q.size}")
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "q", q)

    def __len__(self) -> int:
        return self.i.size

    def as_array(self) -> np.ndarray:
        return np.stack([self.i, self.q])


@dataclass(frozen=True)
class LabeledFrame:
    frame: IQFrame
    label: int
    snr_db: int


@dataclass(frozen=True)
class Dataset:
    """A labelled collection of equal-length I/Q frames.

    Frames are held column-wise: ``signals`` has shape ``(N, 2, n)`` in
    float32 (channel 0 is I, channel 1 is Q), with ``labels`` and ``snrs``
    as parallel integer arrays.
    """

    class_names: tuple[str, ...]
    signals: np.ndarray
    labels: np.ndarray
    snrs: np.ndarray

    def __post_init__(self):
        names = tuple(self.class_names)
        signals = np.ascontiguousarray(self.signals, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        snrs = np.asarray(self.snrs, dtype=np.int64).reshape(-1)
        if signals.ndim != 3 or signals.shape[1] != 2:
            raise ValueError(f"signals must have shape (N, 2, n), got {signals.shape}")
        if not (len(labels) == len(snrs) == signals.shape[0]):
            raise ValueError("signals, labels and snrs disagree on frame count")
        if len(labels) and (labels.min() < 0 or labels.max() >= len(names)):
            raise LabelOutOfRangeError(
                f"label outside [0, {len(names)}): {labels.min()}..{labels.max()}"
            )
        for arr in (signals, labels, snrs):
            arr.flags.writeable = False
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "signals", signals)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "snrs", snrs)

    @classmethod
    def from_frames(cls, class_names: Sequence[str], frames: Sequence[LabeledFrame]) -> "Dataset":
        if not frames:
            raise ValueError("from_frames needs at least one frame")
        signals = np.stack([f.frame.as_array() for f in frames])
        return cls(
            tuple(class_names),
            signals,
            np.array([f.label for f in frames]),
            np.array([f.snr_db for f in frames]),
        )

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def frame_length(self) -> int:
        return self.signals.shape[2]

    def __len__(self) -> int:
        return self.signals.shape[0]

    def __getitem__(self, idx: int) -> LabeledFrame:
        sig = self.signals[idx].astype(np.float64)
        return LabeledFrame(IQFrame(sig[0], sig[1]), int(self.labels[idx]), int(self.snrs[idx]))

    def __iter__(self) -> Iterator[LabeledFrame]:
        for k in range(len(self)):
            yield self[k]

    @property
    def frames(self) -> list[LabeledFrame]:
        return list(self)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.class_names, self.signals[idx], self.labels[idx], self.snrs[idx])


# ---------------------------------------------------------------------------
# synthetic generator


def _constellation(name: str) -> np.ndarray:
    if name == "BPSK":
        return np.array([1.0, -1.0], dtype=complex)
    if name == "QPSK":
        return np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))
    if name == "PSK8":
        return np.exp(2j * np.pi * np.arange(8) / 8)
    if name == "QAM16":
        levels = np.array([-3.0, -1.0, 1.0, 3.0])
        return (levels[:, None] + 1j * levels[None, :]).ravel() / np.sqrt(10.0)
    if name == "PAM4":
        return np.array([-3.0, -1.0, 1.0, 3.0], dtype=complex) / np.sqrt(5.0)
    raise KeyError(name)


def _gaussian_taps(bt: float, span: int, sps: int) -> np.ndarray:
    t = np.arange(-span * sps / 2, span * sps / 2 + 1) / sps
    alpha = np.sqrt(np.log(2.0)) / bt
    taps = np.sqrt(np.pi) / alpha * np.exp(-((np.pi * t / alpha) ** 2))
    return taps / taps.sum()


def _clean_signal(mod: str, length: int, rng: np.random.Generator) -> np.ndarray:
    sps = SAMPLES_PER_SYMBOL
    nsym = -(-length // sps)
    if mod in ("BPSK", "QPSK", "PSK8", "QAM16", "PAM4"):
        points = _constellation(mod)
        symbols = points[rng.integers(0, points.size, nsym)]
        return np.repeat(symbols, sps)[:length]
    if mod in ("CPFSK", "GFSK"):
        # binary FSK, modulation index 0.5, continuous phase
        bits = rng.integers(0, 2, nsym) * 2.0 - 1.0
        freq = np.repeat(bits, sps)
        if mod == "GFSK":
            freq = np.convolve(freq, _gaussian_taps(0.35, 4, sps), mode="same")
        phase = rng.uniform(0, 2 * np.pi) + np.cumsum(np.pi * 0.5 * freq / sps)
        return np.exp(1j * phase)[:length]
    t = np.arange(length)
    tone = np.cos(2 * np.pi * rng.uniform(0.01, 0.05) * t + rng.uniform(0, 2 * np.pi))
    if mod == "AMDSB":
        return (np.sqrt(2.0) * tone).astype(complex)
    if mod == "WBFM":
        phase = rng.uniform(0, 2 * np.pi) + 2 * np.pi * 0.1 * np.cumsum(tone)
        return np.exp(1j * phase)
    raise KeyError(mod)


def generate_components(mod: str, snr_db: int, length: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(clean, noise)`` complex vectors whose sum is the synthetic frame.

    The noise is white Gaussian, drawn independently per channel, then
    rescaled so the frame-level power ratio is exactly ``snr_db``.
    """
    if mod not in MODULATIONS:
        raise ValueError(f"unknown modulation {mod!r}; expected one of {', '.join(MODULATIONS)}")
    if length < SAMPLES_PER_SYMBOL:
        raise ValueError(f"length must be >= {SAMPLES_PER_SYMBOL}, got {length}")
    rng = np.random.default_rng(seed)
    clean = _clean_signal(mod, length, rng)
    raw = rng.standard_normal((2, length))
    noise = raw[0] + 1j * raw[1]
    signal_power = np.mean(np.abs(clean) ** 2)
    target = signal_power / 10.0 ** (snr_db / 10.0)
    noise *= np.sqrt(target / np.mean(np.abs(noise) ** 2))
    return clean, noise


def generate_synthetic(mod: str, snr_db: int, length: int, seed: int) -> IQFrame:
    """Synthesize one noisy I/Q frame of modulation ``mod``.

    Digital classes use random symbols at 8 samples/symbol with rectangular
    pulses; FSK classes are continuous-phase; AMDSB and WBFM carry a random
    tone. Deterministic given ``seed``.
    """
    clean, noise = generate_components(mod, snr_db, length, seed)
    x = clean + noise
    return IQFrame(x.real, x.imag)


def synthesize_dataset(
    classes: Sequence[str],
    snrs: Sequence[int],
    per_cell: int,
    length: int,
    seed: int,
) -> Dataset:
    """Build a dataset with ``per_cell`` frames for every (class, snr) pair."""
    if per_cell < 1:
        raise ValueError("per_cell must be positive")
    for c in classes:
        if c not in MODULATIONS:
            raise ValueError(f"unknown modulation {c!r}")
    total = len(classes) * len(snrs) * per_cell
    signals = np.empty((total, 2, length), dtype=np.float32)
    labels = np.empty(total, dtype=np.int64)
    snr_arr = np.empty(total, dtype=np.int64)
    k = 0
    for ci, mod in enumerate(classes):
        for si, snr in enumerate(snrs):
            for rep in range(per_cell):
                frame_seed = np.random.SeedSequence([seed, ci, si, rep]).generate_state(1)[0]
                frame = generate_synthetic(mod, int(snr), length, int(frame_seed))
                signals[k] = frame.as_array()
                labels[k] = ci
                snr_arr[k] = snr
                k += 1
    return Dataset(tuple(classes), signals, labels, snr_arr)


# ---------------------------------------------------------------------------
# container I/O

_HEADER = struct.Struct("<4sIIII")


def _frame_dtype(n: int) -> np.dtype:
    return np.dtype([("label", "u1"), ("snr", "i1"), ("i", "<f4", (n,)), ("q", "<f4", (n,))])


def dataset_to_bytes(dataset: Dataset) -> bytes:
    m, n = dataset.num_classes, dataset.frame_length
    if m > 256:
        raise ValueError("container stores labels as u8; at most 256 classes")
    if len(dataset) and (dataset.snrs.min() < -128 or dataset.snrs.max() > 127):
        raise ValueError("container stores snr_db as i8")
    parts = [_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, m, n, len(dataset))]
    for name in dataset.class_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    rec = np.empty(len(dataset), dtype=_frame_dtype(n))
    rec["label"] = dataset.labels
    rec["snr"] = dataset.snrs
    rec["i"] = dataset.signals[:, 0, :]
    rec["q"] = dataset.signals[:, 1, :]
    parts.append(rec.tobytes())
    return b"".join(parts)


def dataset_from_bytes(buf: bytes) -> Dataset:
    if len(buf) < 4:
        raise TruncatedFileError("file shorter than the magic number")
    if buf[:4] != DATASET_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {DATASET_MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedFileError("truncated header")
    _, version, m, n, count = _HEADER.unpack_from(buf)
    if version != DATASET_VERSION:
        raise VersionMismatchError(f"container version {version}, expected {DATASET_VERSION}")
    pos = _HEADER.size
    names = []
    for _ in range(m):
        if pos + 2 > len(buf):
            raise TruncatedFileError("truncated class-name table")
        (size,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + size > len(buf):
            raise TruncatedFileError("truncated class name")
        names.append(buf[pos:pos + size].decode("utf-8"))
        pos += size
    dtype = _frame_dtype(n)
    need = dtype.itemsize * count
    if len(buf) - pos < need:
        have = (len(buf) - pos) // dtype.itemsize
        raise TruncatedFileError(f"truncated at frame {have} of {count}")
    rec = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    labels = rec["label"].astype(np.int64)
    if count and labels.max() >= m:
        bad = int(np.argmax(labels >= m))
        raise LabelOutOfRangeError(f"frame {bad}: label {labels[bad]} >= class count {m}")
    signals = np.stack([rec["i"], rec["q"]], axis=1)
    return Dataset(tuple(names), signals, labels, rec["snr"].astype(np.int64))


def write_dataset(dataset: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(dataset))


def read_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# splitting


def _round_half_down(x: float) -> int:
    return math.ceil(x - 0.5)


def stratified_indices(labels, snrs, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split indices so every (label, snr) cell contributes its rounded share.

    Per cell, ``round(train_fraction * size)`` frames go to the train side,
    with exact halves rounded toward the test side.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    labels = np.asarray(labels)
    snrs = np.asarray(snrs)
    if labels.size == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    keys = np.stack([labels, snrs], axis=1)
    cells, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(cells) + 1))
    train_parts = []
    for c in range(len(cells)):
        members = order[bounds[c]:bounds[c + 1]]
        k = _round_half_down(train_fraction * members.size)
        train_parts.append(rng.permutation(members)[:k])
    train = np.sort(np.concatenate(train_parts))
    mask = np.ones(labels.size, dtype=bool)
    mask[train] = False
    return train, np.flatnonzero(mask)


def split_stratified(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    train, test = stratified_indices(dataset.labels, dataset.snrs, train_fraction, seed)
    return dataset.subset(train), dataset.subset(test)


def split_random(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Frame-level random split, ignoring class and SNR strata."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    k = _round_half_down(train_fraction * len(dataset))
    return dataset.subset(np.sort(perm[:k])), dataset.subset(np.sort(perm[k:]))
