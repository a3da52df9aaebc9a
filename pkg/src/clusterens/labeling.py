"""Cluster labelings: the length-n id vector shared by every stage.

A labeling assigns an integer cluster id to each sample; ids are arbitrary
until :func:`canonicalize` remaps them to 1..k in order of first appearance.
Serialized either as an ``LBL1`` binary or as one id per line of text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LoadError

LABELING_MAGIC = b"LBL1"


@dataclass(frozen=True)
class Labeling:
    """Immutable per-sample cluster-id vector."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("labels must be a nonempty 1-D vector")
        if not np.issubdtype(arr.dtype, np.integer):
            as_int = np.asarray(arr, dtype=np.int64)
            if not np.array_equal(as_int, arr):
                raise ValueError("cluster ids must be integers")
            arr = as_int
        arr = np.array(arr, dtype=np.int64, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def k(self) -> int:
        """Number of distinct cluster ids present."""
        return int(np.unique(self.labels).size)

    def same_grouping(self, other: "Labeling") -> bool:
        """True when both labelings induce the same partition."""
        if self.n != other.n:
            return False
        return np.array_equal(
            canonicalize(self).labels, canonicalize(other).labels
        )


def canonicalize(labeling: Labeling) -> Labeling:
    """Remap ids to 1..k in order of first appearance; grouping unchanged."""
    _, first_pos, inverse = np.unique(
        labeling.labels, return_index=True, return_inverse=True
    )
    appearance_rank = np.argsort(np.argsort(first_pos))
    return Labeling(appearance_rank[inverse] + 1)


def save_labeling(labeling: Labeling, path) -> None:
    """Write the ``LBL1`` binary form (u32 n, then u32 id per sample)."""
    ids = labeling.labels
    if ids.min() < 0 or ids.max() >= 2**32:
        raise ValueError("binary labeling ids must fit an unsigned 32-bit int")
    with open(path, "wb") as f:
        f.write(LABELING_MAGIC)
        f.write(np.uint32(labeling.n).tobytes())
        f.write(ids.astype("<u4").tobytes())


def save_labeling_text(labeling: Labeling, path) -> None:
    """Write one cluster id per line."""
    with open(path, "w", encoding="utf-8") as f:
        for v in labeling.labels:
            f.write(f"{int(v)}\n")


def load_labeling(path) -> Labeling:
    """Load a labeling, sniffing binary ``LBL1`` vs one-id-per-line text."""
    with open(path, "rb") as f:
        head = f.read(4)
        if head == LABELING_MAGIC:
            raw = f.read(4)
            if len(raw) != 4:
                raise LoadError(f"{path}: truncated labeling header")
            n = int(np.frombuffer(raw, dtype="<u4")[0])
            if n < 1:
                raise LoadError(f"{path}: labeling declares {n} samples")
            payload = f.read()
            if len(payload) != 4 * n:
                raise LoadError(
                    f"{path}: payload holds {len(payload) // 4} ids, header declares {n}"
                )
            return Labeling(np.frombuffer(payload, dtype="<u4").astype(np.int64))
    try:
        text = open(path, "r", encoding="utf-8").read()
        values = [int(line) for line in text.split() if line]
    except (UnicodeDecodeError, ValueError) as exc:
        raise LoadError(f"{path}: not a labeling file: {exc}") from exc
    if not values:
        raise LoadError(f"{path}: empty labeling file")
    return Labeling(np.asarray(values, dtype=np.int64))
