# coding: utf-8

# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.
"""Per-channel affine transforms

A ChannelAffine ``(scale, shift)`` maps a tensor ``x`` to ``scale * x + shift``
along the channel axis (axis 1). It is the quantity pushed through the graph
while folding a batch normalization node.
"""

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np


class FoldError(ValueError):
    """Base class for errors raised while analysing or applying a fold."""

    def __init__(self, node_id, message):
        super().__init__("%s: %s" % (node_id, message))
        self.node_id = node_id


class NonInvertibleAffine(FoldError):
    pass


def _vector(value, name):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("%s must be a vector, got %d dimensions" % (name, arr.ndim))
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ChannelAffine:
    scale: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        scale = _vector(self.scale, "scale")
        shift = _vector(self.shift, "shift")
        if scale.shape != shift.shape:
            raise ValueError(
                "scale and shift lengths differ: %d != %d" % (len(scale), len(shift))
            )
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "shift", shift)

    @classmethod
    def identity(cls, channels: int) -> "ChannelAffine":
        return cls(np.ones(channels), np.zeros(channels))

    @classmethod
    def concat(cls, parts: Iterable["ChannelAffine"]) -> "ChannelAffine":
        parts = list(parts)
        return cls(
            np.concatenate([p.scale for p in parts]),
            np.concatenate([p.shift for p in parts]),
        )

    @property
    def channels(self) -> int:
        return len(self.scale)

    def __len__(self):
        return self.channels

    def __repr__(self):
        return "ChannelAffine(scale=%r, shift=%r)" % (self.scale.tolist(), self.shift.tolist())

    def is_identity(self) -> bool:
        return bool(np.all(self.scale == 1.0) and np.all(self.shift == 0.0))

    def is_invertible(self) -> bool:
        return bool(np.all(self.scale != 0.0))

    def isclose(self, other: "ChannelAffine", rtol=1e-9, atol=1e-12) -> bool:
        return (
            self.channels == other.channels
            and bool(np.allclose(self.scale, other.scale, rtol=rtol, atol=atol))
            and bool(np.allclose(self.shift, other.shift, rtol=rtol, atol=atol))
        )

    def compose(self, inner: "ChannelAffine") -> "ChannelAffine":
        """Return ``self ∘ inner``, the transform applying ``inner`` first."""
        return ChannelAffine(self.scale * inner.scale, self.scale * inner.shift + self.shift)

    def inverse(self, node_id: Optional[str] = None) -> "ChannelAffine":
        if not self.is_invertible():
            zeros = np.flatnonzero(self.scale == 0.0).tolist()
            raise NonInvertibleAffine(node_id, "zero scale on channels %s" % zeros)
        return ChannelAffine(1.0 / self.scale, -self.shift / self.scale)

    def conjugate(self, outer: "ChannelAffine") -> "ChannelAffine":
        """Return ``outer ∘ self ∘ outer⁻¹``.

        Scales commute, so no division is needed and ``outer`` may have
        zero entries.
        """
        return ChannelAffine(
            self.scale, outer.scale * self.shift + outer.shift - self.scale * outer.shift
        )

    def conjugate_inverse(self, outer: "ChannelAffine", node_id=None) -> "ChannelAffine":
        """Return ``outer⁻¹ ∘ self ∘ outer``."""
        if not outer.is_invertible():
            raise NonInvertibleAffine(node_id, "cannot push through a zero-scale channel")
        return ChannelAffine(
            self.scale, (self.scale * outer.shift + self.shift - outer.shift) / outer.scale
        )

    def slice(self, start: int, stop: int) -> "ChannelAffine":
        return ChannelAffine(self.scale[start:stop], self.shift[start:stop])

    def repeat(self, positions: int) -> "ChannelAffine":
        """Broadcast each channel over ``positions`` consecutive entries (row-major flatten)."""
        return ChannelAffine(np.repeat(self.scale, positions), np.repeat(self.shift, positions))

    def collapse(self, positions: int) -> Optional["ChannelAffine"]:
        """Inverse of :meth:`repeat`, or None when a group is not constant."""
        if self.channels % positions:
            return None
        scale = self.scale.reshape(-1, positions)
        shift = self.shift.reshape(-1, positions)
        if np.any(scale != scale[:, :1]) or np.any(shift != shift[:, :1]):
            return None
        return ChannelAffine(scale[:, 0], shift[:, 0])

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply to a batched tensor whose channel axis is 1."""
        shape = (1, self.channels) + (1,) * (x.ndim - 2)
        return x * self.scale.reshape(shape) + self.shift.reshape(shape)

    def to_dict(self):
        return {"scale": self.scale.tolist(), "shift": self.shift.tolist()}


__all__ = ["ChannelAffine", "FoldError", "NonInvertibleAffine"]
