"""Training-time augmentations of trajectory windows, applied in a fixed order."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .scene import Scene, TrajectoryWindow, fit_slots


@dataclass(frozen=True)
class AugmentConfig:
    rotate: bool = True
    reverse_prob: float = 0.5
    permute: bool = True

    def __post_init__(self):
        if not 0.0 <= self.reverse_prob <= 1.0:
            raise ValueError(f"reverse_prob must lie in [0, 1], got {self.reverse_prob}")

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(rotate=False, reverse_prob=0.0, permute=False)


def rotate_points(arr, theta: float, coord_axis: int = -1) -> np.ndarray:
    """Rotate xyz coordinates about the y axis by ``theta`` radians.

    ``x' = x cos + z sin``, ``y' = y``, ``z' = -x sin + z cos``.
    """
    if not np.isfinite(theta):
        raise ValueError(f"rotation angle must be finite, got {theta}")
    arr = np.asarray(arr, dtype=np.float64)
    a = np.moveaxis(arr, coord_axis, 0)
    c, s = np.cos(theta), np.sin(theta)
    out = np.stack([a[0] * c + a[2] * s, a[1], -a[0] * s + a[2] * c])
    return np.moveaxis(out, 0, coord_axis)


def rotate_scene(obj, theta: float):
    """Rotate a window (coordinates on axis -2) or a Scene about the vertical axis."""
    if isinstance(obj, Scene):
        return replace(obj, persons=tuple(rotate_points(p, theta, -1) for p in obj.persons))
    future = None if obj.future is None else rotate_points(obj.future, theta, -2)
    offsets = None if obj.root_offsets is None else rotate_points(obj.root_offsets, theta, -1)
    return obj.with_arrays(rotate_points(obj.history, theta, -2), future, root_offsets=offsets)


def reverse_window(window: TrajectoryWindow) -> TrajectoryWindow:
    """Play the full history+future sequence backwards and re-split at ``t``.

    Root offsets refer to the old last history frame and are dropped.
    """
    full = window.full()[..., ::-1]
    t = window.t
    future = None if window.future is None else full[..., t:]
    return window.with_arrays(full[..., :t], future, root_offsets=None)


def permute_persons(window: TrajectoryWindow, perm) -> TrajectoryWindow:
    """Move the person in slot ``perm[i]`` to slot ``i``.

    Data, mask and offsets move together; a person's joints stay together.
    """
    perm = np.asarray(perm)
    n = window.n_slots
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError(f"{perm.tolist()} is not a permutation of {n} slots")
    future = None if window.future is None else window.future[perm]
    offsets = None if window.root_offsets is None else window.root_offsets[perm]
    return window.with_arrays(window.history[perm], future, mask=window.mask[perm], root_offsets=offsets)


def augment_window(window: TrajectoryWindow, cfg: AugmentConfig, rng: np.random.Generator,
                   n_slots: int | None = None) -> TrajectoryWindow:
    """Apply reverse, then rotate, then permute.

    Random draws are taken in a fixed order whether or not an augmentation
    is enabled, so toggling one does not shift the others' streams.
    """
    u_rev = rng.random()
    theta = rng.uniform(0.0, 2.0 * np.pi)
    if n_slots is not None:
        window = fit_slots(window, n_slots)
    perm = rng.permutation(window.n_slots)
    if u_rev < cfg.reverse_prob:
        window = reverse_window(window)
    if cfg.rotate:
        window = rotate_scene(window, theta)
    if cfg.permute:
        window = permute_persons(window, perm)
    return window
