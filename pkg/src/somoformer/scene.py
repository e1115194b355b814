"""Scenes and the trajectory windows cut from them.

A :class:`Scene` stores each person as a frame-major ``[F, J, 3]`` array in
global coordinates (y up, meters). A :class:`TrajectoryWindow` is the
model-facing layout ``[N, J, 3, frames]`` split into history and future.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class SceneFormatError(ValueError):
    """A scene file could not be parsed or failed validation."""


@dataclass(frozen=True)
class SkeletonDef:
    joint_names: tuple[str, ...]
    root_joint: int

    def __post_init__(self):
        if len(set(self.joint_names)) != len(self.joint_names):
            dup = sorted({n for n in self.joint_names if self.joint_names.count(n) > 1})
            raise SceneFormatError(f"duplicate joint names: {dup}")
        if not 0 <= self.root_joint < len(self.joint_names):
            raise SceneFormatError(f"root joint index {self.root_joint} out of range for {len(self.joint_names)} joints")

    @classmethod
    def from_names(cls, names, root: str) -> "SkeletonDef":
        names = tuple(names)
        if root not in names:
            raise SceneFormatError(f"root joint {root!r} is not one of the joint names")
        return cls(names, names.index(root))

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def root_name(self) -> str:
        return self.joint_names[self.root_joint]


@dataclass(frozen=True)
class Scene:
    fps: float
    skeleton: SkeletonDef
    persons: tuple[np.ndarray, ...]
    ids: tuple[str, ...] = ()
    units: str = "m"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        persons = tuple(_frozen(np.asarray(p, dtype=np.float64)) for p in self.persons)
        object.__setattr__(self, "persons", persons)
        if not self.ids:
            object.__setattr__(self, "ids", tuple(f"p{i}" for i in range(len(persons))))
        _validate_persons(persons, self.skeleton.n_joints)
        if len(self.ids) != len(persons):
            raise SceneFormatError(f"{len(self.ids)} ids for {len(persons)} persons")

    @property
    def n_frames(self) -> int:
        return self.persons[0].shape[0]

    @property
    def n_persons(self) -> int:
        return len(self.persons)

    @property
    def n_joints(self) -> int:
        return self.skeleton.n_joints


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _validate_persons(persons, n_joints: int) -> None:
    if not persons:
        raise SceneFormatError("scene has no persons")
    frames = persons[0].shape[0] if persons[0].ndim == 3 else None
    for i, p in enumerate(persons):
        if p.ndim != 3 or p.shape[1:] != (n_joints, 3):
            raise SceneFormatError(f"person {i}: joints array has shape {p.shape}, expected [F, {n_joints}, 3]")
        if p.shape[0] != frames:
            raise SceneFormatError(f"person {i}: {p.shape[0]} frames, person 0 has {frames}")
        if p.shape[0] < 1:
            raise SceneFormatError(f"person {i}: no frames")
        bad = np.argwhere(~np.isfinite(p))
        if len(bad):
            f, j, c = bad[0]
            raise SceneFormatError(f"person {i}, frame {f}, joint {j} ({'xyz'[c]}): non-finite coordinate {p[f, j, c]}")


# ---------------------------------------------------------------- file I/O

def scene_to_dict(scene: Scene) -> dict:
    out = {
        "fps": scene.fps,
        "units": scene.units,
        "skeleton": {"names": list(scene.skeleton.joint_names), "root": scene.skeleton.root_name},
        "persons": [{"id": pid, "joints": p.tolist()} for pid, p in zip(scene.ids, scene.persons)],
    }
    if scene.meta:
        out["meta"] = scene.meta
    return out


def scene_from_dict(obj: dict, source: str = "<scene>") -> Scene:
    try:
        skel = obj["skeleton"]
        skeleton = SkeletonDef.from_names(skel["names"], skel["root"])
        fps = obj["fps"]
        units = obj.get("units", "m")
        persons, ids = [], []
        for i, rec in enumerate(obj["persons"]):
            ids.append(str(rec.get("id", f"p{i}")))
            try:
                persons.append(np.asarray(rec["joints"], dtype=np.float64))
            except (ValueError, TypeError) as exc:
                raise SceneFormatError(f"person {i}: joints array is ragged or non-numeric") from exc
    except (KeyError, TypeError) as exc:
        raise SceneFormatError(f"{source}: missing or malformed field {exc}") from exc
    if not isinstance(fps, (int, float)) or not fps > 0:
        raise SceneFormatError(f"{source}: fps must be a positive number, got {fps!r}")
    if units != "m":
        raise SceneFormatError(f"{source}: unsupported units {units!r} (expected 'm')")
    try:
        return Scene(float(fps), skeleton, tuple(persons), tuple(ids), units, dict(obj.get("meta", {})))
    except SceneFormatError as exc:
        raise SceneFormatError(f"{source}: {exc}") from None


def load_scene(path) -> Scene:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise SceneFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}: {line[:80]!r}") from None
    return scene_from_dict(obj, str(path))


def save_scene(scene: Scene, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(scene_to_dict(scene)), encoding="utf-8")
    os.replace(tmp, path)


def list_scene_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    return sorted(p for p in directory.glob("*.json") if p.name != "manifest.json")


def load_dataset(directory) -> list[Scene]:
    files = list_scene_files(directory)
    if not files:
        raise FileNotFoundError(f"no scene files in {directory}")
    return [load_scene(f) for f in files]


# ---------------------------------------------------------------- windows

@dataclass(frozen=True, eq=False)
class TrajectoryWindow:
    """History/future split of a multi-person sequence.

    ``history`` is ``[N, J, 3, t]``, ``future`` ``[N, J, 3, T]`` (None at
    inference), ``mask`` ``[N]`` marks real person slots. ``root_offsets``
    is set once translation has been removed.
    """

    history: np.ndarray
    future: np.ndarray | None
    mask: np.ndarray
    root_offsets: np.ndarray | None = None
    start: int = 0
    origin: "TrajectoryWindow | None" = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "history", _frozen(self.history))
        if self.future is not None:
            object.__setattr__(self, "future", _frozen(self.future))
            if self.future.shape[:3] != self.history.shape[:3]:
                raise ValueError(f"future {self.future.shape} and history {self.history.shape} disagree")
        mask = np.array(self.mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        if self.root_offsets is not None:
            object.__setattr__(self, "root_offsets", _frozen(self.root_offsets))
        if mask.shape != (self.history.shape[0],):
            raise ValueError(f"mask shape {mask.shape} does not match {self.history.shape[0]} slots")

    @property
    def t(self) -> int:
        return self.history.shape[-1]

    @property
    def T(self) -> int:
        return 0 if self.future is None else self.future.shape[-1]

    @property
    def n_slots(self) -> int:
        return self.history.shape[0]

    @property
    def n_joints(self) -> int:
        return self.history.shape[1]

    @property
    def n_real(self) -> int:
        return int(self.mask.sum())

    def full(self) -> np.ndarray:
        if self.future is None:
            return self.history
        return np.concatenate([self.history, self.future], axis=-1)

    def with_arrays(self, history, future, **changes) -> "TrajectoryWindow":
        return replace(self, history=history, future=future, origin=None, **changes)

    def same_as(self, other: "TrajectoryWindow") -> bool:
        """Bitwise equality of every array field."""
        def eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()
        return (eq(self.history, other.history) and eq(self.future, other.future)
                and eq(self.mask, other.mask) and eq(self.root_offsets, other.root_offsets))


def _scene_array(scene: Scene) -> np.ndarray:
    """``[N, J, 3, F]`` view of all persons."""
    return np.stack(scene.persons).transpose(0, 2, 3, 1)


def window_at(scene: Scene, start: int, t: int, T: int) -> TrajectoryWindow:
    if t < 1 or T < 0:
        raise ValueError(f"need t >= 1 and T >= 0, got t={t}, T={T}")
    if start < 0 or start + t + T > scene.n_frames:
        raise ValueError(f"window [{start}, {start + t + T}) exceeds the scene's {scene.n_frames} frames")
    arr = _scene_array(scene)[..., start:start + t + T]
    return TrajectoryWindow(arr[..., :t], arr[..., t:] if T else None,
                            np.ones(scene.n_persons, dtype=bool), start=start)


def sample_window(scene: Scene, t: int, T: int, rng: np.random.Generator) -> TrajectoryWindow:
    """Window starting at a frame drawn uniformly from every valid start."""
    if scene.n_frames < t + T:
        raise ValueError(f"scene has {scene.n_frames} frames, window needs t+T={t + T}")
    start = int(rng.integers(0, scene.n_frames - (t + T) + 1))
    return window_at(scene, start, t, T)


def tile_windows(scene: Scene, t: int, T: int) -> list[TrajectoryWindow]:
    """Non-overlapping windows from frame 0, for deterministic evaluation."""
    n = t + T
    return [window_at(scene, s, t, T) for s in range(0, scene.n_frames - n + 1, n)]


def pad_future(history, T: int) -> np.ndarray:
    """Append ``T`` copies of the last frame along the last axis."""
    history = np.asarray(history, dtype=np.float64)
    if history.shape[-1] < 1:
        raise ValueError("history must contain at least one frame")
    last = history[..., -1:]
    return np.concatenate([history, np.repeat(last, T, axis=-1)], axis=-1)


def remove_translation(window: TrajectoryWindow, skeleton: SkeletonDef | int):
    """Subtract each real person's root position at the last history frame.

    Returns ``(local_window, root_offsets)``. The local window keeps a
    reference to its global source so that :func:`restore_translation`
    can return it exactly.
    """
    root = skeleton if isinstance(skeleton, int) else skeleton.root_joint
    offsets = np.where(window.mask[:, None], window.history[:, root, :, -1], 0.0)
    shift = offsets[:, None, :, None]
    future = None if window.future is None else window.future - shift
    local = replace(window, history=window.history - shift, future=future,
                    root_offsets=offsets, origin=window)
    return local, local.root_offsets


def restore_translation(local: TrajectoryWindow, root_offsets=None) -> TrajectoryWindow:
    """Inverse of :func:`remove_translation`."""
    offsets = local.root_offsets if root_offsets is None else np.asarray(root_offsets, dtype=np.float64)
    if offsets is None:
        raise ValueError("restore_translation: no root offsets supplied or stored on the window")
    if offsets.shape != (local.n_slots, 3):
        raise ValueError(f"root offsets have shape {offsets.shape}, expected ({local.n_slots}, 3)")
    if (local.origin is not None and local.root_offsets is not None
            and offsets.tobytes() == local.root_offsets.tobytes()):
        return local.origin
    shift = offsets[:, None, :, None]
    future = None if local.future is None else local.future + shift
    return replace(local, history=local.history + shift, future=future, root_offsets=None, origin=None)


# ---------------------------------------------------------------- synthetic mixing

def _check_compatible(sources) -> None:
    s0 = sources[0]
    for i, s in enumerate(sources[1:], 1):
        if s.skeleton != s0.skeleton:
            raise ValueError(f"source {i} skeleton differs from source 0")
        if s.fps != s0.fps:
            raise ValueError(f"source {i} fps {s.fps} differs from source 0 fps {s0.fps}")


def mix_scenes(sources, n_persons: int, t: int, T: int, rng: np.random.Generator,
               area: float = 4.0, rotate: bool = False) -> Scene:
    """Build a multi-person scene from single-person clips of distinct sources.

    Each clip of ``t+T`` frames is optionally rotated about the vertical
    axis, then moved rigidly so its root sits at a uniform random point of
    an ``area`` x ``area`` square on the ground plane at the last history
    frame.
    """
    from .augment import rotate_points

    sources = list(sources)
    if n_persons < 1:
        raise ValueError("n_persons must be at least 1")
    if len(sources) < n_persons:
        raise ValueError(f"need {n_persons} distinct sources, got {len(sources)}")
    _check_compatible(sources)
    n = t + T
    short = [i for i, s in enumerate(sources) if s.n_frames < n]
    if short:
        raise ValueError(f"sources {short} have fewer than t+T={n} frames")
    root = sources[0].skeleton.root_joint
    picks = rng.choice(len(sources), size=n_persons, replace=False)
    persons, ids = [], []
    for k in picks:
        src = sources[int(k)]
        who = int(rng.integers(src.n_persons))
        start = int(rng.integers(0, src.n_frames - n + 1))
        clip = np.array(src.persons[who][start:start + n])
        if rotate:
            clip = rotate_points(clip, rng.uniform(0.0, 2.0 * np.pi), coord_axis=-1)
        anchor = clip[t - 1, root].copy()
        target = rng.uniform(-area / 2, area / 2, size=2)
        clip[..., 0] += target[0] - anchor[0]
        clip[..., 2] += target[1] - anchor[2]
        persons.append(clip)
        ids.append(f"{src.ids[who]}@{k}:{start}")
    return Scene(sources[0].fps, sources[0].skeleton, tuple(persons), tuple(ids))


# ---------------------------------------------------------------- batching

@dataclass(frozen=True)
class Batch:
    history: np.ndarray            # [B, N, J, 3, t]
    future: np.ndarray | None      # [B, N, J, 3, T]
    mask: np.ndarray               # [B, N] bool
    offsets: np.ndarray | None     # [B, N, 3]

    @property
    def size(self) -> int:
        return self.history.shape[0]


def fit_slots(window: TrajectoryWindow, n_slots: int) -> TrajectoryWindow:
    """Give ``window`` exactly ``n_slots`` slots.

    Extra slots are appended zero-filled and masked. Windows with more slots
    than ``n_slots`` are compacted to their real persons.
    """
    if window.n_slots == n_slots:
        return window
    if window.n_real > n_slots:
        raise ValueError(f"window has {window.n_real} real persons, only {n_slots} slots available")
    if window.n_slots > n_slots:
        keep = np.flatnonzero(window.mask)
    else:
        keep = np.arange(window.n_slots)
    pad = n_slots - len(keep)

    def grow(a, fill_shape):
        if a is None:
            return None
        return np.concatenate([a[keep], np.zeros((pad,) + fill_shape)], axis=0)

    return TrajectoryWindow(
        grow(window.history, window.history.shape[1:]),
        grow(window.future, window.future.shape[1:]) if window.future is not None else None,
        np.concatenate([window.mask[keep], np.zeros(pad, dtype=bool)]),
        grow(window.root_offsets, (3,)),
        start=window.start,
    )


def assemble_batch(windows, n_slots: int) -> Batch:
    windows = [fit_slots(w, n_slots) for w in windows]
    if not windows:
        raise ValueError("cannot assemble an empty batch")
    w0 = windows[0]
    for w in windows[1:]:
        if (w.t, w.T, w.n_joints) != (w0.t, w0.T, w0.n_joints):
            raise ValueError(f"window shapes differ: (t, T, J) {(w.t, w.T, w.n_joints)} vs {(w0.t, w0.T, w0.n_joints)}")
    history = np.stack([np.where(w.mask[:, None, None, None], w.history, 0.0) for w in windows])
    future = None
    if all(w.future is not None for w in windows):
        future = np.stack([np.where(w.mask[:, None, None, None], w.future, 0.0) for w in windows])
    offsets = None
    if all(w.root_offsets is not None for w in windows):
        offsets = np.stack([w.root_offsets for w in windows])
    return Batch(history, future, np.stack([w.mask for w in windows]), offsets)


def unpack_batch(batch: Batch) -> list[list[np.ndarray]]:
    """Real persons of each batch row, as ``[J, 3, t+T]`` arrays in slot order."""
    full = batch.history if batch.future is None else np.concatenate([batch.history, batch.future], axis=-1)
    return [[full[b, s] for s in np.flatnonzero(batch.mask[b])] for b in range(batch.size)]
