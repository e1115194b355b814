"""Procedural single-person motion clips, used as mixing sources when no mocap is at hand.

Each clip is a rigid 13-joint skeleton walking, jogging, turning or idling
along a smooth ground path, y up, meters. Bone lengths are constant within
a clip.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .augment import rotate_points
from .scene import Scene, SkeletonDef

JOINTS = ("neck", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
          "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle")
SKELETON = SkeletonDef.from_names(JOINTS, "neck")
BONES = ((0, 1), (0, 2), (1, 3), (2, 4), (3, 5), (4, 6), (0, 7), (0, 8), (7, 9), (8, 10), (9, 11), (10, 12))

ACTIONS = ("walk", "walk", "turn", "jog", "idle")


def _limb(start, angle, length):
    """Segment hanging from ``start`` swung by ``angle`` in the sagittal (y, z) plane."""
    return start + length[..., None] * np.stack([np.zeros_like(angle), -np.cos(angle), np.sin(angle)], axis=-1)


def procedural_clip(rng: np.random.Generator, n_frames: int, fps: float = 15.0,
                    action: str | None = None) -> np.ndarray:
    """One person's ``[F, 13, 3]`` global joint trajectory."""
    action = action or ACTIONS[int(rng.integers(len(ACTIONS)))]
    dt = 1.0 / fps
    time = np.arange(n_frames) * dt
    size = rng.uniform(0.9, 1.1)
    torso, shoulder_w, hip_w = 0.5 * size, 0.36 * size, 0.2 * size
    upper_arm, forearm, thigh, shin = (np.full(n_frames, x * size) for x in (0.28, 0.25, 0.42, 0.42))

    base = {"walk": rng.uniform(0.8, 1.6), "turn": rng.uniform(0.6, 1.3),
            "jog": rng.uniform(2.0, 3.0), "idle": 0.0}[action]
    speed = np.clip(base * (1.0 + rng.uniform(0.0, 0.25) * np.sin(2 * np.pi * rng.uniform(0.05, 0.2) * time
                                                                    + rng.uniform(0, 2 * np.pi))), 0.0, None)
    turn_rate = {"turn": rng.uniform(0.3, 0.8) * rng.choice([-1.0, 1.0])}.get(action, rng.normal(0.0, 0.1))
    heading = rng.uniform(0, 2 * np.pi) + turn_rate * time
    step = speed * dt
    ground = np.cumsum(np.stack([np.sin(heading) * step, np.cos(heading) * step], axis=1), axis=0)
    ground += rng.uniform(-3.0, 3.0, size=2) - ground[0]

    cadence = 0.8 + 0.45 * speed if action != "idle" else 0.0
    phase = np.cumsum(2 * np.pi * cadence * dt) + rng.uniform(0, 2 * np.pi)
    amp = min(speed.mean() / 1.4, 1.3) * 0.45
    legs = amp * np.sin(phase)
    arms = -0.6 * amp * np.sin(phase)
    if action == "idle":
        sway = 0.05 * np.sin(2 * np.pi * rng.uniform(0.2, 0.5) * time + rng.uniform(0, 2 * np.pi))
        legs, arms = legs + sway, arms + 2 * sway
    knee = 0.6 * amp * np.clip(np.sin(phase + np.pi / 2), 0.0, None)
    knee_r = 0.6 * amp * np.clip(np.sin(phase - np.pi / 2), 0.0, None)

    pelvis_y = 0.95 * size + 0.02 * np.abs(np.sin(phase)) * (speed > 0)
    pelvis = np.stack([np.zeros(n_frames), pelvis_y, np.zeros(n_frames)], axis=1)
    lean = 0.05 + 0.04 * speed
    neck = pelvis + np.stack([np.zeros(n_frames), torso * np.cos(lean), torso * np.sin(lean)], axis=1)
    lat = np.array([1.0, 0.0, 0.0])
    l_sh, r_sh = neck + lat * shoulder_w / 2, neck - lat * shoulder_w / 2
    l_el, r_el = _limb(l_sh, arms, upper_arm), _limb(r_sh, -arms, upper_arm)
    l_wr, r_wr = _limb(l_el, arms + 0.3, forearm), _limb(r_el, -arms + 0.3, forearm)
    l_hip, r_hip = pelvis + lat * hip_w / 2, pelvis - lat * hip_w / 2
    l_kn, r_kn = _limb(l_hip, legs, thigh), _limb(r_hip, -legs, thigh)
    l_an, r_an = _limb(l_kn, legs - knee, shin), _limb(r_kn, -legs - knee_r, shin)
    local = np.stack([neck, l_sh, r_sh, l_el, r_el, l_wr, r_wr, l_hip, r_hip, l_kn, r_kn, l_an, r_an], axis=1)

    out = np.empty_like(local)
    for f in range(n_frames):
        out[f] = rotate_points(local[f], heading[f], coord_axis=-1)
    out[..., 0] += ground[:, 0:1]
    out[..., 2] += ground[:, 1:2]
    return out


def procedural_sources(n: int, n_frames: int, fps: float = 15.0, seed: int = 0) -> list[Scene]:
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(n):
        action = ACTIONS[i % len(ACTIONS)]
        clip = procedural_clip(rng, n_frames, fps, action)
        scenes.append(Scene(fps, SKELETON, (clip,), (f"{action}{i:04d}",)))
    return scenes


def select_joints(scene: Scene, names, root: str | None = None) -> Scene:
    """Restrict a scene to a subset of its joints."""
    idx = [scene.skeleton.joint_names.index(n) for n in names]
    skel = SkeletonDef.from_names(names, root or names[0])
    return replace(scene, skeleton=skel, persons=tuple(p[:, idx] for p in scene.persons))
