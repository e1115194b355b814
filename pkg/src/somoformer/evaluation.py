"""Forecast metrics and benchmark sweeps, plus attention analysis helpers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .scene import Scene, TrajectoryWindow, fit_slots, tile_windows


@dataclass
class MetricReport:
    metric: str
    values: dict[int, float]           # future frame (1-based) -> value
    labels: dict[int, str] = field(default_factory=dict)
    n_windows: int = 0
    n_persons: int = 0

    @property
    def overall(self) -> float:
        return float(np.mean(list(self.values.values())))

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "horizons": [{"frame": k, "label": self.labels.get(k, f"frame {k}"), "value": v}
                         for k, v in self.values.items()],
            "overall": self.overall,
            "counts": {"windows": self.n_windows, "persons": self.n_persons, "horizons": len(self.values)},
        }

    def table(self) -> str:
        heads = [self.labels.get(k, str(k)) for k in self.values] + ["Overall"]
        vals = [f"{v:.4g}" for v in self.values.values()] + [f"{self.overall:.4g}"]
        w = max(map(len, heads + vals)) + 2
        return (f"{self.metric.upper()}\n" + "".join(h.rjust(w) for h in heads) + "\n"
                + "".join(v.rjust(w) for v in vals))


REPORT_SCHEMA = {
    "type": "object",
    "required": ["metric", "horizons", "overall", "counts"],
    "properties": {
        "metric": {"enum": ["mpjpe", "vim"]},
        "horizons": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["frame", "label", "value"],
                "properties": {"frame": {"type": "integer", "minimum": 1}, "label": {"type": "string"},
                               "value": {"type": "number", "minimum": 0}},
            },
        },
        "overall": {"type": "number", "minimum": 0},
        "counts": {
            "type": "object",
            "required": ["windows", "persons", "horizons"],
            "properties": {k: {"type": "integer", "minimum": 0} for k in ("windows", "persons", "horizons")},
        },
    },
}


# ---------------------------------------------------------------- metrics

def _prep(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.ndim == 4:
        pred, gt = pred[None], gt[None]
        mask = None if mask is None else np.asarray(mask)[None]
    mask = np.ones(pred.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match person axes {pred.shape[:2]}")
    if not mask.any():
        raise ValueError("metric over an empty mask")
    return pred, gt, mask


def _frames(horizons, T):
    frames = list(range(1, T + 1)) if horizons is None else [int(h) for h in horizons]
    bad = [f for f in frames if not 1 <= f <= T]
    if bad:
        raise ValueError(f"horizon frames {bad} outside 1..{T}")
    return frames


def per_frame_mpjpe(pred, gt, mask=None) -> np.ndarray:
    """``[T]``: mean joint distance over real persons per future frame."""
    pred, gt, mask = _prep(pred, gt, mask)
    dist = np.sqrt(((pred - gt) ** 2).sum(axis=3))      # [B, N, J, T]
    return dist[mask].mean(axis=(0, 1))


def per_person_vim(pred, gt, mask=None) -> np.ndarray:
    """``[P, T]``: norm of the flattened 3J pose difference for each real person."""
    pred, gt, mask = _prep(pred, gt, mask)
    diff = (pred - gt)[mask]                             # [P, J, 3, T]
    return np.sqrt((diff ** 2).sum(axis=(1, 2)))


def mpjpe(pred, gt, mask=None, horizon_frames=None, labels=None) -> MetricReport:
    curve = per_frame_mpjpe(pred, gt, mask)
    frames = _frames(horizon_frames, len(curve))
    p, _, m = _prep(pred, gt, mask)
    return MetricReport("mpjpe", {f: float(curve[f - 1]) for f in frames}, labels or {}, p.shape[0], int(m.sum()))


def vim(pred, gt, mask=None, horizon_frames=None, labels=None) -> MetricReport:
    per = per_person_vim(pred, gt, mask)
    frames = _frames(horizon_frames, per.shape[1])
    curve = per.mean(axis=0)
    p, _, m = _prep(pred, gt, mask)
    return MetricReport("vim", {f: float(curve[f - 1]) for f in frames}, labels or {}, p.shape[0], int(m.sum()))


METRICS = {"mpjpe": mpjpe, "vim": vim}


def zero_velocity(window: TrajectoryWindow, T: int | None = None) -> np.ndarray:
    """Future ``[N, J, 3, T]`` that holds the last observed frame."""
    T = window.T if T is None else T
    return np.repeat(window.history[..., -1:], T, axis=-1)


# ---------------------------------------------------------------- protocols

@dataclass(frozen=True)
class Protocol:
    name: str
    t: int
    T: int
    horizon_seconds: tuple[float, ...]
    labels: tuple[str, ...]
    metric: str
    fixed_frames: tuple[int, ...] | None = None

    def frames(self, fps: float) -> list[int]:
        if self.fixed_frames is not None:
            return list(self.fixed_frames)
        frames = [int(round(s * fps)) for s in self.horizon_seconds]
        bad = [f for f in frames if not 1 <= f <= self.T]
        if bad:
            raise ValueError(f"{self.name}: horizons {self.horizon_seconds} s at {fps} fps give frames "
                             f"{frames}, outside the {self.T} predicted frames")
        return frames


PROTOCOLS = {
    # 16 observed, 14 predicted; ms horizons mapped onto predicted frames
    "somof": Protocol("somof", 16, 14, (0.1, 0.24, 0.5, 0.64, 0.9),
                      ("100ms", "240ms", "500ms", "640ms", "900ms"), "vim", (2, 4, 8, 10, 14)),
    # 15 observed (1 s), 45 predicted (3 s)
    "cmu": Protocol("cmu", 15, 45, (1.0, 2.0, 3.0), ("1 sec", "2 sec", "3 sec"), "mpjpe"),
}


def protocol_windows(scenes, protocol: Protocol) -> list[TrajectoryWindow]:
    windows = []
    for i, s in enumerate(scenes):
        if s.n_frames < protocol.t + protocol.T:
            raise ValueError(f"scene {i} has {s.n_frames} frames; protocol {protocol.name} "
                             f"needs t+T={protocol.t + protocol.T}")
        windows.extend(tile_windows(s, protocol.t, protocol.T))
    return windows


def evaluate_dataset(predictor: Callable[[list[TrajectoryWindow]], np.ndarray], scenes: list[Scene],
                     protocol: Protocol | str, metrics=("vim",), scale: float = 1.0) -> dict[str, MetricReport]:
    """Score ``predictor`` on tiled protocol windows (no randomness).

    ``predictor`` maps a list of windows, all padded to the same slot count,
    to global futures ``[B, N, J, 3, T]``. ``scale`` multiplies every metric
    value (e.g. 100 for centimeters when scenes are in meters).
    """
    if isinstance(protocol, str):
        protocol = PROTOCOLS[protocol]
    if not scenes:
        raise ValueError("no scenes to evaluate")
    fps = {s.fps for s in scenes}
    if len(fps) != 1:
        raise ValueError(f"scenes mix frame rates {sorted(fps)}")
    frames = protocol.frames(fps.pop())
    labels = dict(zip(frames, protocol.labels))
    windows = protocol_windows(scenes, protocol)
    n_slots = max(w.n_slots for w in windows)
    windows = [fit_slots(w, n_slots) for w in windows]
    pred = np.asarray(predictor(windows))
    gt = np.stack([w.future for w in windows])
    mask = np.stack([w.mask for w in windows])
    if pred.shape != gt.shape:
        raise ValueError(f"predictor returned {pred.shape}, expected {gt.shape}")
    reports = {}
    for name in metrics:
        rep = METRICS[name](pred, gt, mask, frames, labels)
        rep.values = {k: v * scale for k, v in rep.values.items()}
        reports[name] = rep
    return reports


def zero_velocity_predictor(windows) -> np.ndarray:
    return np.stack([zero_velocity(w) for w in windows])


def model_predictor(model) -> Callable:
    def predict(windows):
        out = model.predict(windows)
        n = windows[0].n_slots
        if n > model.config.n_slots:
            raise ValueError(f"windows have {n} slots, model supports {model.config.n_slots}")
        return out[:, :n]
    return predict


# ---------------------------------------------------------------- attention analyses

def cross_person_attention(weights, token_mask, meta, roots: np.ndarray) -> list[tuple[float, float]]:
    """(distance, mean attention) for every ordered pair of real persons in one window.

    ``weights`` is a list over layers of ``[H, Q, Q]`` arrays; ``roots`` holds
    each slot's root position ``[N, 3]`` at the last observed frame. The
    attention of person a to person b averages the scores from all of a's
    queries to all of b's keys over heads and layers.
    """
    w = np.mean([np.asarray(x).mean(axis=0) for x in weights], axis=0)   # [Q, Q]
    slot = meta["slot"]
    real = sorted({int(s) for s in slot[np.asarray(token_mask, dtype=bool)]})
    out = []
    for a in real:
        for b in real:
            if a == b:
                continue
            score = w[np.ix_(slot == a, slot == b)].mean()
            out.append((float(np.linalg.norm(roots[a] - roots[b])), float(score)))
    return out


def fit_line(pairs) -> tuple[float, float]:
    """Least-squares slope and intercept of attention against distance."""
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(slope), float(intercept)


def attention_distance_analysis(model, windows) -> dict:
    pairs = []
    root = model.config.root_joint
    for w in windows:
        if w.n_real < 2:
            continue
        res = model.forward(w)
        wf = fit_slots(w, model.config.n_slots)
        roots = wf.history[:, root, :, -1]
        rec = res.attention[0]
        pairs.extend(cross_person_attention(rec.weights, rec.token_mask, rec.meta, roots))
    if not pairs:
        raise ValueError("attention analysis needs windows with at least two persons")
    slope, intercept = fit_line(pairs)
    return {"pairs": [{"distance": d, "attention": a} for d, a in pairs],
            "slope": slope, "intercept": intercept, "n_pairs": len(pairs)}


def joint_type_attention(weights, token_mask, meta, n_joints: int) -> np.ndarray:
    """``[L, J, J]`` attention mass from joint type i to joint type j.

    Sums over key axes and key persons, averages over heads, query axes and
    real query persons, so each row sums to one.
    """
    mask = np.asarray(token_mask, dtype=bool)
    onehot = np.zeros((len(mask), n_joints))
    onehot[np.arange(len(mask)), meta["joint"]] = 1.0
    out = []
    for layer in weights:
        to_joint = np.asarray(layer).mean(axis=0) @ onehot        # [Q, J]
        rows = np.zeros((n_joints, n_joints))
        for j in range(n_joints):
            sel = mask & (meta["joint"] == j)
            rows[j] = to_joint[sel].mean(axis=0)
        out.append(rows)
    return np.stack(out)


def attention_export(model, window: TrajectoryWindow) -> dict:
    res = model.forward(window)
    rec = res.attention[0]
    jt = joint_type_attention(rec.weights, rec.token_mask, rec.meta, model.config.n_joints)
    return {
        "config": model.config.to_dict(),
        "n_layers": len(rec.weights),
        "n_heads": int(rec.weights[0].shape[0]),
        "queries": {k: v.tolist() for k, v in rec.meta.items()},
        "token_mask": rec.token_mask.tolist(),
        "layers": [w.tolist() for w in rec.weights],
        "joint_type": {"per_layer": jt.tolist(), "mean": jt.mean(axis=0).tolist()},
    }


def export_attention(model, window: TrajectoryWindow, path) -> dict:
    obj = attention_export(model, window)
    Path(path).write_text(json.dumps(obj), encoding="utf-8")
    return obj


def load_attention(path) -> dict:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    obj["layers"] = [np.asarray(w) for w in obj["layers"]]
    obj["token_mask"] = np.asarray(obj["token_mask"], dtype=bool)
    obj["queries"] = {k: np.asarray(v) for k, v in obj["queries"].items()}
    obj["joint_type"] = {k: np.asarray(v) for k, v in obj["joint_type"].items()}
    return obj
