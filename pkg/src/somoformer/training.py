"""Per-layer weighted loss and the deterministic Adam training loop."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .augment import AugmentConfig, augment_window
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .model import ModelConfig, SoMoFormer, preset
from .optim import AdamState, adam_step
from .scene import Scene, sample_window
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    decay_at: float = 0.9
    max_steps: int | None = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.decay_at <= 1.0:
            raise ValueError(f"decay_at is a fraction of training, got {self.decay_at}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = d.pop("model", {})
        if isinstance(model, str):
            model = preset(model)
        elif isinstance(model, dict):
            model = dict(model)
            name = model.pop("preset", None)
            model = preset(name, **model) if name else ModelConfig.from_dict(model)
        aug = d.pop("augment", {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(model=model, augment=AugmentConfig(**aug), **d)


def lr_schedule(step: int, cfg: TrainConfig, total_steps: int) -> float:
    """Base rate until ``decay_at`` of training, then base times the decay factor."""
    if step < 0:
        raise ValueError("step must be non-negative")
    decay_step = int(round(cfg.decay_at * total_steps))
    return cfg.lr if step < decay_step else cfg.lr * cfg.lr_decay_factor


def compute_loss(per_layer_preds, gt, mask, weights) -> Tensor:
    """Weighted sum over layers of squared coordinate error, averaged over real persons.

    ``per_layer_preds`` holds one ``[B, N, J, 3, T]`` prediction per layer,
    ``gt`` matches one of them and ``mask`` is ``[B, N]``. Padded slots
    contribute nothing whatever they contain.
    """
    mask = np.asarray(mask, dtype=bool)
    gt = np.asarray(gt, dtype=np.float64)
    n_real = int(mask.sum())
    if n_real == 0:
        raise ValueError("loss needs at least one real person")
    if len(per_layer_preds) != len(weights):
        raise ValueError(f"{len(per_layer_preds)} layer predictions for {len(weights)} weights")
    w = mask.astype(np.float64)[..., None, None, None]
    total = None
    for pred, lam in zip(per_layer_preds, weights):
        if lam == 0.0:
            continue
        pred = tn.as_tensor(pred)
        if pred.shape != gt.shape:
            raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
        term = tn.scale(tn.weighted_sum_squares(tn.sub(pred, gt), w), lam / n_real)
        total = term if total is None else tn.add(total, term)
    return total if total is not None else Tensor(np.asarray(0.0))


def train_step(model: SoMoFormer, prep, adam: AdamState, lr: float,
               rng: np.random.Generator | None = None) -> float:
    """Forward, loss, backward and one Adam update. Returns the loss before the update."""
    cfg = model.config
    if prep.target is None:
        raise TrainingError("training batch has no future ground truth")
    for p in model.params.values():
        p.zero_grad()
    with Tape() as tape:
        residuals, _ = model.run(prep, rng)
        preds = [model.local_future(prep, r) for r in residuals]
        loss = compute_loss(preds, prep.target, prep.slot_mask, cfg.layer_weights)
    value = loss.item()
    if not np.isfinite(value):
        per_layer = [float(((p.data - prep.target) ** 2).sum()) for p in preds]
        raise TrainingError(f"non-finite loss {value}; per-layer squared error {per_layer}")
    tn.backward(loss, tape)
    grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
    adam_step(model.params, grads, adam, lr)
    for p in model.params.values():
        p.zero_grad()
    return value


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: SoMoFormer, path, adam: AdamState | None = None, extra: dict | None = None) -> None:
    config = {"model": model.config.to_dict(), **(extra or {})}
    arrays = {k: p.data for k, p in model.params.items()}
    if adam is not None:
        config["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                          "eps": adam.eps, "step": adam.step}
        for k in adam.m:
            arrays[f"adam.m/{k}"] = adam.m[k]
            arrays[f"adam.v/{k}"] = adam.v[k]
    write_checkpoint(path, config, arrays)


def load_checkpoint(path) -> tuple[SoMoFormer, AdamState | None, dict]:
    config, arrays = read_checkpoint(path)
    try:
        mcfg = ModelConfig.from_dict(config["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid model config ({exc})") from None
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items() if not k.startswith("adam.")}
    model = SoMoFormer(mcfg, params)
    expected = SoMoFormer(mcfg, seed=0).params
    missing = sorted(set(expected) - set(params))
    if missing:
        raise CheckpointError(f"{path}: missing parameters {missing[:5]}")
    for k, p in expected.items():
        if params[k].shape != p.shape:
            raise CheckpointError(f"{path}: parameter {k!r} has shape {params[k].shape}, config implies {p.shape}")
    adam = None
    if "adam" in config:
        a = config["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
        for k in params:
            if f"adam.m/{k}" in arrays:
                adam.m[k] = arrays[f"adam.m/{k}"].copy()
                adam.v[k] = arrays[f"adam.v/{k}"].copy()
    extra = {k: v for k, v in config.items() if k not in ("model", "adam")}
    return model, adam, extra


# ---------------------------------------------------------------- loop

class Trainer:
    """Deterministic training over a list of scenes.

    Batch composition and every random draw inside step ``k`` come from
    generators seeded by ``(seed, k)``, so a run resumed from a checkpoint
    replays the uninterrupted run exactly.
    """

    def __init__(self, cfg: TrainConfig, scenes: list[Scene], model: SoMoFormer | None = None,
                 adam: AdamState | None = None, step: int = 0):
        if not scenes:
            raise TrainingError("no training scenes")
        m = cfg.model
        for i, s in enumerate(scenes):
            if s.n_frames < m.length:
                raise TrainingError(f"scene {i} has {s.n_frames} frames, needs t+T={m.length}")
            if s.n_joints != m.n_joints:
                raise TrainingError(f"scene {i} has {s.n_joints} joints, model expects {m.n_joints}")
            if s.n_persons > m.n_slots:
                raise TrainingError(f"scene {i} has {s.n_persons} persons, model has {m.n_slots} slots")
            if s.skeleton.root_joint != m.root_joint:
                raise TrainingError(f"scene {i} root joint {s.skeleton.root_joint} differs from model root {m.root_joint}")
        self.cfg = cfg
        self.scenes = scenes
        self.model = model or SoMoFormer(cfg.model, seed=cfg.seed)
        self.adam = adam or AdamState(lr=cfg.lr)
        self.step = step
        self.steps_per_epoch = -(-len(scenes) // cfg.batch_size)
        total = cfg.epochs * self.steps_per_epoch
        self.total_steps = min(total, cfg.max_steps) if cfg.max_steps else total

    def batch_indices(self, step: int) -> np.ndarray:
        epoch, k = divmod(step, self.steps_per_epoch)
        order = np.random.default_rng([self.cfg.seed, 1, epoch]).permutation(len(self.scenes))
        bs = self.cfg.batch_size
        return order[k * bs:(k + 1) * bs]

    def make_batch(self, step: int):
        rng = np.random.default_rng([self.cfg.seed, 2, step])
        m = self.cfg.model
        windows = []
        for i in self.batch_indices(step):
            w = sample_window(self.scenes[int(i)], m.t, m.T, rng)
            windows.append(augment_window(w, self.cfg.augment, rng, m.n_slots))
        return self.model.prepare(windows), rng

    def train_one(self) -> dict:
        prep, rng = self.make_batch(self.step)
        lr = lr_schedule(self.step, self.cfg, self.total_steps)
        loss = train_step(self.model, prep, self.adam, lr, rng if self.cfg.model.dropout > 0 else None)
        rec = {"step": self.step, "epoch": self.step // self.steps_per_epoch, "loss": loss, "lr": lr}
        self.step += 1
        return rec

    def save(self, path) -> None:
        save_checkpoint(self.model, path, self.adam,
                        {"train": self.cfg.to_dict(), "train_state": {"step": self.step}, "seed": self.cfg.seed})

    def run(self, log_path=None, ckpt_path=None, until: int | None = None) -> list[dict]:
        until = self.total_steps if until is None else min(until, self.total_steps)
        records = []
        fh = open(log_path, "a", encoding="utf-8") if log_path else None
        try:
            while self.step < until:
                rec = self.train_one()
                records.append(rec)
                if fh and (rec["step"] % self.cfg.log_every == 0 or self.step == until):
                    fh.write(json.dumps(rec) + "\n")
                if rec["step"] % 50 == 0:
                    log.info("step %d/%d loss %.6g lr %.3g", rec["step"], self.total_steps, rec["loss"], rec["lr"])
                if ckpt_path and self.cfg.checkpoint_every and self.step % self.cfg.checkpoint_every == 0:
                    self.save(ckpt_path)
        finally:
            if fh:
                fh.close()
        if ckpt_path:
            self.save(ckpt_path)
        return records

    @classmethod
    def resume(cls, path, scenes: list[Scene]) -> "Trainer":
        model, adam, extra = load_checkpoint(path)
        if "train" not in extra or "train_state" not in extra:
            raise CheckpointError(f"{path}: checkpoint carries no training state to resume from")
        cfg = TrainConfig.from_dict(extra["train"])
        return cls(cfg, scenes, model, adam, step=int(extra["train_state"]["step"]))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
