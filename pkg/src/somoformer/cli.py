"""Command-line entry point.

Precedence for every setting: command-line flag, then config file, then
defaults. ``SOMOFORMER_SEED`` supplies the default seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .evaluation import (PROTOCOLS, evaluate_dataset, export_attention, model_predictor,
                         zero_velocity_predictor)
from .model import SoMoFormer
from .scene import Scene, SceneFormatError, load_dataset, load_scene, mix_scenes, save_scene, window_at
from .synth import procedural_sources
from .training import TrainConfig, Trainer, load_checkpoint, save_checkpoint, write_json

log = logging.getLogger("somoformer")


class CliError(Exception):
    pass


def default_seed() -> int:
    return int(os.environ.get("SOMOFORMER_SEED", "0"))


def echo_config(cmd: str, cfg: dict) -> None:
    print(json.dumps({"command": cmd, "config": cfg}, sort_keys=True), file=sys.stderr)


# ---------------------------------------------------------------- data

def cmd_make_sources(args) -> None:
    cfg = {"count": args.count, "frames": args.frames, "fps": args.fps, "seed": args.seed}
    echo_config("make-sources", cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(procedural_sources(args.count, args.frames, args.fps, args.seed)):
        save_scene(Scene(scene.fps, scene.skeleton, scene.persons, scene.ids, meta={"generator": cfg, "index": i}),
                   out / f"source_{i:05d}.json")
    write_json(out / "manifest.json", {"kind": "procedural-sources", "config": cfg, "seed": args.seed})


def cmd_synth_data(args) -> None:
    cfg = {"sources": str(args.sources), "num_persons": args.num_persons, "windows": args.windows,
           "t": args.t, "T": args.T, "seed": args.seed, "area": args.area, "rotate": args.rotate}
    echo_config("synth-data", cfg)
    try:
        files = sorted(p for p in Path(args.sources).glob("*.json") if p.name != "manifest.json")
        if not files:
            raise CliError(f"no scene files found in {args.sources}")
        sources = [load_scene(f) for f in files]
    except (SceneFormatError, FileNotFoundError) as exc:
        raise CliError(f"invalid sources: {exc}") from None
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        for k in range(args.windows):
            scene = mix_scenes(sources, args.num_persons, args.t, args.T, rng, args.area, args.rotate)
            meta = {"seed": args.seed, "index": k, "config": cfg}
            save_scene(Scene(scene.fps, scene.skeleton, scene.persons, scene.ids, meta=meta),
                       out / f"scene_{k:05d}.json")
    except ValueError as exc:
        raise CliError(f"invalid sources: {exc}") from None
    write_json(out / "manifest.json", {"kind": "mixed-scenes", "config": cfg, "seed": args.seed,
                                       "sources": [f.name for f in files]})


# ---------------------------------------------------------------- training

def _load_data(path) -> list[Scene]:
    try:
        return load_dataset(path)
    except (FileNotFoundError, SceneFormatError) as exc:
        raise CliError(str(exc)) from None


def resolve_train_config(args, scenes: list[Scene]) -> TrainConfig:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    model = raw.get("model", {})
    if isinstance(model, str):
        model = {"preset": model}
    model = dict(model)
    model.setdefault("n_joints", scenes[0].n_joints)
    model["root_joint"] = scenes[0].skeleton.root_joint
    raw["model"] = model
    raw.setdefault("seed", default_seed())
    for flag in ("seed", "epochs", "batch_size", "lr", "max_steps", "checkpoint_every"):
        value = getattr(args, flag, None)
        if value is not None:
            raw[flag] = value
    try:
        return TrainConfig.from_dict(raw)
    except (TypeError, ValueError, KeyError) as exc:
        raise CliError(f"invalid training config: {exc}") from None


def cmd_train(args) -> None:
    scenes = _load_data(args.data)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
    if args.resume:
        try:
            trainer = Trainer.resume(args.resume, scenes)
        except (CheckpointError, FileNotFoundError) as exc:
            raise CliError(f"cannot resume: {exc}") from None
        echo_config("train", trainer.cfg.to_dict())
    else:
        cfg = resolve_train_config(args, scenes)
        echo_config("train", cfg.to_dict())
        try:
            trainer = Trainer(cfg, scenes)
        except Exception as exc:  # noqa: BLE001 - configuration/data mismatch
            raise CliError(str(exc)) from None
        log_path.write_text(json.dumps({"config": cfg.to_dict(), "seed": cfg.seed}, sort_keys=True) + "\n",
                            encoding="utf-8")
    trainer.run(log_path, args.out, until=args.until)
    print(json.dumps({"checkpoint": str(args.out), "log": str(log_path), "step": trainer.step}))


def cmd_init(args) -> None:
    scenes = _load_data(args.data) if args.data else None
    if scenes is None:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
        raw.setdefault("seed", args.seed if args.seed is not None else default_seed())
        cfg = TrainConfig.from_dict(raw)
    else:
        cfg = resolve_train_config(args, scenes)
    echo_config("init", cfg.to_dict())
    model = SoMoFormer(cfg.model, seed=cfg.seed)
    save_checkpoint(model, args.out, extra={"train": cfg.to_dict(), "seed": cfg.seed})


# ---------------------------------------------------------------- evaluation

def _load_model(path) -> SoMoFormer:
    try:
        model, _, _ = load_checkpoint(path)
    except (CheckpointError, FileNotFoundError) as exc:
        raise CliError(f"cannot load checkpoint: {exc}") from None
    return model


def cmd_eval(args) -> None:
    protocol = PROTOCOLS[args.protocol]
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    scenes = _load_data(args.data)
    cfg = {"data": str(args.data), "protocol": args.protocol, "metrics": metrics, "scale": args.scale,
           "baseline": args.baseline, "ckpt": str(args.ckpt) if args.ckpt else None}
    echo_config("eval", cfg)
    if args.baseline == "zero-velocity":
        predictor, name = zero_velocity_predictor, "zero-velocity"
    elif args.ckpt:
        model = _load_model(args.ckpt)
        m = model.config
        J = scenes[0].n_joints
        if (m.t, m.T, m.n_joints) != (protocol.t, protocol.T, J):
            raise CliError(f"checkpoint has (t, T, J) = {(m.t, m.T, m.n_joints)}; protocol {protocol.name} "
                           f"with this data expects t={protocol.t}, T={protocol.T}, J={J}")
        predictor, name = model_predictor(model), str(args.ckpt)
    else:
        raise CliError("eval needs --ckpt or --baseline zero-velocity")
    try:
        reports = evaluate_dataset(predictor, scenes, protocol, metrics, args.scale)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = {"predictor": name, "protocol": protocol.name, "config": cfg,
           "reports": {k: r.to_dict() for k, r in reports.items()}}
    for r in reports.values():
        print(r.table())
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)


def _scene_window(scene: Scene, model: SoMoFormer):
    t = model.config.t
    if scene.n_frames < t:
        raise CliError(f"scene has {scene.n_frames} frames, the model needs at least t={t}")
    if scene.n_persons > model.config.n_slots:
        raise CliError(f"scene has {scene.n_persons} persons, the model has {model.config.n_slots} slots")
    if scene.n_joints != model.config.n_joints:
        raise CliError(f"scene has {scene.n_joints} joints, the model expects {model.config.n_joints}")
    return window_at(scene, scene.n_frames - t, t, 0)


def cmd_predict(args) -> None:
    model = _load_model(args.ckpt)
    scene = load_scene(args.scene)
    echo_config("predict", {"ckpt": str(args.ckpt), "scene": str(args.scene), "model": model.config.to_dict()})
    window = _scene_window(scene, model)
    pred = model.forward(window).prediction            # [N_slots, J, 3, T]
    t = model.config.t
    persons = []
    for i, hist in enumerate(scene.persons):
        fut = pred[i].transpose(2, 0, 1)
        persons.append(np.concatenate([hist[scene.n_frames - t:], fut], axis=0))
    meta = {"checkpoint": str(args.ckpt), "source": str(args.scene), "t": t, "T": model.config.T,
            "model": model.config.to_dict()}
    save_scene(Scene(scene.fps, scene.skeleton, tuple(persons), scene.ids, meta=meta), args.out)


def cmd_export_attention(args) -> None:
    model = _load_model(args.ckpt)
    scene = load_scene(args.scene)
    echo_config("export-attention", {"ckpt": str(args.ckpt), "scene": str(args.scene)})
    export_attention(model, _scene_window(scene, model), args.out)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="somoformer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-sources", help="write procedural single-person source clips")
    s.add_argument("--count", type=int, default=50)
    s.add_argument("--frames", type=int, default=150)
    s.add_argument("--fps", type=float, default=15.0)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_sources)

    s = sub.add_parser("synth-data", help="mix single-person sources into multi-person scenes")
    s.add_argument("--sources", required=True)
    s.add_argument("--num-persons", type=int, default=3)
    s.add_argument("--windows", type=int, default=500)
    s.add_argument("--t", type=int, default=15)
    s.add_argument("--T", type=int, default=45)
    s.add_argument("--area", type=float, default=4.0, help="side of the placement square in meters")
    s.add_argument("--rotate", action="store_true", help="randomly rotate each clip about the vertical axis")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_data)

    for name, func, helptext in (("train", cmd_train, "train a model"),
                                 ("init", cmd_init, "write a freshly initialized checkpoint")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config")
        s.add_argument("--data", required=name == "train")
        s.add_argument("--out", required=True)
        s.add_argument("--seed", type=int, default=None)
        if name == "train":
            s.add_argument("--resume")
            s.add_argument("--log")
            s.add_argument("--epochs", type=int)
            s.add_argument("--batch-size", type=int)
            s.add_argument("--lr", type=float)
            s.add_argument("--max-steps", type=int)
            s.add_argument("--checkpoint-every", type=int)
            s.add_argument("--until", type=int, help="stop after this global step (for staged runs)")
        s.set_defaults(func=func)

    s = sub.add_parser("eval", help="score a checkpoint or baseline under a protocol")
    s.add_argument("--ckpt")
    s.add_argument("--data", required=True)
    s.add_argument("--protocol", choices=sorted(PROTOCOLS), default="somof")
    s.add_argument("--metrics", default=None, help="comma list of vim,mpjpe (default: protocol metric)")
    s.add_argument("--baseline", choices=["zero-velocity"])
    s.add_argument("--scale", type=float, default=1.0, help="multiply metric values (e.g. 100 for cm)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="forecast the future of a scene")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("export-attention", help="dump attention weights for one scene")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_attention)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", "absent") is None:
        args.seed = default_seed() if args.command not in ("train", "init") else None
    if args.command == "eval" and args.metrics is None:
        args.metrics = PROTOCOLS[args.protocol].metric
    try:
        args.func(args)
    except (CliError, SceneFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
