"""Command-line surface.

Subcommands: synth, train, infer, eval, depth, cap-dump, perturb.
Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Set EPIMISR_LOG={error,info,debug} for progress output.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import configure_logging
from .cap import RaySampling, cast_and_project, sample_depths_hyperbolic
from .data.dataset import Sample, build_dataset, load_lr, select_extras
from .data.eptn import write_tensor
from .data.images import write_png
from .data.manifest import SceneManifest, load_manifest
from .data.synthetic import SyntheticSceneSpec, write_scene
from .errors import ConfigError, GeometryError, ParseError, ShapeError, TrainingDiverged
from .geometry import Camera, PerturbationSpec, perturb_pose
from .miff import MiffConfig, extract_depth_map
from .pipeline import (
    TrainConfig,
    evaluate,
    forward_sample,
    load_checkpoint,
    save_report,
    train,
)
from .sisr import FeatureExtractorConfig
from .tensor import bicubic_upsample, no_grad

log = logging.getLogger("epimisr.cli")


def _load_manifests(paths) -> list[SceneManifest]:
    if not paths:
        raise ConfigError("at least one --manifest is required")
    return [load_manifest(p) for p in paths]


def _load_model(checkpoint: str):
    weights, meta = load_checkpoint(checkpoint)
    try:
        sisr_cfg = FeatureExtractorConfig.from_dict(meta["sisr"])
        miff_cfg = MiffConfig.from_dict(meta["miff"])
    except (KeyError, TypeError) as e:
        raise ParseError(f"{checkpoint}: checkpoint meta lacks model configs ({e})")
    return weights, sisr_cfg, miff_cfg, meta


def _require_same_s(scenes: list[SceneManifest], s: int):
    for sc in scenes:
        if sc.s != s:
            raise ConfigError(f"scene {sc.scene_id} has s={sc.s}, expected {s}")


def cmd_synth(args) -> int:
    with open(args.spec) as fh:
        doc = json.load(fh)
    specs = doc["scenes"] if isinstance(doc, dict) and "scenes" in doc else [doc]
    for d in specs:
        spec = SyntheticSceneSpec.from_dict(d)
        path = write_scene(spec, args.out)
        print(path)
    return 0


def cmd_train(args) -> int:
    scenes = _load_manifests(args.manifest)
    s = scenes[0].s if args.scale is None else args.scale
    _require_same_s(scenes, s)
    sisr_cfg = FeatureExtractorConfig(variant=args.variant, channels=args.channels, s=s)
    miff_cfg = MiffConfig(
        d_model=args.d_model, heads=args.heads, enc_layers=args.enc_layers,
        dec_layers=args.dec_layers, ffn_width=args.ffn_width,
    )
    cfg = TrainConfig(
        steps=args.steps, pretrain_steps=args.pretrain_steps,
        freeze_sisr_steps=args.freeze_steps, base_lr=args.lr,
        warmup_steps=args.warmup, milestones=tuple(args.milestones or ()),
        gamma=args.gamma, batch=args.batch, seed=args.seed, v_train=args.views,
        p_train=args.ray_points, s=s, alpha=args.alpha, selection=args.selection,
    )
    samples = build_dataset(
        scenes, V=args.views, selection=args.selection, seed=args.seed,
        targets_per_scene=args.targets_per_scene,
    )
    log.info("training on %d samples from %d scenes", len(samples), len(scenes))
    result = train(samples, sisr_cfg, miff_cfg, cfg, out_dir=args.out)
    final = result.history[-1][1] if result.history else float("nan")
    print(f"trained {len(result.history)} steps, final loss {final:.6f}")
    print(os.path.join(args.out, "checkpoint"))
    return 0


def _target_sample(scene: SceneManifest, target: int, v: int, selection: str) -> Sample:
    if not 0 <= target < len(scene.views):
        raise ConfigError(f"target view {target} out of range (scene has {len(scene.views)})")
    extras = select_extras(scene, target, v, selection) if v else ()
    return Sample(scene=scene, target=target, extras=extras)


def cmd_infer(args) -> int:
    weights, sisr_cfg, miff_cfg, _ = _load_model(args.checkpoint)
    scene = _load_manifests(args.manifest)[0]
    _require_same_s([scene], sisr_cfg.s)
    sample = _target_sample(scene, args.target, args.views, args.selection)
    with no_grad():
        out = forward_sample(sample, sisr_cfg, miff_cfg, args.ray_points, weights)
    os.makedirs(args.out, exist_ok=True)
    misr_path = os.path.join(args.out, f"{scene.scene_id}_view{args.target:03d}_misr.png")
    sisr_path = os.path.join(args.out, f"{scene.scene_id}_view{args.target:03d}_sisr.png")
    write_png(misr_path, out.i_misr.data.astype(np.float64))
    write_png(sisr_path, out.i_sisr.data.astype(np.float64))
    print(misr_path)
    print(sisr_path)
    return 0


def cmd_eval(args) -> int:
    weights, sisr_cfg, miff_cfg, _ = _load_model(args.checkpoint)
    scenes = _load_manifests(args.manifest)
    _require_same_s(scenes, sisr_cfg.s)
    report = evaluate(
        scenes, weights, sisr_cfg, miff_cfg, p_points=args.ray_points, v=args.views,
        selection=args.selection, border_crop=args.crop,
        targets_per_scene=args.targets_per_scene,
    )
    os.makedirs(args.out, exist_ok=True)
    save_report(report, os.path.join(args.out, "report.json"))
    table = report.text_table()
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def cmd_depth(args) -> int:
    weights, sisr_cfg, miff_cfg, _ = _load_model(args.checkpoint)
    scene = _load_manifests(args.manifest)[0]
    _require_same_s([scene], sisr_cfg.s)
    sample = _target_sample(scene, args.target, args.views, args.selection)
    with no_grad():
        out = forward_sample(sample, sisr_cfg, miff_cfg, args.ray_points, weights)
    depths = sample_depths_hyperbolic(RaySampling(P=args.ray_points, near=scene.near, far=scene.far))
    depth = extract_depth_map(out.attn, depths)
    os.makedirs(args.out, exist_ok=True)
    base = os.path.join(args.out, f"{scene.scene_id}_view{args.target:03d}_depth")
    write_tensor(base + ".eptn", depth.astype(np.float32))
    norm = np.where(depth > 0, (depth - scene.near) / (scene.far - scene.near), 0.0)
    write_png(base + ".png", np.clip(norm, 0.0, 1.0))
    print(base + ".eptn")
    print(base + ".png")
    return 0


def cmd_capdump(args) -> int:
    scene = _load_manifests(args.manifest)[0]
    sample = _target_sample(scene, args.target, args.views, args.selection)
    if not sample.extras:
        raise ConfigError("cap-dump needs --views >= 1")
    s = scene.s
    if args.checkpoint:
        weights, sisr_cfg, miff_cfg, _ = _load_model(args.checkpoint)
        from .sisr import extract_features

        def feats_of(img):
            return extract_features(img, sisr_cfg, weights)
    else:

        def feats_of(img):
            return bicubic_upsample(img.astype(np.float64), s)

    sampling = RaySampling(P=args.ray_points, near=scene.near, far=scene.far)
    target_cam = scene.views[sample.target].camera
    target_up = bicubic_upsample(load_lr(scene, sample.target), s).data
    sh, sw = target_up.shape[:2]
    px = args.pixel[0] if args.pixel else sw // 2
    py = args.pixel[1] if args.pixel else sh // 2
    if not (0 <= px < sw and 0 <= py < sh):
        raise ConfigError(f"pixel ({px},{py}) outside the {sw}x{sh} SR grid")
    os.makedirs(args.out, exist_ok=True)
    strip = np.zeros((args.views + 1, args.ray_points, 3))
    strip[0, :] = target_up[py, px, :3]
    with no_grad():
        for j, idx in enumerate(sample.extras):
            fv = feats_of(load_lr(scene, idx))
            epi = cast_and_project(target_cam, scene.views[idx].camera, fv, sampling, s)
            write_tensor(
                os.path.join(args.out, f"cap_view{j:02d}.eptn"),
                epi.features.data.astype(np.float32),
            )
            write_tensor(
                os.path.join(args.out, f"cap_view{j:02d}_mask.eptn"),
                epi.mask.astype(np.float32),
            )
            strip[j + 1, :] = epi.features.data[:, py, px, :3]
    strip_path = os.path.join(args.out, "strip.png")
    write_png(strip_path, np.clip(strip, 0.0, 1.0))
    print(strip_path)
    return 0


def _perturbed_scene(scene: SceneManifest, spec: PerturbationSpec, rng) -> SceneManifest:
    views = [
        dataclasses.replace(
            v, camera=Camera(intrinsics=v.camera.intrinsics, pose=perturb_pose(v.camera.pose, spec, rng))
        )
        for v in scene.views
    ]
    return SceneManifest(
        scene_id=scene.scene_id, views=views, near=scene.near, far=scene.far,
        s=scene.s, degradation=scene.degradation, split=scene.split, root=scene.root,
    )


def cmd_perturb(args) -> int:
    weights, sisr_cfg, miff_cfg, _ = _load_model(args.checkpoint)
    scenes = _load_manifests(args.manifest)
    _require_same_s(scenes, sisr_cfg.s)
    sig_t = [float(x) for x in args.sigma_t.split(",")]
    sig_r = [float(x) for x in args.sigma_r.split(",")]

    def one_eval(st: float, sr: float, trial: int) -> float:
        rng = np.random.default_rng([args.seed, trial])
        spec = PerturbationSpec(sigma_translation=st, sigma_rotation=sr)
        pert = [_perturbed_scene(sc, spec, rng) for sc in scenes]
        rep = evaluate(
            pert, weights, sisr_cfg, miff_cfg, p_points=args.ray_points, v=args.views,
            selection=args.selection, border_crop=args.crop,
            targets_per_scene=args.targets_per_scene,
        )
        return rep.psnr_misr

    cells = [(st, sr) for st in sig_t for sr in sig_r]
    results = []
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        for st, sr in cells:
            futs = [pool.submit(one_eval, st, sr, t) for t in range(args.trials)]
            results.append((st, sr, float(np.mean([f.result() for f in futs]))))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    tmp = f"{args.out}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sigma_t", "sigma_r", "psnr"])
        for st, sr, val in results:
            # .17g round-trips float64 so the zero-noise cell can be compared
            # exactly against an unperturbed eval report
            wr.writerow([f"{st:.6g}", f"{sr:.6g}", f"{val:.17g}"])
    os.replace(tmp, args.out)
    for st, sr, val in results:
        print(f"sigma_t={st:g} sigma_r={sr:g} psnr={val:.4f}")
    return 0


def _add_common(p: argparse.ArgumentParser, *, manifests=True, checkpoint=False):
    if manifests:
        p.add_argument("--manifest", action="append", required=True, help="scene manifest JSON (repeatable)")
    if checkpoint:
        p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--views", type=int, default=3, help="extra views V")
    p.add_argument("--ray-points", type=int, default=32, help="depth samples P per ray")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--selection", choices=["nearest", "median"], default="nearest")
    p.add_argument("--threads", type=int, default=1, help="worker cap for parallel sections")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epimisr", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render synthetic scenes from a spec file")
    p.add_argument("--spec", required=True, help="JSON scene spec (single object or {scenes: [...]})")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on manifest scenes")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=None, help="SR factor (defaults to manifest s)")
    p.add_argument("--variant", choices=["bicubic_conv1", "bicubic_conv3", "residual_stack"], default="bicubic_conv3")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--enc-layers", type=int, default=2)
    p.add_argument("--dec-layers", type=int, default=2)
    p.add_argument("--ffn-width", type=int, default=64)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--pretrain-steps", type=int, default=100)
    p.add_argument("--freeze-steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--milestones", type=int, nargs="*", default=None)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--targets-per-scene", type=int, default=4)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="reconstruct one target view")
    _add_common(p, checkpoint=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="metric report over scenes")
    _add_common(p, checkpoint=True)
    p.add_argument("--out", required=True)
    p.add_argument("--crop", type=int, default=4, help="metric border crop in SR pixels")
    p.add_argument("--targets-per-scene", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("depth", help="depth map from ray attention")
    _add_common(p, checkpoint=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=int, default=0)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("cap-dump", help="dump plane-sweep tensors and a strip image")
    _add_common(p)
    p.add_argument("--checkpoint", default=None, help="optional checkpoint for learned features")
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=int, default=0)
    p.add_argument("--pixel", type=int, nargs=2, default=None, metavar=("X", "Y"))
    p.set_defaults(func=cmd_capdump)

    p = sub.add_parser("perturb", help="pose-noise sensitivity sweep")
    _add_common(p, checkpoint=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--sigma-t", default="0,0.01,0.02", help="comma list of translation sigmas")
    p.add_argument("--sigma-r", default="0,0.005,0.01", help="comma list of rotation sigmas (radians)")
    p.add_argument("--trials", type=int, default=20, help="seeds averaged per grid cell")
    p.add_argument("--crop", type=int, default=4)
    p.add_argument("--targets-per-scene", type=int, default=None)
    p.set_defaults(func=cmd_perturb)
    return ap


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, GeometryError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
