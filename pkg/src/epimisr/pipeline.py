"""End-to-end composition: forward pass, loss, training loop, evaluation.

Training runs three phases on one Adam engine:

  pretrain   SISR weights alone, V=0, plain reconstruction L1
  stage A    SISR frozen (features cached), fusion weights train
  stage B    joint finetune of everything

All data draws come from one seeded generator in a fixed order, and the
optimizer walks parameters in sorted-name order, so runs are
bit-reproducible. MIFF work happens on random pixel tiles; full-image
inference tiles the same kernel under no_grad.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .cap import RaySampling, cast_and_project_pixels
from .data.dataset import Sample, load_hr, load_lr, select_extras
from .data.eptn import read_tensor, write_tensor
from .data.manifest import SceneManifest
from .errors import ConfigError, ParseError, ShapeError, TrainingDiverged
from .metrics import lr_consistency, psnr, ssim
from .miff import AttentionRecord, MiffConfig, init_miff_weights, miff_forward_pixels
from .sisr import FeatureExtractorConfig, init_sisr_weights, sisr_forward
from .tensor import (
    AdamState,
    Tensor,
    adam_step,
    add,
    as_tensor,
    backward,
    concat,
    l1_loss,
    no_grad,
    reshape,
    scale,
)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 400
    pretrain_steps: int = 100
    freeze_sisr_steps: int = 300
    base_lr: float = 1e-3
    warmup_steps: int = 20
    milestones: tuple = ()
    gamma: float = 0.5
    batch: int = 128
    seed: int = 0
    v_train: int = 3
    p_train: int = 32
    s: int = 2
    alpha: float = 1.0
    selection: str = "nearest"

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.base_lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.base_lr}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if min(self.steps, self.pretrain_steps, self.warmup_steps) < 0:
            raise ConfigError("step counts must be nonnegative")
        if not 0 <= self.freeze_sisr_steps <= self.steps:
            raise ConfigError(
                f"freeze_sisr_steps {self.freeze_sisr_steps} outside [0, steps={self.steps}]"
            )
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.v_train < 0 or self.p_train < 2 or self.s < 1:
            raise ConfigError("need v_train >= 0, p_train >= 2, s >= 1")
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "pretrain_steps": self.pretrain_steps,
            "freeze_sisr_steps": self.freeze_sisr_steps,
            "base_lr": self.base_lr,
            "warmup_steps": self.warmup_steps,
            "milestones": list(self.milestones),
            "gamma": self.gamma,
            "batch": self.batch,
            "seed": self.seed,
            "v_train": self.v_train,
            "p_train": self.p_train,
            "s": self.s,
            "alpha": self.alpha,
            "selection": self.selection,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["milestones"] = tuple(d.get("milestones", ()))
        return TrainConfig(**d)


def loss(i_misr, i_sisr, i_hr, alpha: float) -> Tensor:
    """L1(I_MISR, I_HR) + alpha * L1(I_SISR, I_HR)."""
    a = l1_loss(as_tensor(i_misr), i_hr)
    b = l1_loss(as_tensor(i_sisr), i_hr)
    return add(a, scale(b, alpha))


def _gather_rows(t: Tensor, idx: np.ndarray) -> Tensor:
    """Differentiable row pick from an (N, C) tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    data = t.data[idx]

    def bwd(g):
        if t.requires_grad:
            gt = np.zeros_like(t.data)
            np.add.at(gt, idx, g)
            t.accumulate_grad(gt)

    return Tensor._from_op(data, (t,), bwd)


@dataclass
class ForwardResult:
    i_misr: Tensor
    i_sisr: Tensor
    attn: AttentionRecord
    f0: Tensor


def forward_views(
    lr_images,
    cameras,
    near: float,
    far: float,
    sisr_cfg: FeatureExtractorConfig,
    miff_cfg: MiffConfig,
    p_points: int,
    weights: dict[str, Tensor],
    tile: int = 1024,
) -> ForwardResult:
    """Full forward pass; lr_images[0] / cameras[0] is the target view.

    The fusion stage streams over pixel tiles of the SR grid so large
    images do not materialize (P, N, V) token blocks at once.
    """
    if len(lr_images) != len(cameras) or not lr_images:
        raise ShapeError("need one camera per LR image, target first")
    s = sisr_cfg.s
    i_sisr, f0, base = sisr_forward(lr_images[0], sisr_cfg, weights)
    sh, sw, c = f0.shape
    n = sh * sw
    v = len(lr_images) - 1
    if v == 0:
        rec = AttentionRecord(
            ray_decoder_attn=np.zeros((n, miff_cfg.heads, 1, 0)),
            averaged_attn=np.zeros((n, 0)),
            grid=(sh, sw),
        )
        return ForwardResult(i_misr=i_sisr, i_sisr=i_sisr, attn=rec, f0=f0)

    feats_v = [sisr_forward(img, sisr_cfg, weights)[1] for img in lr_images[1:]]
    sampling = RaySampling(P=p_points, near=near, far=far)
    yy, xx = np.mgrid[0:sh, 0:sw]
    xs_all, ys_all = xx.ravel().astype(np.float64), yy.ravel().astype(np.float64)

    delta_parts, attn_raw, attn_avg = [], [], []
    f0_flat = reshape(f0, (n, c))
    for lo in range(0, n, tile):
        hi = min(lo + tile, n)
        xs, ys = xs_all[lo:hi], ys_all[lo:hi]
        tiles = [
            cast_and_project_pixels(cameras[0], cameras[1 + j], feats_v[j], sampling, s, xs, ys)
            for j in range(v)
        ]
        feats = concat([reshape(t[0], (1, p_points, hi - lo, c)) for t in tiles], axis=0)
        valid = np.stack([t[1] for t in tiles], axis=0)
        depths = tiles[0][2]
        f0_tile = _gather_rows(f0_flat, np.arange(lo, hi))
        d_tile, rec = miff_forward_pixels(f0_tile, feats, valid, depths, miff_cfg, weights)
        delta_parts.append(d_tile)
        attn_raw.append(rec.ray_decoder_attn)
        attn_avg.append(rec.averaged_attn)
    delta = reshape(concat(delta_parts, axis=0), (sh, sw, 3))
    record = AttentionRecord(
        ray_decoder_attn=np.concatenate(attn_raw, axis=0),
        averaged_attn=np.concatenate(attn_avg, axis=0),
        grid=(sh, sw),
    )
    return ForwardResult(i_misr=add(i_sisr, delta), i_sisr=i_sisr, attn=record, f0=f0)


def forward_sample(
    sample: Sample,
    sisr_cfg: FeatureExtractorConfig,
    miff_cfg: MiffConfig,
    p_points: int,
    weights: dict[str, Tensor],
    cache: dict | None = None,
    tile: int = 1024,
) -> ForwardResult:
    """Forward pass on a dataset sample, loading (and caching) LR images."""
    scene = sample.scene
    idxs = (sample.target,) + tuple(sample.extras)
    imgs = []
    for i in idxs:
        key = (id(scene), "lr", i)
        if cache is not None and key in cache:
            imgs.append(cache[key])
        else:
            img = load_lr(scene, i).astype(np.float32)
            if cache is not None:
                cache[key] = img
            imgs.append(img)
    cams = [scene.views[i].camera for i in idxs]
    return forward_views(
        imgs, cams, scene.near, scene.far, sisr_cfg, miff_cfg, p_points, weights, tile=tile
    )


# -- checkpoints --------------------------------------------------------------------


def save_checkpoint(path: str, weights: dict[str, Tensor], meta: dict | None = None) -> None:
    """Named EPTN tensors plus a JSON index {name -> file, shape, dtype}."""
    os.makedirs(path, exist_ok=True)
    index = {"format": "epimisr-checkpoint", "version": 1, "tensors": {}, "meta": meta or {}}
    for name in sorted(weights):
        t = weights[name]
        fname = f"{name}.eptn"
        write_tensor(os.path.join(path, fname), t.data)
        index["tensors"][name] = {
            "file": fname,
            "shape": list(t.shape),
            "dtype": np.dtype(t.dtype).name,
        }
    tmp = os.path.join(path, f".index.tmp.{os.getpid()}")
    with open(tmp, "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(path, "index.json"))


def load_checkpoint(path: str) -> tuple[dict[str, Tensor], dict]:
    ipath = os.path.join(path, "index.json")
    try:
        with open(ipath) as fh:
            index = json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"{ipath}: checkpoint index not found")
    except json.JSONDecodeError as e:
        raise ParseError(f"{ipath}: {e}")
    if index.get("format") != "epimisr-checkpoint":
        raise ParseError(f"{ipath}: not a checkpoint index")
    weights: dict[str, Tensor] = {}
    for name, info in index["tensors"].items():
        data = read_tensor(os.path.join(path, info["file"]))
        if list(data.shape) != info["shape"] or np.dtype(data.dtype).name != info["dtype"]:
            raise ParseError(f"{ipath}: tensor {name!r} does not match its index entry")
        weights[name] = Tensor(data, requires_grad=True)
    return weights, index.get("meta", {})


# -- training -----------------------------------------------------------------------


@dataclass
class TrainResult:
    weights: dict[str, Tensor]
    history: list = field(default_factory=list)  # (step, loss, lr) rows
    sisr_cfg: FeatureExtractorConfig | None = None
    miff_cfg: MiffConfig | None = None
    cfg: TrainConfig | None = None


def _lr_at(step: int, cfg: TrainConfig) -> float:
    f = (step + 1) / cfg.warmup_steps if step < cfg.warmup_steps else 1.0
    k = sum(1 for m in cfg.milestones if step >= m)
    return cfg.base_lr * f * (cfg.gamma**k)


def _hr_f32(scene, idx, cache):
    key = (id(scene), "hr", idx)
    if key not in cache:
        cache[key] = load_hr(scene, idx).astype(np.float32)
    return cache[key]


def train(
    samples: list[Sample],
    sisr_cfg: FeatureExtractorConfig,
    miff_cfg: MiffConfig,
    cfg: TrainConfig,
    out_dir: str | None = None,
) -> TrainResult:
    """Three-phase deterministic training over dataset samples.

    Raises TrainingDiverged with the offending global step index if the
    loss stops being finite. When out_dir is given, writes loss.csv and
    a final checkpoint under out_dir/checkpoint.
    """
    if not samples:
        raise ConfigError("train needs a nonempty dataset")
    if sisr_cfg.s != cfg.s:
        raise ConfigError(f"extractor s={sisr_cfg.s} disagrees with train s={cfg.s}")
    rng = np.random.default_rng(cfg.seed)
    weights = init_sisr_weights(sisr_cfg, cfg.seed)
    weights.update(init_miff_weights(miff_cfg, sisr_cfg.channels, cfg.seed + 1))
    sisr_params = {k: v for k, v in weights.items() if k.startswith("sisr.")}
    miff_params = {k: v for k, v in weights.items() if k.startswith("miff.")}
    cache: dict = {}
    history: list = []
    gstep = 0

    def record(value: float, lr: float):
        nonlocal gstep
        if not np.isfinite(value):
            raise TrainingDiverged(gstep)
        history.append((gstep, float(value), float(lr)))
        gstep += 1

    # phase 1: SISR alone, V=0, full-image L1 at fixed base lr
    state = AdamState(lr=cfg.base_lr)
    for _ in range(cfg.pretrain_steps):
        sample = samples[int(rng.integers(len(samples)))]
        for p in sisr_params.values():
            p.zero_grad()
        img = cache.setdefault(
            (id(sample.scene), "lr", sample.target),
            load_lr(sample.scene, sample.target).astype(np.float32),
        )
        i_sisr, _, _ = sisr_forward(img, sisr_cfg, weights)
        hr = _hr_f32(sample.scene, sample.target, cache)
        step_loss = l1_loss(i_sisr, hr)
        backward(step_loss)
        adam_step(sisr_params, state)
        record(float(step_loss.data), state.lr)

    # phases A (frozen SISR) and B (joint)
    state = AdamState()
    joint_state: AdamState | None = None
    feat_cache: dict = {}
    for step in range(cfg.steps):
        joint = step >= cfg.freeze_sisr_steps
        if joint and joint_state is None:
            joint_state = AdamState()
            feat_cache.clear()
        sample = samples[int(rng.integers(len(samples)))]
        scene = sample.scene
        hr = _hr_f32(scene, sample.target, cache)
        sh, sw = hr.shape[:2]
        n = sh * sw
        pick = rng.permutation(n)[: cfg.batch]
        ys, xs = np.divmod(pick, sw)
        params = dict(weights) if joint else miff_params
        for p in params.values():
            p.zero_grad()

        idxs = (sample.target,) + tuple(sample.extras)
        if joint:
            outs = [
                sisr_forward(
                    cache.setdefault((id(scene), "lr", i), load_lr(scene, i).astype(np.float32)),
                    sisr_cfg,
                    weights,
                )
                for i in idxs
            ]
        else:
            outs = []
            for i in idxs:
                key = (id(scene), i)
                if key not in feat_cache:
                    with no_grad():
                        img = cache.setdefault(
                            (id(scene), "lr", i), load_lr(scene, i).astype(np.float32)
                        )
                        o = sisr_forward(img, sisr_cfg, weights)
                    feat_cache[key] = tuple(Tensor(t.data) for t in o)
                outs.append(feat_cache[key])
        i_sisr, f0 = outs[0][0], outs[0][1]
        sampling = RaySampling(P=cfg.p_train, near=scene.near, far=scene.far)
        cams = [scene.views[i].camera for i in idxs]
        tiles = [
            cast_and_project_pixels(
                cams[0], cams[1 + j], outs[1 + j][1], sampling, cfg.s,
                xs.astype(np.float64), ys.astype(np.float64),
            )
            for j in range(len(sample.extras))
        ]
        if tiles:
            feats = concat(
                [reshape(t[0], (1, cfg.p_train, cfg.batch, sisr_cfg.channels)) for t in tiles], axis=0
            )
            valid = np.stack([t[1] for t in tiles], axis=0)
            f0_tile = _gather_rows(reshape(f0, (n, sisr_cfg.channels)), pick)
            delta, _ = miff_forward_pixels(f0_tile, feats, valid, tiles[0][2], miff_cfg, weights)
        else:
            delta = as_tensor(np.zeros((cfg.batch, 3), dtype=np.float32))
        sisr_tile = _gather_rows(reshape(i_sisr, (n, 3)), pick)
        misr_tile = add(sisr_tile, delta)
        hr_tile = hr.reshape(n, 3)[pick]
        if joint:
            step_loss = loss(misr_tile, sisr_tile, hr_tile, cfg.alpha)
        else:
            # alpha term is constant while SISR is frozen; log it, do not differentiate it
            step_loss = l1_loss(misr_tile, hr_tile)
        backward(step_loss)
        cur = joint_state if joint else state
        cur.lr = _lr_at(step, cfg)
        adam_step(params, cur)
        logged = float(step_loss.data)
        if not joint:
            logged += cfg.alpha * float(np.mean(np.abs(sisr_tile.data - hr_tile)))
        record(logged, cur.lr)

    result = TrainResult(weights=weights, history=history, sisr_cfg=sisr_cfg, miff_cfg=miff_cfg, cfg=cfg)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "loss.csv"), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "loss", "lr"])
            for row in history:
                wr.writerow([row[0], f"{row[1]:.10e}", f"{row[2]:.10e}"])
        meta = {
            "sisr": sisr_cfg.to_dict(),
            "miff": miff_cfg.to_dict(),
            "train": cfg.to_dict(),
            "channels": sisr_cfg.channels,
            "steps_run": gstep,
        }
        save_checkpoint(os.path.join(out_dir, "checkpoint"), weights, meta)
    return result


# -- evaluation ---------------------------------------------------------------------

EVAL_FIELDS = ("psnr_misr", "psnr_sisr", "ssim", "lr_consistency_psnr")

EVAL_REPORT_SCHEMA = {
    "type": "object",
    "required": list(EVAL_FIELDS) + ["per_scene"],
    "properties": {
        **{f: {"type": "number"} for f in EVAL_FIELDS},
        "per_scene": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": list(EVAL_FIELDS),
                "properties": {f: {"type": "number"} for f in EVAL_FIELDS},
            },
        },
    },
}


@dataclass
class EvalReport:
    psnr_misr: float
    psnr_sisr: float
    ssim: float
    lr_consistency_psnr: float
    per_scene: dict

    def to_dict(self) -> dict:
        return {
            "psnr_misr": self.psnr_misr,
            "psnr_sisr": self.psnr_sisr,
            "ssim": self.ssim,
            "lr_consistency_psnr": self.lr_consistency_psnr,
            "per_scene": self.per_scene,
        }

    def text_table(self) -> str:
        rows = [("scene", "psnr_misr", "psnr_sisr", "ssim", "lr_consistency")]
        for sid in sorted(self.per_scene):
            m = self.per_scene[sid]
            rows.append(
                (
                    sid,
                    f"{m['psnr_misr']:.3f}",
                    f"{m['psnr_sisr']:.3f}",
                    f"{m['ssim']:.4f}",
                    f"{m['lr_consistency_psnr']:.3f}",
                )
            )
        rows.append(
            (
                "mean",
                f"{self.psnr_misr:.3f}",
                f"{self.psnr_sisr:.3f}",
                f"{self.ssim:.4f}",
                f"{self.lr_consistency_psnr:.3f}",
            )
        )
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def save_report(report: EvalReport, path: str) -> None:
    doc = report.to_dict()
    jsonschema.validate(doc, EVAL_REPORT_SCHEMA)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _eval_targets(n_views: int, targets_per_scene: int | None) -> list[int]:
    if targets_per_scene is None or targets_per_scene >= n_views:
        return list(range(n_views))
    idx = np.unique(np.round(np.linspace(0, n_views - 1, targets_per_scene)).astype(int))
    return [int(i) for i in idx]


def evaluate(
    scenes: list[SceneManifest],
    weights: dict[str, Tensor],
    sisr_cfg: FeatureExtractorConfig,
    miff_cfg: MiffConfig,
    p_points: int,
    v: int,
    selection: str = "nearest",
    border_crop: int = 4,
    targets_per_scene: int | None = None,
    tile: int = 1024,
) -> EvalReport:
    """Average reconstruction metrics over scenes; outputs clamp to [0,1]."""
    if not scenes:
        raise ConfigError("evaluate needs at least one scene")
    per_scene: dict = {}
    with no_grad():
        for scene in scenes:
            vals = {f: [] for f in EVAL_FIELDS}
            for target in _eval_targets(len(scene.views), targets_per_scene):
                extras = select_extras(scene, target, v, selection)
                sample = Sample(scene=scene, target=target, extras=extras)
                out = forward_sample(sample, sisr_cfg, miff_cfg, p_points, weights, tile=tile)
                hr = load_hr(scene, target)
                misr = np.clip(out.i_misr.data.astype(np.float64), 0.0, 1.0)
                sisr_img = np.clip(out.i_sisr.data.astype(np.float64), 0.0, 1.0)
                vals["psnr_misr"].append(psnr(misr, hr, border_crop))
                vals["psnr_sisr"].append(psnr(sisr_img, hr, border_crop))
                vals["ssim"].append(ssim(misr, hr))
                lr_img = load_lr(scene, target)
                vals["lr_consistency_psnr"].append(
                    lr_consistency(misr, lr_img, scene.s, scene.degradation)
                )
            per_scene[scene.scene_id] = {f: float(np.mean(vals[f])) for f in EVAL_FIELDS}
    agg = {f: float(np.mean([per_scene[s][f] for s in per_scene])) for f in EVAL_FIELDS}
    return EvalReport(per_scene=per_scene, **agg)
