"""Forward composition, loss, checkpointing, training determinism, eval."""

import json
import os

import numpy as np
import pytest

from epimisr.data.manifest import load_manifest
from epimisr.data.synthetic import SyntheticSceneSpec, render_synthetic_views, rig_cameras, write_scene
from epimisr.data.dataset import Sample, build_dataset
from epimisr.errors import ConfigError, ParseError, TrainingDiverged
from epimisr.metrics import DegradationSpec, degrade
from epimisr.miff import MiffConfig, init_miff_weights
from epimisr.pipeline import (
    EVAL_REPORT_SCHEMA,
    EvalReport,
    TrainConfig,
    evaluate,
    forward_views,
    load_checkpoint,
    loss,
    save_checkpoint,
    save_report,
    train,
)
from epimisr.sisr import FeatureExtractorConfig, init_sisr_weights
from epimisr.tensor import Tensor

SISR_CFG = FeatureExtractorConfig(variant="bicubic_conv3", channels=4, s=2)
MIFF_CFG = MiffConfig(d_model=8, heads=2, enc_layers=1, dec_layers=1, ffn_width=16)


def _init_weights(seed=0, random_head=False):
    w = init_sisr_weights(SISR_CFG, seed)
    w.update(init_miff_weights(MIFF_CFG, SISR_CFG.channels, seed + 1))
    if random_head:
        r = np.random.default_rng(99)
        w["miff.head.w"].data[:] = r.normal(0, 0.2, size=(MIFF_CFG.d_model, 3)).astype(np.float32)
    return w


def _toy_render():
    spec = SyntheticSceneSpec(
        scene_id="toy", geometry="textured_plane", rig="ring", n_views=4, hr_size=16, s=2, seed=5
    )
    render = render_synthetic_views(spec)
    cams = rig_cameras(spec)
    lrs = [degrade(img, 2, spec.degradation).astype(np.float32) for img in render.images]
    return lrs, cams, render


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    manifests = []
    for i in range(2):
        spec = SyntheticSceneSpec(
            scene_id=f"scene{i}",
            geometry="textured_plane" if i == 0 else "two_planes",
            rig="ring",
            n_views=5,
            hr_size=16,
            s=2,
            seed=10 + i,
        )
        manifests.append(load_manifest(write_scene(spec, str(root))))
    return manifests


class TestLoss:
    def test_hand_values(self):
        hr = np.full((4, 4, 3), 0.5)
        misr = hr + 0.1
        sisr = hr + 0.2
        val = loss(Tensor(misr), Tensor(sisr), hr, alpha=1.0)
        assert abs(float(val.data) - 0.3) < 1e-12

    def test_alpha_zero_is_pure_misr(self):
        hr = np.zeros((2, 2, 3))
        val = loss(Tensor(hr + 0.1), Tensor(hr + 0.7), hr, alpha=0.0)
        assert abs(float(val.data) - 0.1) < 1e-12

    def test_perfect_outputs_zero(self):
        hr = np.random.default_rng(1).uniform(size=(3, 3, 3))
        assert float(loss(Tensor(hr.copy()), Tensor(hr.copy()), hr, 1.0).data) == 0.0


class TestForward:
    def test_zero_init_misr_equals_sisr(self):
        lrs, cams, render = _toy_render()
        w = _init_weights()
        out = forward_views(lrs[:3], cams[:3], render.near, render.far, SISR_CFG, MIFF_CFG, 4, w)
        np.testing.assert_array_equal(out.i_misr.data, out.i_sisr.data)
        assert out.i_misr.shape == (16, 16, 3)

    def test_v0_returns_sisr(self):
        lrs, cams, render = _toy_render()
        w = _init_weights(random_head=True)
        out = forward_views(lrs[:1], cams[:1], render.near, render.far, SISR_CFG, MIFF_CFG, 4, w)
        np.testing.assert_array_equal(out.i_misr.data, out.i_sisr.data)
        assert out.attn.averaged_attn.shape == (256, 0)

    def test_extra_view_permutation(self):
        lrs, cams, render = _toy_render()
        w = _init_weights(random_head=True)
        a = forward_views(
            [lrs[0], lrs[1], lrs[2], lrs[3]],
            [cams[0], cams[1], cams[2], cams[3]],
            render.near, render.far, SISR_CFG, MIFF_CFG, 4, w,
        )
        b = forward_views(
            [lrs[0], lrs[3], lrs[1], lrs[2]],
            [cams[0], cams[3], cams[1], cams[2]],
            render.near, render.far, SISR_CFG, MIFF_CFG, 4, w,
        )
        assert np.max(np.abs(a.i_misr.data - b.i_misr.data)) < 1e-5

    def test_tiling_does_not_change_output(self):
        lrs, cams, render = _toy_render()
        w = _init_weights(random_head=True)
        big = forward_views(lrs[:3], cams[:3], render.near, render.far, SISR_CFG, MIFF_CFG, 4, w, tile=4096)
        small = forward_views(lrs[:3], cams[:3], render.near, render.far, SISR_CFG, MIFF_CFG, 4, w, tile=37)
        np.testing.assert_array_equal(big.i_misr.data, small.i_misr.data)
        np.testing.assert_array_equal(big.attn.averaged_attn, small.attn.averaged_attn)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        w = _init_weights(seed=7)
        meta = {"note": "x", "step": 3}
        save_checkpoint(str(tmp_path / "ck"), w, meta)
        loaded, meta2 = load_checkpoint(str(tmp_path / "ck"))
        assert meta2 == meta
        assert set(loaded) == set(w)
        for k in w:
            np.testing.assert_array_equal(loaded[k].data, w[k].data)
            assert loaded[k].dtype == w[k].dtype
            assert loaded[k].requires_grad

    def test_missing_index_raises(self, tmp_path):
        with pytest.raises(ParseError):
            load_checkpoint(str(tmp_path))

    def test_tampered_index_raises(self, tmp_path):
        w = {"a": Tensor(np.zeros((2, 2), dtype=np.float32))}
        save_checkpoint(str(tmp_path / "ck"), w)
        ipath = tmp_path / "ck" / "index.json"
        doc = json.loads(ipath.read_text())
        doc["tensors"]["a"]["shape"] = [3, 3]
        ipath.write_text(json.dumps(doc))
        with pytest.raises(ParseError):
            load_checkpoint(str(tmp_path / "ck"))


class TestTrain:
    def _cfg(self, **kw):
        base = dict(
            steps=6, pretrain_steps=2, freeze_sisr_steps=3, base_lr=1e-3,
            warmup_steps=2, batch=16, seed=0, v_train=2, p_train=4, s=2,
        )
        base.update(kw)
        return TrainConfig(**base)

    def test_zero_steps_checkpoint_equals_init(self, corpus):
        samples = build_dataset(corpus, V=2, seed=0)
        res = train(samples, SISR_CFG, MIFF_CFG, self._cfg(steps=0, pretrain_steps=0, freeze_sisr_steps=0))
        ref = _init_weights(seed=0)
        assert set(res.weights) == set(ref)
        for k in ref:
            np.testing.assert_array_equal(res.weights[k].data, ref[k].data)

    def test_same_seed_bit_identical(self, corpus, tmp_path):
        samples = build_dataset(corpus, V=2, seed=0)
        a = train(samples, SISR_CFG, MIFF_CFG, self._cfg(), out_dir=str(tmp_path / "a"))
        b = train(samples, SISR_CFG, MIFF_CFG, self._cfg(), out_dir=str(tmp_path / "b"))
        assert a.history == b.history
        for k in a.weights:
            np.testing.assert_array_equal(a.weights[k].data, b.weights[k].data)
        bytes_a = (tmp_path / "a" / "checkpoint" / "miff.head.w.eptn").read_bytes()
        bytes_b = (tmp_path / "b" / "checkpoint" / "miff.head.w.eptn").read_bytes()
        assert bytes_a == bytes_b
        assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()

    def test_different_seed_differs(self, corpus):
        samples = build_dataset(corpus, V=2, seed=0)
        a = train(samples, SISR_CFG, MIFF_CFG, self._cfg(seed=0))
        b = train(samples, SISR_CFG, MIFF_CFG, self._cfg(seed=1))
        assert any(
            not np.array_equal(a.weights[k].data, b.weights[k].data) for k in a.weights
        )

    def test_loss_csv_format(self, corpus, tmp_path):
        samples = build_dataset(corpus, V=2, seed=0)
        train(samples, SISR_CFG, MIFF_CFG, self._cfg(), out_dir=str(tmp_path))
        lines = (tmp_path / "loss.csv").read_text().strip().splitlines()
        assert lines[0] == "step,loss,lr"
        assert len(lines) == 1 + 8  # pretrain 2 + main 6
        first = lines[1].split(",")
        assert first[0] == "0" and float(first[1]) > 0

    def test_divergence_raises_with_step(self, corpus):
        samples = build_dataset(corpus, V=2, seed=0)
        cfg = self._cfg(
            steps=0, pretrain_steps=12, freeze_sisr_steps=0, base_lr=1e12,
        )
        sisr_cfg = FeatureExtractorConfig(variant="residual_stack", channels=4, depth=2, s=2)
        with pytest.raises(TrainingDiverged) as e:
            train(samples, sisr_cfg, MIFF_CFG, cfg)
        assert 0 < e.value.step < 12

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            train([], SISR_CFG, MIFF_CFG, self._cfg())

    def test_loss_decreases_over_200_steps(self, tmp_path):
        spec = SyntheticSceneSpec(
            scene_id="mono", geometry="textured_plane", rig="ring", n_views=5,
            hr_size=16, s=2, seed=10, texture_scale=1.0, octaves=2,
        )
        manifests = [load_manifest(write_scene(spec, str(tmp_path)))]
        samples = build_dataset(manifests, V=1, seed=0, targets_per_scene=1)
        cfg = TrainConfig(
            steps=200, pretrain_steps=0, freeze_sisr_steps=0, base_lr=2e-3,
            warmup_steps=10, batch=256, seed=0, v_train=1, p_train=4, s=2,
        )
        res = train(samples, SISR_CFG, MIFF_CFG, cfg)
        losses = np.array([r[1] for r in res.history])
        windows = [losses[i * 50 : (i + 1) * 50].mean() for i in range(4)]
        assert all(windows[i + 1] < windows[i] for i in range(3))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(alpha=-1)
        with pytest.raises(ConfigError):
            TrainConfig(base_lr=0)
        with pytest.raises(ConfigError):
            TrainConfig(steps=10, freeze_sisr_steps=11)
        assert TrainConfig.from_dict(TrainConfig(milestones=(5, 9)).to_dict()).milestones == (5, 9)


class TestEvaluate:
    def test_zero_init_report(self, corpus, tmp_path):
        w = _init_weights()
        report = evaluate(corpus, w, SISR_CFG, MIFF_CFG, p_points=4, v=2, border_crop=2, targets_per_scene=2)
        assert report.psnr_misr == report.psnr_sisr
        assert -1.0 <= report.ssim <= 1.0
        assert np.isfinite(report.lr_consistency_psnr)
        assert set(report.per_scene) == {"scene0", "scene1"}
        path = str(tmp_path / "report.json")
        save_report(report, path)
        doc = json.loads(open(path).read())
        assert doc["psnr_misr"] == pytest.approx(report.psnr_misr)
        table = report.text_table()
        assert "scene0" in table and "mean" in table
        header = table.splitlines()[0]
        assert header.split() == ["scene", "psnr_misr", "psnr_sisr", "ssim", "lr_consistency"]

    def test_report_schema_rejects_missing_field(self):
        import jsonschema

        bad = {"psnr_misr": 1.0, "per_scene": {}}
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(bad, EVAL_REPORT_SCHEMA)
