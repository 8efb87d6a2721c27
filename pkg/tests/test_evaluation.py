import json
import math

import numpy as np
import pytest

from sesr import layers as L
from sesr import tensor as T
from sesr.ablation import ablation_run, patch_psnr, smoothed_non_increasing
from sesr.color import rgb_to_ycbcr, ycbcr_to_rgb
from sesr.errors import ConfigError
from sesr.evaluation import EvalReport, evaluate_dataset, evaluate_image, super_resolve
from sesr.images import read_image, write_image
from sesr.imresize import imresize
from sesr.metrics import psnr, ssim
from sesr.model import ModelConfig, build_model, zero_residual_paths
from sesr.training import FixedPatches, TrainConfig, extract_fixed_patches

from conftest import y_planes


def test_bicubic_report_is_consistent(image_dir):
    rep = evaluate_dataset("bicubic", image_dir, 4, threads=1)
    assert [r.name for r in rep.images] == sorted(r.name for r in rep.images)
    assert len(rep.images) == 6 and rep.skipped == []
    assert rep.border_crop == 4
    assert rep.mean_psnr == pytest.approx(np.mean([r.psnr_db for r in rep.images]), abs=1e-12)
    assert rep.mean_ssim == pytest.approx(np.mean([r.ssim for r in rep.images]), abs=1e-12)
    assert 15 < rep.mean_psnr < 45 and 0 < rep.mean_ssim < 1


def test_bicubic_row_matches_hand_pipeline(image_dir):
    rep = evaluate_dataset("bicubic", image_dir, 4, threads=1)
    img = read_image(image_dir / "astronaut.png")
    y = rgb_to_ycbcr(img, full_range=False)[0][1:97, 1:97]  # centered crop 98 -> 96
    sr = np.clip(imresize(imresize(y, 0.25), 4), 0, 255)
    row = next(r for r in rep.images if r.name == "astronaut")
    assert row.psnr_db == pytest.approx(psnr(sr, y, 4), abs=1e-12)
    assert row.ssim == pytest.approx(ssim(sr, y, 4), abs=1e-12)


def test_x2_beats_x4_on_aggregate(image_dir):
    assert evaluate_dataset("bicubic", image_dir, 2).mean_psnr > evaluate_dataset("bicubic", image_dir, 4).mean_psnr


def test_evaluation_is_order_and_thread_independent(image_dir, tmp_path):
    a = evaluate_dataset("bicubic", image_dir, 4, threads=1)
    b = evaluate_dataset("bicubic", image_dir, 4, threads=4)
    # same files under names that enumerate in a different order
    d = tmp_path / "renamed"
    d.mkdir()
    for k, p in enumerate(sorted(image_dir.iterdir(), reverse=True)):
        (d / f"{k}_{p.name}").write_bytes(p.read_bytes())
    c = evaluate_dataset("bicubic", d, 4)
    assert a.to_dict()["images"] == b.to_dict()["images"]
    assert sorted(r.psnr_db for r in a.images) == sorted(r.psnr_db for r in c.images)
    assert a.mean_psnr == pytest.approx(c.mean_psnr, abs=1e-12)


def test_identity_at_scale_one_is_infinite(image_dir):
    rep = evaluate_dataset("identity", image_dir, 1)
    assert all(r.psnr_db == math.inf and r.ssim == 1.0 for r in rep.images)
    d = json.loads(rep.to_json())
    assert d["images"][0]["psnr_db"] == "inf"
    back = EvalReport.from_dict(d)
    assert back.images[0].psnr_db == math.inf and back.mean_psnr == math.inf
    assert "inf/1.000" in rep.table()


def test_unreadable_images_are_skipped_and_counted(corrupt_dir):
    rep = evaluate_dataset("bicubic", corrupt_dir, 4)
    assert rep.skipped == ["broken.png"] and len(rep.images) == 2
    assert rep.to_dict()["aggregates"]["n_skipped"] == 1
    assert "skipped 1" in rep.table()


def test_report_json_round_trip(image_dir):
    rep = evaluate_dataset("bicubic", image_dir, 2)
    back = EvalReport.from_dict(json.loads(rep.to_json()))
    assert back.images == rep.images and back.border_crop == 2


def test_table_layout(image_dir):
    rep = evaluate_dataset("bicubic", image_dir, 4, name="Corpus")
    last = rep.table().splitlines()[-1].split()
    assert last[:3] == ["Corpus", "x4", "bicubic"]
    assert last[3] == f"{rep.mean_psnr:.2f}/{rep.mean_ssim:.3f}"


def test_scale_and_method_errors(image_dir):
    with pytest.raises(ConfigError):
        evaluate_dataset("bicubic", image_dir, 3)
    with pytest.raises(ConfigError):
        evaluate_dataset("identity", image_dir, 4)
    with pytest.raises(ConfigError):
        evaluate_dataset("sesr", image_dir, 4)
    with pytest.raises(FileNotFoundError):
        evaluate_dataset("bicubic", image_dir / "missing", 4)


def test_quantize_and_full_range_flags_change_scores(image_dir):
    base = evaluate_dataset("bicubic", image_dir, 4).mean_psnr
    assert evaluate_dataset("bicubic", image_dir, 4, quantize=True).mean_psnr != base
    # full-range Y stretches color-image differences by 255/219 (~1.32 dB lower);
    # single-channel images are used as-is under either convention
    full = evaluate_dataset("bicubic", image_dir, 4, full_range=True)
    studio = evaluate_dataset("bicubic", image_dir, 4)
    for f, s in zip(full.images, studio.images):
        expected = 0.0 if f.name == "camera" else 20 * math.log10(255 / 219)
        assert s.psnr_db - f.psnr_db == pytest.approx(expected, abs=0.05)


def test_sesr_method_runs(image_dir):
    model = build_model(ModelConfig(recursion_depth=1))
    rep = evaluate_dataset("sesr", image_dir, 2, model=model, limit=2)
    assert len(rep.images) == 2 and all(np.isfinite(r.psnr_db) for r in rep.images)


def two_bilinear_deconvs(plane):
    spec = T.ConvSpec.square(1, 1, 4, stride=2, padding=1, transposed=True)
    k = L.bilinear_upsample_kernel(4).reshape(1, 1, 4, 4)
    x = plane[None, None]
    for _ in range(2):
        x = T.conv_transpose2d(x, k, np.zeros(1), spec)
    return x[0, 0]


def test_zero_weight_model_super_resolve_matches_composition():
    rng = np.random.default_rng(0)
    rgb = rng.uniform(0, 255, (16, 12, 3)).round().astype(np.uint8)
    model = build_model(ModelConfig(recursion_depth=1), dtype=np.float64)
    zero_residual_paths(model)
    out = super_resolve(model, rgb, 4, quantize=False)
    y, cb, cr = rgb_to_ycbcr(rgb, full_range=True)
    y4 = two_bilinear_deconvs(y / 255.0) * 255.0
    expected = np.clip(ycbcr_to_rgb(y4, imresize(cb, 4), imresize(cr, 4), True), 0, 255)
    assert out.shape == (64, 48, 3)
    assert np.max(np.abs(out - expected)) < 1e-4
    # away from the zero-padded frame the deconvs are bilinear interpolation
    y_oracle = imresize(imresize(y, 2, kernel="bilinear"), 2, kernel="bilinear")
    np.testing.assert_allclose(y4[4:-4, 4:-4], y_oracle[4:-4, 4:-4], atol=1e-9)


def test_super_resolve_grayscale_and_uint8():
    model = build_model(ModelConfig(recursion_depth=1))
    g = np.random.default_rng(1).integers(0, 256, (10, 9), dtype=np.uint8)
    out = super_resolve(model, g, 2)
    assert out.dtype == np.uint8 and out.shape == (20, 18)


def test_evaluate_image_on_gray_input():
    img = np.random.default_rng(2).integers(0, 256, (40, 40)).astype(np.uint8)
    r = evaluate_image(img, "noise", "bicubic", 2)
    assert r.name == "noise" and 0 < r.psnr_db < 40


def test_image_io_round_trip(tmp_path):
    rgb = np.random.default_rng(3).integers(0, 256, (7, 5, 3), dtype=np.uint8)
    for ext in ("png", "ppm"):
        write_image(tmp_path / f"a.{ext}", rgb)
        np.testing.assert_array_equal(read_image(tmp_path / f"a.{ext}"), rgb)
    write_image(tmp_path / "g.pgm", rgb[..., 0])
    np.testing.assert_array_equal(read_image(tmp_path / "g.pgm"), rgb[..., 0])


# -------------------------------------------------------------- ablation

def test_smoothed_non_increasing():
    assert smoothed_non_increasing([5, 4, 6, 3, 3, 2, 2, 2, 1, 1], window=2)
    assert not smoothed_non_increasing([1, 1, 2, 2], window=2)


def test_ablation_schema_and_epoch_zero_equivalence(image_dir):
    planes = y_planes(64)[:2]
    triples = extract_fixed_patches(planes, n=2, patch_size_lr=8, seed=0)
    data = FixedPatches(triples)
    budget = TrainConfig(epochs=2, batch_size=2, patch_size_lr=8, learning_rate=1e-3)
    out = ablation_run(data, budget, ModelConfig(recursion_depth=1), seed=3,
                       eval_sets={"corpus": image_dir}, scale=2, patches=triples)
    plain, se = out["arms"]["plain"], out["arms"]["se"]
    assert plain["config_digest"] != se["config_digest"]
    assert plain["model_config"]["block_kind"] == "plain" and se["model_config"]["block_kind"] == "se"
    a, b = plain["epoch0"]["corpus"], se["epoch0"]["corpus"]
    assert [r["name"] for r in a["images"]] == [r["name"] for r in b["images"]]
    for ra, rb in zip(a["images"], b["images"]):
        assert ra["psnr_db"] == pytest.approx(rb["psnr_db"], abs=1e-4)
        assert ra["ssim"] == pytest.approx(rb["ssim"], abs=1e-6)
    assert plain["epoch0_patches"]["x4"]["sesr"] == pytest.approx(se["epoch0_patches"]["x4"]["sesr"], abs=1e-4)
    assert len(plain["history"]) == len(se["history"]) == 2
    assert "final" in plain and "final_patches" in se


def test_patch_psnr_bicubic_is_model_independent():
    triples = extract_fixed_patches(y_planes(64)[:1], n=2, patch_size_lr=8)
    a = patch_psnr(build_model(ModelConfig(recursion_depth=1), seed=0), triples)
    b = patch_psnr(build_model(ModelConfig(recursion_depth=1), seed=1), triples)
    assert a["x4"]["bicubic"] == b["x4"]["bicubic"]
