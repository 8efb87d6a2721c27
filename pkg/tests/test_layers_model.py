import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sesr import gradcheck as G
from sesr import layers as L
from sesr import tensor as T
from sesr.errors import ConfigError, ShapeError
from sesr.model import (ModelConfig, build_model, count_params, forward_pyramid, pin_se_gains,
                        zero_residual_paths)


def block_params(seed=0, kind="se", dtype=np.float64):
    p = {k: v.astype(dtype) for k, v in G._block_params(seed).items()}
    if kind == "plain":
        p = {k: v for k, v in p.items() if not k.startswith("se.")}
    return p


# ------------------------------------------------------------------ SE

def test_se_zero_weights_give_half():
    p = {k: np.zeros_like(v) for k, v in block_params().items() if k.startswith("se.")}
    u = np.random.default_rng(0).standard_normal((2, 256, 5, 5))
    g, _ = L.se_forward(u, p)
    assert g.shape == (2, 256, 1, 1)
    np.testing.assert_array_equal(g, 0.5)


def test_se_gains_in_unit_interval():
    u = 10 * np.random.default_rng(1).standard_normal((1, 256, 4, 4))
    g, _ = L.se_forward(u, block_params(1))
    assert np.all((g > 0) & (g < 1))


def test_se_permutation_equivariance_with_permuted_weights():
    rng = np.random.default_rng(2)
    p = {k: v for k, v in block_params(2).items() if k.startswith("se.")}
    u = rng.standard_normal((1, 256, 4, 4))
    perm = rng.permutation(256)
    q = dict(p)
    q["se.down.weight"] = p["se.down.weight"][:, perm]
    q["se.up.weight"] = p["se.up.weight"][perm]
    q["se.up.bias"] = p["se.up.bias"][perm]
    g, _ = L.se_forward(u, p)
    gp, _ = L.se_forward(u[:, perm], q)
    np.testing.assert_allclose(gp, g[:, perm], atol=1e-12)


def test_se_invariant_to_spatial_shuffle():
    rng = np.random.default_rng(3)
    p = {k: v for k, v in block_params(3).items() if k.startswith("se.")}
    u = rng.standard_normal((1, 256, 4, 4))
    shuffled = u.reshape(1, 256, 16)[..., rng.permutation(16)].reshape(u.shape)
    np.testing.assert_allclose(L.se_forward(shuffled, p)[0], L.se_forward(u, p)[0], atol=1e-12)


def test_se_channel_mismatch():
    p = {k: v for k, v in block_params().items() if k.startswith("se.")}
    with pytest.raises(ShapeError):
        L.se_forward(np.zeros((1, 64, 4, 4)), p)


# --------------------------------------------------------------- block

def test_block_with_zero_weights_is_identity():
    p = {k: np.zeros_like(v) for k, v in block_params().items()}
    x = np.random.default_rng(0).standard_normal((2, 64, 6, 7))
    out, _ = L.se_resblock_forward(x, p)
    np.testing.assert_array_equal(out, x)


@pytest.mark.parametrize("seed", range(3))
def test_pinned_gains_reduce_to_plain_block(seed):
    p = block_params(seed)
    p["se.up.weight"] = np.zeros_like(p["se.up.weight"])
    p["se.up.bias"] = np.full_like(p["se.up.bias"], 20.0)
    plain = {k: v for k, v in p.items() if not k.startswith("se.")}
    x = np.random.default_rng(seed).standard_normal((1, 64, 8, 8))
    a, _ = L.se_resblock_forward(x, p)
    b, _ = L.se_resblock_forward(x, plain)
    assert np.max(np.abs(a - b)) < 1e-5


def test_block_shape_and_errors():
    x = np.zeros((1, 64, 5, 9))
    assert L.se_resblock_forward(x, block_params())[0].shape == x.shape
    with pytest.raises(ShapeError):
        L.se_resblock_forward(np.zeros((1, 32, 5, 5)), block_params())
    with pytest.raises(ShapeError):
        L.se_resblock_forward(np.zeros((1, 64, 2, 5)), block_params())


def test_block_layout_kinds():
    assert "se.down" in L.block_layout(kind="se")
    assert "se.down" not in L.block_layout(kind="plain")
    with pytest.raises(ConfigError):
        L.block_layout(kind="dense")


def test_bilinear_kernel():
    k = L.bilinear_upsample_kernel(4)
    np.testing.assert_allclose(k[0], [0.0625, 0.1875, 0.1875, 0.0625])
    np.testing.assert_allclose(k.sum(), 4.0)


# ------------------------------------------------------------ recursion

def test_depth_one_is_a_single_block_bitwise():
    p = block_params(4)
    x = np.random.default_rng(4).standard_normal((1, 64, 6, 6))
    unit, _ = L.recursive_unit_forward(x, p, 1)
    block, _ = L.se_resblock_forward(x, p)
    np.testing.assert_array_equal(unit, block)


def test_depth_three_is_three_applications():
    p = block_params(5)
    x = np.random.default_rng(5).standard_normal((1, 64, 5, 5))
    y = x
    for _ in range(3):
        y, _ = L.se_resblock_forward(y, p)
    np.testing.assert_array_equal(L.recursive_unit_forward(x, p, 3)[0], y)


def test_recursive_gradients_are_summed_over_applications():
    # the unit's parameter gradient equals the sum of per-application block gradients
    p = block_params(6)
    x = np.random.default_rng(6).standard_normal((1, 64, 5, 5))
    out, caches = L.recursive_unit_forward(x, p, 2)
    d = np.random.default_rng(7).standard_normal(out.shape)
    _, total = L.recursive_unit_backward(d, caches, p)
    d1, g2 = L.se_resblock_backward(d, caches[1], p)
    _, g1 = L.se_resblock_backward(d1, caches[0], p)
    for k in total:
        np.testing.assert_allclose(total[k], g1[k] + g2[k], rtol=1e-12, atol=1e-12)


def test_keep_cache_false_keeps_output():
    p = block_params(1)
    x = np.random.default_rng(1).standard_normal((1, 64, 5, 5))
    a, ca = L.recursive_unit_forward(x, p, 2)
    b, cb = L.recursive_unit_forward(x, p, 2, keep_cache=False)
    np.testing.assert_array_equal(a, b)
    assert len(ca) == 2 and cb == []


def test_bad_depth():
    with pytest.raises(ConfigError):
        L.recursive_unit_forward(np.zeros((1, 64, 4, 4)), block_params(), 0)
    with pytest.raises(ConfigError):
        ModelConfig(recursion_depth=0)


# ---------------------------------------------------------------- model

@pytest.mark.parametrize("depth", [2, 4, 6])
def test_param_count_is_independent_of_depth(depth):
    counts = count_params(build_model(ModelConfig(recursion_depth=depth)))
    assert counts["weights"] == 624_352
    assert counts["total"] == 625_988
    assert 610_000 <= counts["weights"] <= 640_000


def test_param_accounting_by_group():
    g = count_params(build_model())["by_group"]
    block = sum(v["weight"] for k, v in g.items() if k.startswith("branch2.block."))
    assert block == 245_760
    assert g["entry_conv"]["weight"] == 576
    assert g["branch4.feat_deconv"]["weight"] == 65_536
    assert g["branch2.residual_conv"]["weight"] == 576
    assert g["branch2.image_deconv"]["weight"] == 16


def test_plain_model_has_fewer_params():
    se = count_params(build_model())["total"]
    plain = count_params(build_model(ModelConfig(block_kind="plain")))["total"]
    assert se - plain == 2 * (4096 + 16 + 4096 + 256)


def test_plain_and_se_models_share_non_se_weights():
    se = build_model(seed=3)
    plain = build_model(ModelConfig(block_kind="plain"), seed=3)
    for k in plain.params:
        np.testing.assert_array_equal(plain.params[k], se.params[k])


def test_one_block_per_branch():
    # weight sharing: a single set of block parameters per branch whatever the depth
    names = list(build_model(ModelConfig(recursion_depth=6)).params)
    assert sum(n.endswith("conv1.weight") for n in names) == 2


@settings(max_examples=8, deadline=None)
@given(h=st.integers(8, 40), w=st.integers(8, 40))
def test_output_shapes(h, w):
    model = build_model(ModelConfig(recursion_depth=1))
    out = forward_pyramid(model, np.zeros((1, 1, h, w), np.float32))
    assert out["sr2"].shape == (1, 1, 2 * h, 2 * w)
    assert out["sr4"].shape == (1, 1, 4 * h, 4 * w)


@pytest.mark.slow
def test_output_shapes_at_64():
    out = forward_pyramid(build_model(), np.zeros((1, 1, 64, 48), np.float32))
    assert out["sr4"].shape == (1, 1, 256, 192)


def test_input_errors():
    model = build_model(ModelConfig(recursion_depth=1))
    with pytest.raises(ShapeError):
        forward_pyramid(model, np.zeros((1, 1, 7, 12)))
    with pytest.raises(ShapeError):
        forward_pyramid(model, np.zeros((1, 3, 12, 12)))


def test_build_and_forward_are_deterministic():
    a, b = build_model(seed=11), build_model(seed=11)
    assert a.params.checksum() == b.params.checksum()
    assert a.params.checksum() != build_model(seed=12).params.checksum()
    x = np.random.default_rng(0).uniform(0, 1, (1, 1, 10, 10)).astype(np.float32)
    np.testing.assert_array_equal(forward_pyramid(a, x)["sr4"], forward_pyramid(b, x)["sr4"])


def test_untrained_output_scale_is_moderate():
    x = np.random.default_rng(0).uniform(0, 1, (1, 1, 16, 16)).astype(np.float32)
    out = forward_pyramid(build_model(seed=0), x)
    assert np.all(np.isfinite(out["sr4"]))
    assert out["sr4"].std() < 10


def test_zero_weight_model_is_two_bilinear_upsamples():
    model = build_model(ModelConfig(recursion_depth=2), seed=0, dtype=np.float64)
    zero_residual_paths(model)
    x = np.random.default_rng(0).uniform(0, 1, (1, 1, 9, 10))
    spec = model.layout["branch2.image_deconv"]
    k = L.bilinear_upsample_kernel(4).reshape(1, 1, 4, 4)
    up1 = T.conv_transpose2d(x, k, np.zeros(1), spec)
    up2 = T.conv_transpose2d(up1, k, np.zeros(1), spec)
    out = forward_pyramid(model, x)
    np.testing.assert_allclose(out["sr2"], up1, atol=1e-12)
    np.testing.assert_allclose(out["sr4"], up2, atol=1e-12)
    # interior of a constant image stays constant under the bilinear deconv
    c = forward_pyramid(model, np.full((1, 1, 8, 8), 0.5))["sr4"]
    np.testing.assert_allclose(c[..., 4:-4, 4:-4], 0.5, atol=1e-12)


def test_pinned_model_matches_plain_model():
    se = build_model(ModelConfig(recursion_depth=2), seed=5, dtype=np.float64)
    plain = build_model(ModelConfig(recursion_depth=2, block_kind="plain"), seed=5, dtype=np.float64)
    pin_se_gains(se)
    x = np.random.default_rng(5).uniform(0, 1, (1, 1, 8, 8))
    a, b = forward_pyramid(se, x), forward_pyramid(plain, x)
    assert np.max(np.abs(a["sr4"] - b["sr4"])) < 1e-5


def test_config_round_trip_and_unknown_keys():
    cfg = ModelConfig(recursion_depth=3, se_inner_activation=False)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"recursion_depth": 2, "width": 3})
    with pytest.raises(ConfigError):
        ModelConfig(scales=(2, 4, 8))


# ------------------------------------------------------- gradient checks

@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("case", G.KERNEL_CASES, ids=lambda c: c.__name__)
def test_kernel_gradients(case, seed):
    r = case(seed)
    assert r.passed, r.line()


@pytest.mark.parametrize("case", [G.case_se_module, G.case_se_resblock, G.case_recursive_unit, G.case_branch],
                         ids=lambda c: c.__name__)
def test_composite_gradients(case):
    r = case(0)
    assert r.passed, r.line()


def test_literal_se_and_plain_block_gradients():
    assert G.case_se_module(1, inner_activation=False).passed
    assert G.case_se_resblock(1, kind="plain").passed


def test_checker_rejects_a_wrong_backward():
    # a 1% error in one parameter gradient is not absorbed by the step refinement
    p = block_params(0)
    x = np.random.default_rng(0).standard_normal((1, 64, 4, 4))
    arr = {"x": x, **p}

    def fwd(a):
        return [L.se_resblock_forward(a["x"], a)[0]]

    def bad_bwd(a, d):
        _, cache = L.se_resblock_forward(a["x"], a)
        dx, grads = L.se_resblock_backward(d[0], cache, a)
        grads["conv2.bias"] = grads["conv2.bias"] * 1.01
        return {"x": dx, **grads}
    r = G.check_arrays("broken", arr, fwd, bad_bwd, G.KINK_TOL, h=1e-6, max_per_array=10)
    assert not r.passed
    assert r.worst_array == "conv2.bias"


def test_max_scale_two_matches_full_forward():
    model = build_model(ModelConfig(recursion_depth=1), seed=2)
    x = np.random.default_rng(2).uniform(0, 1, (1, 1, 8, 9)).astype(np.float32)
    half = forward_pyramid(model, x, max_scale=2)
    assert set(half) == {"sr2"}
    np.testing.assert_array_equal(half["sr2"], forward_pyramid(model, x)["sr2"])
    with pytest.raises(ConfigError):
        forward_pyramid(model, x, max_scale=3)
