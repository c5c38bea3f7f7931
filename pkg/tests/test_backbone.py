import numpy as np
import pytest

from zerosight.backbone import BackboneConfig, build, embed
from zerosight.exceptions import ConfigurationError
from zerosight.gradcheck import run_check
from zerosight.tensor import Tensor

TOY = BackboneConfig(widths=(8, 16), placement="early", use_input_attention=True, cbam_reduction=4)


def closed_form_count(widths, in_ch, ia, cbam_stages, r):
    """Parameter count written out from the layer recipe, independent of the module code."""
    w0 = widths[0]
    total = in_ch * w0 * 49 + 2 * w0  # stem conv + norm
    if ia:
        total += 2 * (w0 * w0 * 9 + w0)
    prev = w0
    for s, w in enumerate(widths):
        total += prev * w * 9 + 2 * w + w * w * 9 + 2 * w
        if s > 0 or prev != w:
            total += prev * w + 2 * w
        if s in cbam_stages:
            h = w // r
            total += 2 * h * w + h + w + 2 * 49 + 1
        prev = w
    return total


@pytest.mark.parametrize("config, cbam_stages", [
    (BackboneConfig(widths=(4, 8)), ()),
    (BackboneConfig(widths=(4, 8), use_input_attention=True, placement="early", cbam_reduction=2), (0,)),
    (BackboneConfig(widths=(8, 16, 32), placement="everywhere", cbam_reduction=4), (0, 1, 2)),
])
def test_parameter_count_closed_form(config, cbam_stages):
    expected = closed_form_count(config.widths, 3, config.use_input_attention, cbam_stages, config.cbam_reduction)
    assert build(config).num_parameters() == expected


def test_hand_counted_toy_sizes():
    assert build(BackboneConfig(widths=(4, 8))).num_parameters() == 1844
    assert build(BackboneConfig(widths=(4, 8), use_input_attention=True, placement="early",
                                cbam_reduction=2)).num_parameters() == 2261


def test_same_seed_bit_identical():
    a, b = build(TOY, seed=3).state_dict(), build(TOY, seed=3).state_dict()
    assert list(a) == list(b)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_different_seed_differs():
    a, b = build(TOY, seed=3).state_dict(), build(TOY, seed=4).state_dict()
    assert a["stem_conv.weight"].tobytes() != b["stem_conv.weight"].tobytes()


def test_embedding_dim_is_last_width():
    assert BackboneConfig(widths=(8, 16)).embedding_dim == 16
    assert build(TOY).embedding_dim == 16


@pytest.mark.parametrize("placement, groups", [
    ("none", []), ("early", ["block0.cbam"]), ("late", ["block2.cbam"]),
    ("everywhere", ["block0.cbam", "block1.cbam", "block2.cbam"]),
])
def test_placement_groups(placement, groups):
    cfg = BackboneConfig(widths=(8, 16, 32), placement=placement)
    assert build(cfg).cbam_groups() == groups


def test_early_with_two_blocks_covers_first_stage():
    cfg = BackboneConfig(widths=(8, 16), blocks_per_stage=2, placement="early")
    assert build(cfg).cbam_groups() == ["block0.cbam", "block1.cbam"]


def test_placements_differ_only_in_cbam_parameters():
    names = {}
    for p in ("none", "early", "late", "everywhere"):
        names[p] = {n for n, _ in build(BackboneConfig(widths=(8, 16, 32), placement=p)).named_parameters()}
    core = names["none"]
    for p, ns in names.items():
        assert core <= ns
        assert all(".cbam." in n for n in ns - core)


def test_ia_parameter_names():
    names = [n for n, _ in build(TOY).named_parameters()]
    assert "ia.conv_a.weight" in names and "ia.conv_b.bias" in names
    assert any(n.startswith("block0.cbam.") for n in names)


def test_embed_shape():
    model = build(BackboneConfig())
    x = np.random.default_rng(0).standard_normal((4, 3, 32, 32)).astype(np.float32)
    assert embed(model, x, "train").shape == (4, 128)


def test_full_stem_for_large_inputs():
    cfg = BackboneConfig(widths=(4, 8), input_size=64)
    model = build(cfg)
    x = np.random.default_rng(0).standard_normal((2, 3, 64, 64)).astype(np.float32)
    assert model.feature_map(Tensor(x)).shape == (2, 8, 8, 8)


def trained_stats_model():
    model = build(TOY, seed=1)
    x = np.random.default_rng(1).standard_normal((6, 3, 32, 32)).astype(np.float32)
    embed(model, x, "train")
    return model


def test_infer_duplicate_rows_identical():
    model = trained_stats_model()
    img = np.random.default_rng(2).standard_normal((1, 3, 32, 32)).astype(np.float32)
    out = embed(model, np.concatenate([img, img]), "infer").data
    np.testing.assert_array_equal(out[0], out[1])


def test_infer_permutation_equivariant():
    model = trained_stats_model()
    x = np.random.default_rng(3).standard_normal((5, 3, 32, 32))
    perm = np.array([3, 0, 4, 1, 2])
    a = embed(model, x, "infer").data
    b = embed(model, x[perm], "infer").data
    np.testing.assert_allclose(b, a[perm], rtol=1e-5, atol=1e-6)


def test_train_mode_uses_batch_statistics():
    model = trained_stats_model()
    x = np.random.default_rng(4).standard_normal((4, 3, 32, 32)).astype(np.float32)
    a = embed(model, x, "train").data
    b = embed(model, x, "infer").data
    assert not np.allclose(a, b)


def test_no_dense_layers():
    kinds = {type(m).__name__ for m in build(TOY).modules()}
    assert "Linear" not in kinds


def test_zero_width_stage():
    with pytest.raises(ConfigurationError, match="stage 1"):
        build(BackboneConfig(widths=(8, 0)))


def test_extent_collapse_names_stage():
    model = build(BackboneConfig(widths=(4, 4, 4, 4, 4, 4), input_size=8))
    with pytest.raises(ConfigurationError, match="stage 4"):
        embed(model, np.zeros((1, 3, 8, 8), dtype=np.float32), "train")


def test_stem_gradient_matches_finite_differences():
    worst, tol = run_check("embed", seeds=[21])
    assert worst <= tol
