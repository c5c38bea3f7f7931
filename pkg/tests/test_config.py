import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zerosight.config import RunConfig
from zerosight.exceptions import ConfigurationError


def test_defaults_follow_training_recipe():
    c = RunConfig()
    assert (c.lr, c.weight_decay, c.lr_gamma, c.epochs) == (1e-4, 5e-4, 0.94, 50)
    assert (c.lambda_proxy, c.lambda_softmax) == (1.0, 0.5)
    assert (c.batch_classes, c.batch_per_class) == (4, 4)


def test_text_round_trip():
    c = RunConfig(dataset="d", widths=(8, 16), placement="late", lr=3e-4, use_separation_norm=False)
    assert RunConfig.from_text(c.to_text()) == c


def test_comments_and_blank_lines():
    c = RunConfig.from_text("# comment\n\nepochs = 3  # trailing\nplacement=none\n")
    assert c.epochs == 3 and c.placement == "none"


@pytest.mark.parametrize("text", [
    "nonsense = 1\n", "epochs = 1\nepochs = 2\n", "epochs 5\n", "epochs = many\n",
    "use_input_attention = maybe\n", "placement = middle\n", "split_mode = both\n", "dtype = float16\n",
    "epochs = -1\n",
])
def test_rejects_bad_files(text):
    with pytest.raises(ConfigurationError):
        RunConfig.from_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        RunConfig.load(tmp_path / "absent.cfg")


def test_save_load(tmp_path):
    c = RunConfig(dataset="x", epochs=7)
    c.save(tmp_path / "run.cfg")
    assert RunConfig.load(tmp_path / "run.cfg") == c


def test_hash_ignores_output_dir_only():
    base = RunConfig(dataset="d")
    assert base.replace(output_dir="elsewhere").config_hash == base.config_hash
    assert base.replace(init_seed=1).config_hash != base.config_hash
    assert base.replace(placement="late").config_hash != base.config_hash
    assert len(base.config_hash) == 16


@settings(max_examples=30, deadline=None)
@given(epochs=st.integers(0, 100), lr=st.floats(1e-6, 1.0), seed=st.integers(0, 2**31),
       ia=st.booleans(), placement=st.sampled_from(["none", "early", "late", "everywhere"]))
def test_round_trip_property(epochs, lr, seed, ia, placement):
    c = RunConfig(epochs=epochs, lr=lr, init_seed=seed, use_input_attention=ia, placement=placement)
    back = RunConfig.from_text(c.to_text())
    assert back == c and back.config_hash == c.config_hash


def test_backbone_config():
    b = RunConfig(widths=(8, 16), placement="early", use_input_attention=True).backbone()
    assert b.embedding_dim == 16 and b.stage_has_cbam(0) and not b.stage_has_cbam(1)
