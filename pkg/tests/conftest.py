import pytest

from zerosight.config import RunConfig
from zerosight.data import synth_gen


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 classes x 10 samples of 16px images; small enough for multi-epoch runs in seconds."""
    root = tmp_path_factory.mktemp("tiny")
    synth_gen(8, 10, 16, seed=0, out_dir=root, min_accuracy=0.0)
    return root


@pytest.fixture
def tiny_config(tiny_dataset, tmp_path):
    return RunConfig(dataset=str(tiny_dataset), output_dir=str(tmp_path / "run"), widths=(4, 8), cbam_reduction=2,
                     input_size=16, epochs=2, batch_classes=2, batch_per_class=4, eval_batch_size=16)
