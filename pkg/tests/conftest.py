import pytest

from difftrain.data import (SyntheticConfig, generate_synthetic,
                            regression_dataset_from_synthetic)


@pytest.fixture(scope="session")
def small_synth():
    cfg = SyntheticConfig(subjects_per_partition=(3, 3, 3), num_frames=240,
                          num_features=6, num_raters=4)
    return generate_synthetic(cfg, seed=11)


@pytest.fixture(scope="session")
def small_dataset(small_synth):
    return regression_dataset_from_synthetic(small_synth, "arousal")
