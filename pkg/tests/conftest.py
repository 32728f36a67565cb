import sys
from pathlib import Path

import numpy as np
import pytest

from fedcmfs.dataset import DataKind, MultiLabelDataset

sys.path.insert(0, str(Path(__file__).parent))


def make_dataset(features, labels, kind=DataKind.CONTINUOUS):
    features = np.asarray(features, dtype=np.int64 if kind is DataKind.DISCRETE else float)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim == 1:
        features = features[:, None]
    if labels.ndim == 1:
        labels = labels[:, None]
    return MultiLabelDataset(
        features=features,
        labels=labels,
        feature_names=tuple(f"f{j}" for j in range(features.shape[1])),
        label_names=tuple(f"y{j}" for j in range(labels.shape[1])),
        data_kind=kind,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
