import csv
from pathlib import Path

import numpy as np
import pytest

from glitchtrace.data import Dataset, make_blobs


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


@pytest.fixture
def blob_300():
    return make_blobs(n=300, d=2, k=3, separation=8.0, seed=7)


@pytest.fixture
def tiny_dataset():
    features = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0]])
    labels = np.array([0, 1, 0, 1])
    return Dataset(features, labels, np.array([10, 11, 12, 13]), 2)
