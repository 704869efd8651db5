import shutil
from pathlib import Path

import numpy as np
import pytest

from liftbox.synthetic import random_scene, write_dataset

DATA = Path(__file__).parent / "data"
SYNTHETIC_CLASSES = {1: "chair", 2: "lamp", 3: "tv"}


def make_dataset(root: Path, n_scenes: int, seed: int) -> Path:
    """Render ``n_scenes`` synthetic scenes with reference counts and embeddings."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    scenes = [random_scene(rng, f"scene{i:02d}", int(rng.integers(1, 6))) for i in range(n_scenes)]
    for name in ("embeddings.json", "ref_counts.yaml"):
        shutil.copy(DATA / name, root / name)
    (root / "partition.json").write_text('{"original": [1, 2], "new": [3], "background": 0}\n')
    return write_dataset(root, scenes, dataset={
        "classes": SYNTHETIC_CLASSES,
        "embedding_file": "embeddings.json",
        "ref_counts_file": "ref_counts.yaml",
        "partition_file": "partition.json",
    })


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    return make_dataset(tmp_path_factory.mktemp("small"), 4, seed=21)
