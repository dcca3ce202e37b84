import numpy as np
import pytest

from malelm import imaging
from malelm.dataset import ClassCatalog, Dataset


def make_dataset(X, y, names=None):
    y = np.asarray(y)
    if names is None:
        names = [f"c{j}" for j in range(int(y.max()) + 1)]
    counts = np.bincount(y, minlength=len(names))
    return Dataset(X, y, ClassCatalog(tuple(names), tuple(int(c) for c in counts)))


def write_corpus(root, classes, per_class=3, size=(20, 24), seed=0):
    """Class-per-directory PNG corpus; class j images are biased to brightness j."""
    rng = np.random.default_rng(seed)
    for j, name in enumerate(classes):
        d = root / name
        d.mkdir(parents=True)
        for i in range(per_class):
            base = 40 + 170 * j / max(len(classes) - 1, 1)
            px = np.clip(rng.normal(base, 20, size[::-1]), 0, 255).astype(np.uint8)
            imaging.write_image(imaging.GrayImage(px), d / f"{name}_{i}.png")
    return root


@pytest.fixture
def toy_corpus(tmp_path):
    return write_corpus(tmp_path / "corpus", ["alpha", "beta"], per_class=6)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
