import logging
import math

import numpy as np
import pytest
from conftest import make_dataset, write_corpus
from hypothesis import given
from hypothesis import strategies as st

from malelm import dataset as ds
from malelm.dataset import ClassCatalog, Featurization, class_weights, load_corpus, stratified_split


def test_load_corpus_counts(tmp_path):
    root = write_corpus(tmp_path / "c", ["b_cls", "a_cls"], per_class=3)
    data = load_corpus(root, Featurization("2d", 64, 64))
    assert len(data) == 6
    assert data.feature_dim == 4096
    assert data.catalog.names == ("a_cls", "b_cls")
    assert data.catalog.counts == (3, 3)
    assert data.catalog.total == 6
    assert np.all((data.X >= 0) & (data.X <= 1))


def test_load_corpus_1d(tmp_path):
    root = write_corpus(tmp_path / "c", ["x", "y"], per_class=2)
    data = load_corpus(root, Featurization("1d", length=100))
    assert data.X.shape == (4, 100)


def test_load_corpus_parallel_matches_serial(tmp_path):
    root = write_corpus(tmp_path / "c", ["x", "y", "z"], per_class=4)
    a = load_corpus(root, Featurization("2d", 8, 8))
    b = load_corpus(root, Featurization("2d", 8, 8), jobs=4)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)


def test_load_corpus_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "nope")


def test_load_corpus_empty_class(tmp_path):
    root = write_corpus(tmp_path / "c", ["full"], per_class=2)
    (root / "hollow").mkdir()
    with pytest.raises(ValueError, match="hollow"):
        load_corpus(root)


def test_load_corpus_skips_corrupt(tmp_path, caplog):
    root = write_corpus(tmp_path / "c", ["x", "y"], per_class=3)
    (root / "x" / "broken.png").write_bytes(b"\x89PNG not really")
    with caplog.at_level(logging.WARNING):
        data = load_corpus(root, Featurization("2d", 8, 8))
    assert len(data) == 6
    assert data.catalog.counts == (3, 3)
    assert "broken.png" in caplog.text


def test_load_corpus_does_not_modify_files(tmp_path):
    root = write_corpus(tmp_path / "c", ["x", "y"], per_class=2)
    before = {p: p.read_bytes() for p in root.rglob("*.png")}
    load_corpus(root, Featurization("2d", 8, 8))
    assert before == {p: p.read_bytes() for p in root.rglob("*.png")}


def test_malimg_table():
    assert len(ds.MALIMG_COUNTS) == 25
    assert sum(ds.MALIMG_COUNTS.values()) == ds.MALIMG_TOTAL == 9342
    assert ds.MALIMG_COUNTS["Allaple.A"] == 2949


def _malimg_catalog():
    names = sorted(ds.MALIMG_COUNTS)
    return ClassCatalog(tuple(names), tuple(ds.MALIMG_COUNTS[n] for n in names))


def test_class_weights_balanced():
    for n in (1, 7, 1000):
        np.testing.assert_allclose(class_weights(ClassCatalog(("a", "b", "c"), (n, n, n))), math.sqrt(3))


def test_class_weights_malimg():
    cat = _malimg_catalog()
    w = dict(zip(cat.names, class_weights(cat)))
    assert w["Allaple.A"] == pytest.approx(1.780, abs=1e-3)
    assert w["Skintrim.N"] == pytest.approx(10.806, abs=1e-3)


def test_class_weights_zero_count():
    with pytest.raises(ValueError):
        class_weights(ClassCatalog(("a", "b"), (3, 0)))


@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=30), st.integers(1, 50))
def test_class_weights_scale_invariant_and_ordered(counts, k):
    names = tuple(f"c{i:02d}" for i in range(len(counts)))
    w = class_weights(ClassCatalog(names, tuple(counts)))
    np.testing.assert_allclose(class_weights(ClassCatalog(names, tuple(c * k for c in counts))), w, rtol=1e-12)
    order = np.argsort(counts, kind="stable")
    assert np.all(np.diff(w[order]) <= 1e-12)


def test_catalog_invariants():
    with pytest.raises(ValueError):
        ClassCatalog(("b", "a"), (1, 1))
    with pytest.raises(ValueError):
        ClassCatalog(("a", "a"), (1, 1))


def test_manifest(tmp_path):
    cat = ClassCatalog(("a", "b"), (1, 3))
    ds.write_manifest(cat, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "class,count,weight"
    assert lines[1] == f"a,1,{2.0:.6f}"


def test_split_single_class():
    data = make_dataset(np.arange(10.0)[:, None], [0] * 10)
    train, test = stratified_split(data, 0.3, seed=5)
    assert (len(train), len(test)) == (7, 3)


def test_split_deterministic():
    rng = np.random.default_rng(0)
    data = make_dataset(rng.random((40, 3)), rng.integers(0, 3, 40))
    a = stratified_split(data, 0.25, seed=9)
    b = stratified_split(data, 0.25, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.X, y.X)
        np.testing.assert_array_equal(x.y, y.y)


def test_split_malimg_shape_keeps_every_class():
    cat = _malimg_catalog()
    y = np.repeat(np.arange(len(cat)), cat.counts)
    X = np.arange(y.size, dtype=float)[:, None]
    data = ds.Dataset(X, y, cat)
    train, test = stratified_split(data, 0.2, seed=1)
    assert set(train.y) == set(test.y) == set(range(25))
    assert train.catalog == test.catalog == cat
    assert len(test) == sum(int(math.floor(0.2 * c + 0.5)) for c in cat.counts)


def test_split_rejects_singleton_class():
    data = make_dataset(np.zeros((3, 1)), [0, 0, 1])
    with pytest.raises(ValueError, match="fewer than 2"):
        stratified_split(data, 0.5, seed=0)


@given(st.lists(st.integers(2, 30), min_size=1, max_size=6), st.floats(0.05, 0.95), st.integers(0, 2**32))
def test_split_partitions(sizes, frac, seed):
    y = np.repeat(np.arange(len(sizes)), sizes)
    X = np.arange(y.size, dtype=float)[:, None]
    data = make_dataset(X, y)
    train, test = stratified_split(data, frac, seed)
    assert len(train) + len(test) == len(data)
    ids = np.concatenate([train.X[:, 0], test.X[:, 0]])
    assert sorted(ids) == list(X[:, 0])
    # labels travel with their vectors
    assert np.all(y[train.X[:, 0].astype(int)] == train.y)
    assert np.all(y[test.X[:, 0].astype(int)] == test.y)
    for j in range(len(sizes)):
        assert (test.y == j).sum() >= 1 and (train.y == j).sum() >= 1
