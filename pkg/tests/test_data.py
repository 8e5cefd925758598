import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sevgp import data as D


def test_synthetic_is_seeded_and_on_domain():
    a, b = D.gen_synthetic(50, 1), D.gen_synthetic(50, 1)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    assert np.all(np.abs(a.X) <= 2)
    np.testing.assert_array_equal(a.bounds, [[-2.0, 2.0]])
    with pytest.raises(ValueError):
        D.gen_synthetic(1)


def test_synthetic_noise_variance():
    d = D.gen_synthetic(200_000, 0)
    r = d.y - D.true_mean(d.X[:, 0])
    assert r.var() == pytest.approx(0.25, rel=0.01)
    assert abs(r.mean()) < 0.005


def test_dataset_validation():
    with pytest.raises(ValueError):
        D.Dataset(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        D.Dataset(np.array([[1.0], [np.nan]]), np.zeros(2))
    with pytest.raises(ValueError):
        D.Dataset(np.zeros((2, 2)), np.zeros(2), ("a",))


@pytest.mark.parametrize("sep", [",", ";", "\t"])
def test_load_csv_delimiters(tmp_path, sep):
    p = tmp_path / "d.csv"
    rows = [["a", "b", "t"], ["1", "2", "3"], ["4", "x", "6"], ["7", "8", "9"], ["", "", ""], ["1", "2"]]
    p.write_text("\n".join(sep.join(r) for r in rows) + "\n")
    d = D.load_csv(p, "t")
    assert d.feature_names == ("a", "b")
    np.testing.assert_array_equal(d.X, [[1, 2], [7, 8]])
    np.testing.assert_array_equal(d.y, [3, 9])
    assert d.n_dropped == 2
    d2 = D.load_csv(p, "t", ["b"])
    np.testing.assert_array_equal(d2.X, [[2], [8]])


def test_load_csv_quoted_header(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text('"fixed acidity";"alcohol";"quality"\n7.4;9.4;5\n7.8;9.8;5\n7.8;9.8;6\n')
    d = D.load_csv(p, "quality")
    assert d.feature_names == ("fixed acidity", "alcohol") and d.n == 3


def test_load_csv_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        D.load_csv(tmp_path / "none.csv", "t")
    p = tmp_path / "d.csv"
    p.write_text("a,t\n1,2\n")
    with pytest.raises(KeyError):
        D.load_csv(p, "zz")
    with pytest.raises(KeyError):
        D.load_csv(p, "t", ["q"])
    p.write_text("a,t\nx,y\n")
    with pytest.raises(ValueError):
        D.load_csv(p, "t")
    p.write_text("")
    with pytest.raises(ValueError):
        D.load_csv(p, "t")


def test_standardize_roundtrip_and_test_split():
    rng = np.random.default_rng(0)
    d = D.Dataset(rng.normal(3, 2, (40, 3)), rng.normal(5, 4, 40))
    s = D.standardize(d)
    np.testing.assert_allclose(s.X.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(s.X.std(0), 1, atol=1e-12)
    assert s.y.std() == pytest.approx(1.0)
    back = D.unstandardize(s)
    np.testing.assert_allclose(back.X, d.X, atol=1e-12)
    np.testing.assert_allclose(back.y, d.y, atol=1e-12)
    other = d.subset(np.arange(5))
    t = D.apply_stats(other, s)
    np.testing.assert_allclose(t.X, s.X[:5], atol=1e-12)
    assert D.standardize(d, other).x_mean is not None
    with pytest.raises(ValueError):
        D.standardize(s)


def test_standardize_constant_column_warns():
    X = np.column_stack([np.arange(5.0), np.full(5, 3.0)])
    with pytest.warns(UserWarning):
        s = D.standardize(D.Dataset(X, np.arange(5.0)))
    np.testing.assert_array_equal(s.X[:, 1], 3.0)
    with pytest.raises(ValueError), pytest.warns(UserWarning):
        D.standardize(D.Dataset(X, np.ones(5)))


@given(st.integers(1, 200), st.integers(1, 20), st.integers(0, 1000))
def test_kfold_partition(n, k, seed):
    if k > n:
        with pytest.raises(ValueError):
            D.kfold(n, k, seed)
        return
    folds = D.kfold(n, k, seed)
    assert len(folds) == k
    np.testing.assert_array_equal(np.sort(np.concatenate(folds)), np.arange(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    for a, b in zip(folds, D.kfold(n, k, seed)):
        np.testing.assert_array_equal(a, b)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.integers(0, 100))
def test_mse_properties(values, seed):
    a = np.array(values)
    b = a + np.random.default_rng(seed).normal(size=a.size)
    assert D.mse(a, a) == 0.0
    assert D.mse(a, b) > 0.0
    with pytest.raises(ValueError):
        D.mse(a, a[:-1] if a.size > 1 else np.zeros(2))


@given(st.integers(0, 1000), st.integers(1, 4))
def test_stability_of_constant_field_is_zero(seed, k):
    X = np.random.default_rng(seed).normal(size=(25, k))
    assert D.stability(lambda Xq: np.full((len(Xq), k), 0.7), X) == 0.0


def test_stability_identity_field_is_one():
    X = np.random.default_rng(0).normal(size=(30, 1))
    np.testing.assert_allclose(D.stability_per_instance(lambda Xq: Xq, X), 1.0, atol=1e-12)


def test_stability_matches_brute_force():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))

    def F(Xq):
        return np.column_stack([np.sin(Xq[:, 0]), Xq[:, 1] * Xq[:, 2], np.exp(-Xq[:, 0] ** 2)])

    FX = F(X)
    want = []
    for i in range(30):
        d = [(np.linalg.norm(X[i] - X[j]), j) for j in range(30) if j != i]
        near = [j for _, j in sorted(d)[:10]]
        want.append(max(np.linalg.norm(FX[i] - FX[j]) / np.linalg.norm(X[i] - X[j]) for j in near))
    np.testing.assert_allclose(D.stability_per_instance(F, X, m=10, chunk=7), want, atol=1e-12)


def test_stability_skips_duplicates():
    X = np.array([[0.0], [0.0], [1.0], [3.0]])
    with pytest.warns(UserWarning):
        s = D.stability_per_instance(lambda Xq: Xq**2, X, m=3)
    assert np.all(np.isfinite(s))
    assert s[0] == pytest.approx(3.0)  # neighbours 1 and 3 only; max(1/1, 9/3)
    with pytest.raises(ValueError):
        D.stability(lambda Xq: Xq, X, m=4)
