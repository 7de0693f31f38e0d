import warnings

import numpy as np
import pytest

from msle.data import Dataset, standardize
from msle.errors import ConfigInvalid, SingleClassTrain
from msle.evaluation import (ClassifierParams, GaussianNB, auc, classify_gnb, classify_knn, confusion_matrix,
                             fit_linear_svm, knn_predict, macro_scores, reduction_k, roc_curve, run_classifier,
                             sweep_reduction, write_reports)
from msle.selector import MSLEConfig, contiguous_views
from oracles import brute_knn, macro_f1_from_confusion, naive_gnb_log_joint

FAST = MSLEConfig(n_components=4, max_iter=300)


def blobs(n=90, d=6, classes=3, spread=3.0, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    centers = rng.normal(0, spread, size=(classes, d))
    return centers[y] + rng.normal(size=(n, d)), y


def split(seed=0, **kw):
    X, y = blobs(seed=seed, **kw)
    tr = Dataset(X[::2], y[::2])
    te = Dataset(X[1::2], y[1::2])
    trz, tez, *_ = standardize(tr, te)
    return trz, tez


# ------------------------------------------------------------------- kNN

@pytest.mark.parametrize("seed", range(4))
def test_knn_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    Xtr = rng.integers(0, 4, size=(40, 3)).astype(float)  # many exact distance ties
    ytr = rng.integers(0, 3, size=40)
    Xte = rng.integers(0, 4, size=(25, 3)).astype(float)
    for k in (1, 4, 5):
        pred, _ = knn_predict(Xtr, ytr, Xte, k, 3, block=7)
        np.testing.assert_array_equal(pred, brute_knn(Xtr, ytr, Xte, k, 3))


def test_knn_k1_recovers_training_labels():
    X, y = blobs(30, 4)
    pred, frac = knn_predict(X, y, X, 1, 3)
    np.testing.assert_array_equal(pred, y)
    np.testing.assert_array_equal(frac.sum(axis=1), 1.0)


def test_knn_vote_tie_goes_to_smaller_class():
    Xtr = np.array([[0.0], [1.0], [-1.0], [3.0]])
    ytr = np.array([2, 1, 2, 1])
    # neighbours of 0.2: 0 (class 2), 1 (class 1), -1 (class 2), 3 (class 1): 2-2 tie at k=4
    pred, _ = knn_predict(Xtr, ytr, np.array([[0.2]]), 4, 3)
    assert pred[0] == 1


def test_knn_invalid_k():
    tr, te = split()
    with pytest.raises(ConfigInvalid):
        classify_knn(tr, te, 0)


# ------------------------------------------------------------------- GNB

def test_gnb_log_joint_matches_naive():
    X, y = blobs(40, 3, seed=1)
    Xte = np.random.default_rng(2).normal(size=(10, 3))
    model = GaussianNB.fit(X, y, 3)
    np.testing.assert_allclose(model.log_joint(Xte), naive_gnb_log_joint(X, y, Xte, 3), rtol=0, atol=1e-10)


def test_gnb_equal_priors_midpoint_tie():
    X = np.array([[-1.0], [-3.0], [1.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    lj = GaussianNB.fit(X, y, 2).log_joint(np.array([[0.0]]))
    assert abs(lj[0, 0] - lj[0, 1]) <= 1e-12
    assert np.argmax(lj[0]) == 0


def test_gnb_variance_floor_keeps_constant_feature_finite():
    X = np.array([[0.0, 5.0], [1.0, 5.0], [10.0, 5.0], [11.0, 5.0]])
    y = np.array([0, 0, 1, 1])
    model = GaussianNB.fit(X, y, 2)
    assert np.all(model.variances > 0) and np.all(np.isfinite(model.log_joint(X)))


def test_gnb_separated_classes_perfect():
    tr, te = split(spread=20.0)
    assert classify_gnb(tr, te).accuracy == 1.0


def test_gnb_single_class():
    X = np.random.default_rng(3).normal(size=(6, 2))
    with pytest.raises(SingleClassTrain):
        classify_gnb(Dataset(X, np.zeros(6, int)), Dataset(X, np.zeros(6, int)))


# ------------------------------------------------------------------- SVM

def test_svm_separable_training_accuracy():
    tr, _ = split(spread=10.0)
    model = fit_linear_svm(tr.X, tr.y, 3)
    assert np.mean(model.predict(tr.X) == tr.y) == 1.0


def test_svm_decision_values_are_dot_products():
    tr, te = split(seed=4)
    model = fit_linear_svm(tr.X, tr.y, 3)
    dec = model.decision_function(te.X)
    for i in range(te.n):
        for c in range(3):
            ref = sum(model.W[c, j] * te.X[i, j] for j in range(te.d)) + model.b[c]
            assert abs(dec[i, c] - ref) <= 1e-12


def test_svm_identical_features_predict_majority():
    X = np.ones((7, 3))
    y = np.array([0, 1, 1, 2, 1, 0, 2])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit_linear_svm(X, y, 3)
    np.testing.assert_array_equal(model.predict(np.random.default_rng(0).normal(size=(4, 3))), [1, 1, 1, 1])


def test_svm_warns_or_refuses_unstandardized():
    X, y = blobs(30, 3)
    with pytest.warns(UserWarning):
        fit_linear_svm(X + 10.0, y, 3)
    with pytest.raises(ConfigInvalid):
        fit_linear_svm(X + 10.0, y, 3, strict=True)


def test_svm_deterministic():
    tr, te = split(seed=5)
    a = fit_linear_svm(tr.X, tr.y, 3)
    b = fit_linear_svm(tr.X, tr.y, 3)
    assert a.W.tobytes() == b.W.tobytes() and a.b.tobytes() == b.b.tobytes()


# --------------------------------------------------------------- metrics

@pytest.mark.parametrize("seed", range(5))
def test_confusion_and_macro_f1(seed):
    rng = np.random.default_rng(seed)
    yt = rng.integers(0, 4, 50)
    yp = np.where(rng.random(50) < 0.6, yt, rng.integers(0, 4, 50))
    cm = confusion_matrix(yt, yp, 4)
    assert cm.sum() == 50
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(yt, minlength=4))
    np.testing.assert_array_equal(cm.sum(axis=0), np.bincount(yp, minlength=4))
    assert abs(macro_scores(cm)[2] - macro_f1_from_confusion(cm.tolist())) <= 1e-12


def test_macro_scores_absent_class_skipped():
    cm = np.array([[3, 1, 0], [0, 2, 0], [0, 0, 0]])
    p, r, f = macro_scores(cm)
    assert abs(p - (1.0 + 2 / 3) / 2) <= 1e-12 and abs(r - (0.75 + 1.0) / 2) <= 1e-12


def test_roc_monotone_and_auc_examples():
    rng = np.random.default_rng(6)
    s = rng.normal(size=100)
    pos = rng.random(100) < 0.4
    curve = roc_curve(s, pos)
    assert tuple(curve[0]) == (np.inf, 0.0, 0.0)
    assert tuple(curve[-1, 1:]) == (1.0, 1.0)
    assert np.all(np.diff(curve[:, 1]) >= 0) and np.all(np.diff(curve[:, 2]) >= 0)
    assert np.all(np.diff(curve[1:, 0]) < 0)
    assert auc(roc_curve([3.0, 2.0, 1.0, 0.0], [True, True, False, False])) == 1.0
    assert auc(roc_curve([0.0, 1.0], [True, False])) == 0.0
    assert auc(roc_curve([1.0, 1.0], [True, False])) == 0.5


def test_roc_auc_equals_pairwise_ranking():
    rng = np.random.default_rng(7)
    s = rng.integers(0, 5, 60).astype(float)
    pos = rng.random(60) < 0.5
    P, N = s[pos], s[~pos]
    ref = np.mean([(p > q) + 0.5 * (p == q) for p in P for q in N])
    assert abs(auc(roc_curve(s, pos)) - ref) <= 1e-12


# ------------------------------------------------------------ cross-checks

def test_against_scikit_learn():
    sk = pytest.importorskip("sklearn")
    from sklearn.metrics import f1_score, roc_auc_score
    from sklearn.naive_bayes import GaussianNB as SkGNB
    from sklearn.neighbors import KNeighborsClassifier
    tr, te = split(seed=8, spread=1.5)
    ours = knn_predict(tr.X, tr.y, te.X, 5, 3)[0]
    theirs = KNeighborsClassifier(5, algorithm="brute").fit(tr.X, tr.y).predict(te.X)
    assert np.mean(ours == theirs) >= 0.95
    g = classify_gnb(tr, te)
    sk_pred = SkGNB().fit(tr.X, tr.y).predict(te.X)
    np.testing.assert_array_equal(np.argmax(GaussianNB.fit(tr.X, tr.y, 3).log_joint(te.X), axis=1), sk_pred)
    assert abs(g.f1 - f1_score(te.y, sk_pred, average="macro")) <= 1e-12
    scores = GaussianNB.fit(tr.X, tr.y, 3).log_joint(te.X)[:, 0]
    assert abs(auc(roc_curve(scores, te.y == 0)) - roc_auc_score(te.y == 0, scores)) <= 1e-12
    assert sk.__version__


# ----------------------------------------------------------------- sweep

def test_reduction_k():
    assert reduction_k(561, 80) == 112
    assert reduction_k(561, 0) == 561
    assert reduction_k(10, 95) == 1
    assert reduction_k(5, 50) == 3  # 2.5 rounds up
    for bad in (-1, 100):
        with pytest.raises(ConfigInvalid):
            reduction_k(10, bad)


@pytest.fixture(scope="module")
def sweep():
    X, y = blobs(120, 10, seed=9, spread=1.5)
    tr, te = Dataset(X[::2], y[::2]), Dataset(X[1::2], y[1::2])
    return tr, te, sweep_reduction(tr, te, [0, 50, 80, 90], config=FAST, views=contiguous_views(10, 2))


def test_sweep_zero_reduction_is_baseline(sweep):
    tr, te, res = sweep
    trz, tez, *_ = standardize(tr, te)
    for c in ("knn", "gnb", "svm"):
        rep = next(r for r in res.reports if r.classifier == c and r.reduction_percent == 0)
        assert rep.feature_count == 10
        assert rep.accuracy == run_classifier(c, trz, tez).accuracy


def test_sweep_selections_nested(sweep):
    _, _, res = sweep
    assert set(res.kept(90)) <= set(res.kept(80)) <= set(res.kept(50))
    assert [len(res.kept(r)) for r in (50, 80, 90)] == [5, 2, 1]
    assert len(res.reports) == 12


def test_sweep_rejects_unknown_classifier(sweep):
    tr, te, _ = sweep
    with pytest.raises(ConfigInvalid):
        sweep_reduction(tr, te, [10], classifiers=("rf",), config=FAST)


def test_reports_deterministic(sweep, tmp_path):
    tr, te, res = sweep
    again = sweep_reduction(tr, te, [0, 50, 80, 90], config=FAST, views=contiguous_views(10, 2))
    write_reports(res, tmp_path / "a")
    write_reports(again, tmp_path / "b")
    for name in ("accuracy_table.tsv", "metrics_table.tsv", "selected_features.tsv", "sweep.json",
                 "confusion/svm_r50.tsv", "roc/knn_r80.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "accuracy_table.tsv").read_text().splitlines()[0]
    assert header == "classifier\t0\t50\t80\t90"


def test_classifier_params_forwarded():
    tr, te = split(seed=10)
    rep = run_classifier("knn", tr, te, ClassifierParams(knn_k=3))
    assert rep.params == {"k_neighbors": 3}
    with pytest.raises(ConfigInvalid):
        run_classifier("tree", tr, te)
