"""Classifier harness for selected feature subsets.

Three in-repo classifiers (k-nearest neighbours, Gaussian naive Bayes and a
one-vs-rest linear SVM trained with Pegasos-style stochastic subgradient
descent), multi-class metrics with one-vs-rest ROC curves, and the
feature-reduction sweep. A reduction of p percent keeps
``round(d * (1 - p/100))`` features.
"""
from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import Dataset, standardize
from .errors import ConfigInvalid, EmptyTrain, SingleClassTrain
from .graph import sq_distances
from .selector import MSLEConfig, SelectionResult, ViewSet, contiguous_views, run_msle, ucihar_views
from .store import write_delimited

log = logging.getLogger(__name__)

CLASSIFIERS = ("knn", "gnb", "svm")
REDUCTION_CONVENTION = "reduction_percent = share of original features removed; kept = round(d * (1 - p/100))"


@dataclass(frozen=True)
class ClassifierParams:
    knn_k: int = 5
    gnb_var_floor: float = 1e-9
    svm_lambda: float = 1e-4
    svm_epochs: int = 30
    svm_seed: int = 42
    strict: bool = False


@dataclass(frozen=True)
class MetricsReport:
    classifier: str
    feature_count: int
    reduction_percent: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray
    roc: dict
    auc: dict
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "classifier": self.classifier,
            "feature_count": self.feature_count,
            "reduction_percent": self.reduction_percent,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion.tolist(),
            "auc": {str(c): v for c, v in self.auc.items()},
            "params": self.params,
        }


# ------------------------------------------------------------------ metrics

def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def macro_scores(cm: np.ndarray) -> tuple[float, float, float]:
    """Macro precision, recall and F1 over the classes that occur in the
    truth or the predictions; empty denominators count as 0."""
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0).astype(float)
    true = cm.sum(axis=1).astype(float)
    present = (pred + true) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(pred > 0, tp / pred, 0.0)
        rec = np.where(true > 0, tp / true, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    if not present.any():
        return 0.0, 0.0, 0.0
    return float(prec[present].mean()), float(rec[present].mean()), float(f1[present].mean())


def roc_curve(scores, positive) -> np.ndarray:
    """One-vs-rest ROC points ``(threshold, tpr, fpr)`` with thresholds
    descending; the first row is ``(inf, 0, 0)``."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    P, N = int(positive.sum()), int((~positive).sum())
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], positive[order]
    tps = np.cumsum(p)
    fps = np.cumsum(~p)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1] if s.size else np.array([], dtype=int)
    thr = np.r_[np.inf, s[last]]
    tpr = np.r_[0.0, tps[last] / P if P else np.zeros(last.size)]
    fpr = np.r_[0.0, fps[last] / N if N else np.zeros(last.size)]
    return np.column_stack([thr, tpr, fpr])


def auc(curve: np.ndarray) -> float:
    fpr, tpr = curve[:, 2], curve[:, 1]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))


def build_report(name, y_true, y_pred, scores, n_classes, feature_count, reduction, params) -> MetricsReport:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    p, r, f = macro_scores(cm)
    acc = float(np.trace(cm) / cm.sum()) if cm.sum() else 0.0
    roc, areas = {}, {}
    for c in range(n_classes):
        pos = np.asarray(y_true) == c
        if pos.any() and (~pos).any():
            roc[c] = roc_curve(scores[:, c], pos)
            areas[c] = auc(roc[c])
    return MetricsReport(name, int(feature_count), float(reduction), acc, p, r, f, cm, roc, areas, params)


# -------------------------------------------------------------- classifiers

def _check_train(train: Dataset):
    if train.n == 0:
        raise EmptyTrain("training set is empty")
    if train.y is None:
        raise ConfigInvalid("training set has no labels")


def knn_predict(Xtr, ytr, Xte, k: int, n_classes: int, block: int = 512):
    """Majority vote over the ``k`` nearest training rows (Euclidean).

    Distance ties go to the lower training index, vote ties to the smaller
    class id. Returns predictions and vote fractions per class.
    """
    Xtr = np.asarray(Xtr, dtype=float)
    Xte = np.asarray(Xte, dtype=float)
    ntr = Xtr.shape[0]
    k = min(k, ntr)
    m = min(ntr, k + 16)
    votes = np.zeros((Xte.shape[0], n_classes))
    for start in range(0, Xte.shape[0], block):
        Q = Xte[start:start + block]
        approx = sq_distances(Q, Xtr)
        cand = np.argpartition(approx, m - 1, axis=1)[:, :m] if m < ntr else np.tile(np.arange(ntr), (len(Q), 1))
        cand = np.sort(cand, axis=1)
        # exact distances on the candidate set decide the final order
        exact = np.sum((Q[:, None, :] - Xtr[cand]) ** 2, axis=2)
        order = np.argsort(exact, axis=1, kind="stable")[:, :k]
        nn = np.take_along_axis(cand, order, axis=1)
        labs = np.asarray(ytr)[nn]
        for c in range(n_classes):
            votes[start:start + len(Q), c] = np.sum(labs == c, axis=1)
    pred = np.argmax(votes, axis=1)
    return pred, votes / k


def classify_knn(train: Dataset, test: Dataset, k_neighbors: int = 5, reduction: float = 0.0) -> MetricsReport:
    _check_train(train)
    if k_neighbors < 1:
        raise ConfigInvalid("k_neighbors must be at least 1")
    C = max(train.n_classes, test.n_classes)
    pred, frac = knn_predict(train.X, train.y, test.X, k_neighbors, C)
    return build_report("knn", test.y, pred, frac, C, train.d, reduction, {"k_neighbors": k_neighbors})


@dataclass(frozen=True)
class GaussianNB:
    means: np.ndarray
    variances: np.ndarray
    log_priors: np.ndarray

    @classmethod
    def fit(cls, X, y, n_classes: int, var_floor: float = 1e-9) -> "GaussianNB":
        X = np.asarray(X, dtype=float)
        present = np.unique(y)
        if present.size < 2:
            raise SingleClassTrain("Gaussian naive Bayes needs at least two classes")
        floor = var_floor * float(np.max(X.var(axis=0))) if X.size else 0.0
        floor = max(floor, np.finfo(float).tiny)
        means = np.zeros((n_classes, X.shape[1]))
        var = np.ones((n_classes, X.shape[1]))
        counts = np.bincount(y, minlength=n_classes).astype(float)
        for c in present:
            Xc = X[y == c]
            means[c] = Xc.mean(axis=0)
            var[c] = np.maximum(Xc.var(axis=0), floor)
        with np.errstate(divide="ignore"):
            log_priors = np.log(counts / counts.sum())
        return cls(means, var, log_priors)

    def log_joint(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty((X.shape[0], len(self.log_priors)))
        for c in range(len(self.log_priors)):
            out[:, c] = (self.log_priors[c] - 0.5 * np.sum(np.log(2 * np.pi * self.variances[c]))
                         - 0.5 * np.sum((X - self.means[c]) ** 2 / self.variances[c], axis=1))
        return out


def _softmax(a):
    a = a - np.max(a, axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def classify_gnb(train: Dataset, test: Dataset, var_floor: float = 1e-9, reduction: float = 0.0) -> MetricsReport:
    _check_train(train)
    C = max(train.n_classes, test.n_classes)
    model = GaussianNB.fit(train.X, train.y, C, var_floor)
    lj = model.log_joint(test.X)
    pred = np.argmax(lj, axis=1)
    return build_report("gnb", test.y, pred, _softmax(lj), C, train.d, reduction, {"var_floor": var_floor})


@dataclass(frozen=True)
class LinearSVM:
    W: np.ndarray  # classes x features
    b: np.ndarray
    fallback: np.ndarray | None = None

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.fallback is not None:
            return np.tile(self.fallback, (X.shape[0], 1))
        return X @ self.W.T + self.b

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)


def _looks_standardized(X) -> bool:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return bool(np.all(np.abs(mu) <= 1e-6) and np.all((np.abs(sd - 1) <= 1e-6) | (sd <= 1e-12)))


def fit_linear_svm(X, y, n_classes: int, lam: float = 1e-4, epochs: int = 30, seed: int = 42,
                   strict: bool = False) -> LinearSVM:
    """One-vs-rest hinge-loss classifiers by Pegasos subgradient steps.

    The bias is an extra constant feature and is regularised with the
    weights. Step size at update t is ``1 / (lam * t)``; iterates are
    projected onto the ball of radius ``1/sqrt(lam)``. The returned model
    averages the iterates of the second half of training, which is much
    steadier than the last iterate. Without any varying training feature
    the model predicts the majority class.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if not _looks_standardized(X):
        msg = "linear SVM expects standardised features"
        if strict:
            raise ConfigInvalid(msg)
        warnings.warn(msg, stacklevel=2)
    n, d = X.shape
    counts = np.bincount(y, minlength=n_classes).astype(float)
    if n == 0 or not np.any(X.std(axis=0) > 1e-12):
        return LinearSVM(np.zeros((n_classes, d)), np.zeros(n_classes), counts / max(counts.sum(), 1.0))
    Xa = np.hstack([X, np.ones((n, 1))])
    Yc = np.where(y[:, None] == np.arange(n_classes)[None, :], 1.0, -1.0)
    Wa = np.zeros((n_classes, d + 1))
    radius = 1.0 / math.sqrt(lam)
    rng = np.random.default_rng(seed)
    t = 0
    start_avg = (epochs * n) // 2
    Wsum = np.zeros_like(Wa)
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            x = Xa[i]
            yi = Yc[i]
            viol = yi * (Wa @ x) < 1.0
            Wa *= 1.0 - eta * lam
            if viol.any():
                Wa[viol] += (eta * yi[viol])[:, None] * x[None, :]
            norms = np.linalg.norm(Wa, axis=1)
            over = norms > radius
            if over.any():
                Wa[over] *= (radius / norms[over])[:, None]
            if t > start_avg:
                Wsum += Wa
    Wa = Wsum / (t - start_avg)
    return LinearSVM(Wa[:, :d].copy(), Wa[:, d].copy())


def classify_linear_svm(train: Dataset, test: Dataset, params: ClassifierParams = ClassifierParams(),
                        reduction: float = 0.0) -> MetricsReport:
    _check_train(train)
    C = max(train.n_classes, test.n_classes)
    model = fit_linear_svm(train.X, train.y, C, params.svm_lambda, params.svm_epochs, params.svm_seed,
                           params.strict)
    dec = model.decision_function(test.X)
    pred = np.argmax(dec, axis=1)
    return build_report("svm", test.y, pred, dec, C, train.d, reduction,
                        {"lambda": params.svm_lambda, "epochs": params.svm_epochs, "seed": params.svm_seed,
                         "kernel": "linear"})


def run_classifier(name: str, train: Dataset, test: Dataset, params: ClassifierParams = ClassifierParams(),
                   reduction: float = 0.0) -> MetricsReport:
    if name == "knn":
        return classify_knn(train, test, params.knn_k, reduction)
    if name == "gnb":
        return classify_gnb(train, test, params.gnb_var_floor, reduction)
    if name == "svm":
        return classify_linear_svm(train, test, params, reduction)
    raise ConfigInvalid(f"unknown classifier {name!r}; allowed: {', '.join(CLASSIFIERS)}")


# -------------------------------------------------------------------- sweep

def reduction_k(d: int, reduction: float) -> int:
    """Features kept after removing ``reduction`` percent (half rounds up)."""
    if not 0 <= reduction < 100:
        raise ConfigInvalid(f"reduction must lie in [0, 100), got {reduction}")
    return max(1, int(math.floor(d * (1.0 - reduction / 100.0) + 0.5)))


def default_views(ds: Dataset, m: int = 6) -> ViewSet:
    try:
        return ucihar_views(ds.feature_names)
    except ConfigInvalid:
        return contiguous_views(ds.d, min(m, ds.d))


@dataclass
class SweepResult:
    reports: list
    selection: SelectionResult
    reductions: list
    classifiers: list
    views: ViewSet
    params: ClassifierParams
    config: MSLEConfig
    timings: dict = field(default_factory=dict)

    def kept(self, reduction: float) -> np.ndarray:
        return self.selection.top(reduction_k(self.selection.d, reduction))


def sweep_reduction(train: Dataset, test: Dataset, reductions, classifiers=CLASSIFIERS,
                    config: MSLEConfig = MSLEConfig(), views: ViewSet | None = None,
                    params: ClassifierParams = ClassifierParams(),
                    selection: SelectionResult | None = None) -> SweepResult:
    """Select on the training split only, then train and test every listed
    classifier on each reduced feature set."""
    reductions = [float(r) for r in reductions]
    for r in reductions:
        reduction_k(train.d, r)
    for c in classifiers:
        if c not in CLASSIFIERS:
            raise ConfigInvalid(f"unknown classifier {c!r}; allowed: {', '.join(CLASSIFIERS)}")
    views = views or default_views(train)
    timings: dict[str, float] = {}
    if selection is None:
        selection = run_msle(train, views, train.d, config)
    timings.update({f"select.{k}": v for k, v in selection.timings.items()})
    trz, tez, *_ = standardize(train, test)
    reports = []
    t0 = time.perf_counter()
    for r in reductions:
        cols = selection.top(reduction_k(train.d, r))
        tr_r, te_r = trz.select_features(cols), tez.select_features(cols)
        for c in classifiers:
            reports.append(run_classifier(c, tr_r, te_r, params, r))
    timings["classify"] = time.perf_counter() - t0
    return SweepResult(reports, selection, reductions, list(classifiers), views, params, config, timings)


def cv_alphas(train: Dataset, views: ViewSet, k: int, grid=(0.01, 0.1, 1.0, 10.0), folds: int = 3,
              classifier: str = "knn", config: MSLEConfig = MSLEConfig(),
              params: ClassifierParams = ClassifierParams()) -> tuple[float, dict]:
    """Pick a common per-view alpha by stratified k-fold accuracy of
    ``classifier`` on the selected features. Only meaningful when the score
    rule uses the weight matrix."""
    rng = np.random.default_rng(config.seed)
    fold_of = np.empty(train.n, dtype=int)
    for c in range(train.n_classes):
        idx = np.flatnonzero(train.y == c)
        fold_of[idx[rng.permutation(idx.size)]] = np.arange(idx.size) % folds
    table = {}
    for a in grid:
        cfg = MSLEConfig(**{**config.to_dict(), "alphas": (float(a),) * views.m,
                            "sigma": config.sigma})
        accs = []
        for f in range(folds):
            tr = train.take(np.flatnonzero(fold_of != f))
            va = train.take(np.flatnonzero(fold_of == f))
            sel = run_msle(tr, views, k, cfg)
            trz, vaz, *_ = standardize(tr.select_features(sel.selected), va.select_features(sel.selected))
            accs.append(run_classifier(classifier, trz, vaz, params).accuracy)
        table[float(a)] = float(np.mean(accs))
    best = max(table, key=lambda a: (table[a], -a))
    return best, table


# ------------------------------------------------------------------ reports

def _rtag(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))


def write_reports(sweep: SweepResult, outdir) -> dict:
    """Write the sweep document and delimited tables. Timings go to a
    separate file so the report files are reproducible byte for byte."""
    out = Path(outdir)
    (out / "confusion").mkdir(parents=True, exist_ok=True)
    (out / "roc").mkdir(parents=True, exist_ok=True)
    tags = [_rtag(r) for r in sweep.reductions]
    by_key = {(rep.classifier, rep.reduction_percent): rep for rep in sweep.reports}

    rows = []
    for c in sweep.classifiers:
        rows.append([c] + [f"{100 * by_key[(c, r)].accuracy:.2f}" for r in sweep.reductions])
    write_delimited(out / "accuracy_table.tsv", ["classifier"] + tags, rows)

    rows = []
    for r in sweep.reductions:
        for c in sweep.classifiers:
            rep = by_key[(c, r)]
            rows.append([c, _rtag(r), rep.feature_count] +
                        [f"{100 * v:.2f}" for v in (rep.accuracy, rep.precision, rep.recall, rep.f1)])
    write_delimited(out / "metrics_table.tsv",
                    ["classifier", "reduction", "features", "accuracy", "precision", "recall", "f1"], rows)

    for rep, (c, r) in ((rep, (rep.classifier, rep.reduction_percent)) for rep in sweep.reports):
        tag = f"{c}_r{_rtag(r)}"
        C = rep.confusion.shape[0]
        write_delimited(out / "confusion" / f"{tag}.tsv", ["true\\pred"] + [str(j) for j in range(C)],
                        [[i] + rep.confusion[i].tolist() for i in range(C)])
        roc_rows = [[cls, *pt] for cls, curve in sorted(rep.roc.items()) for pt in curve.tolist()]
        write_delimited(out / "roc" / f"{tag}.tsv", ["class", "threshold", "tpr", "fpr"], roc_rows)

    feat_rows = []
    names = sweep.selection.metadata.get("feature_names")
    for r in sweep.reductions:
        for j in sweep.kept(r):
            feat_rows.append([_rtag(r), int(j)] + ([names[j]] if names else []))
    write_delimited(out / "selected_features.tsv",
                    ["reduction", "feature"] + (["name"] if names else []), feat_rows)

    doc = {
        "convention": REDUCTION_CONVENTION,
        "reductions": sweep.reductions,
        "classifiers": sweep.classifiers,
        "classifier_params": asdict(sweep.params),
        "svm_note": "linear one-vs-rest SVM stands in for a kernel SVM",
        "msle_config": sweep.config.to_dict(),
        "views": sweep.views.to_dict(),
        "selection_scope": "graph, eigenvectors and scores computed on the training split only",
        "reports": [rep.to_dict() for rep in sweep.reports],
    }
    (out / "sweep.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_delimited(out / "timings.tsv", ["phase", "seconds"],
                    [[k, f"{v:.3f}"] for k, v in sorted(sweep.timings.items())])
    return doc
