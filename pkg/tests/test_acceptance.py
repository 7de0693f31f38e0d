"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Criteria 1, 5, 6 and 7 need the real UCI-HAR files, located through
``$MSLE_DATA_DIR`` (see ``msle fetch-ucihar``). Without them those criteria
fail with an explanatory message; they are never skipped.

Run ``python3 tests/test_acceptance.py`` for the summary lines alone, or
``pytest tests/test_acceptance.py``, which prints the same lines in the
terminal summary.
"""
from __future__ import annotations

import contextlib
import functools
import logging
import time

import numpy as np

from msle.cli import main as cli_main
from msle.data import Dataset, find_ucihar_root, load_ucihar, save_dataset, standardize
from msle.embedding import laplacian_eigenmaps
from msle.evaluation import reduction_k, run_classifier
from msle.graph import gaussian_similarity, laplacian
from msle.optim import (APGConfig, CodingObjective, TraceObjective, WeightObjective, eigen_metric,
                        sparse_codes)
from msle.selector import MSLEConfig, ViewSet, contiguous_views, multiview_laplacian, run_msle, ucihar_views
from msle.spectral import eig_sym
from oracles import (cd_lasso, central_difference, lasso_objective, naive_laplacian, random_graph,
                     union_find_components)

log = logging.getLogger("msle.acceptance")

RESULTS: dict[int, tuple[str, bool, float, str]] = {}

# official split sizes, per class in label order WALKING .. LAYING
TRAIN_COUNTS = [1226, 1073, 986, 1286, 1374, 1407]
TEST_COUNTS = [491, 471, 420, 496, 532, 537]


class CriterionFailed(AssertionError):
    pass


@contextlib.contextmanager
def criterion(number: int, title: str, budget: float | None = None):
    """Record PASS/FAIL, elapsed time and a detail string for one criterion."""
    detail: list[str] = []
    t0 = time.perf_counter()
    ok = False
    try:
        yield detail
        elapsed = time.perf_counter() - t0
        if budget is not None and elapsed > budget:
            detail.append(f"time {elapsed:.1f}s over budget {budget:.0f}s")
            raise CriterionFailed("; ".join(detail))
        ok = True
    except Exception as exc:
        if not isinstance(exc, CriterionFailed):
            detail.append(f"{type(exc).__name__}: {exc}")
        raise
    finally:
        elapsed = time.perf_counter() - t0
        RESULTS[number] = (title, ok, elapsed, "; ".join(detail))


def check(cond: bool, detail: list, msg: str) -> None:
    detail.append(msg)
    if not cond:
        raise CriterionFailed("; ".join(detail))


def summary_lines() -> list[str]:
    lines = []
    for n in sorted(RESULTS):
        title, ok, elapsed, detail = RESULTS[n]
        lines.append(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title} ({elapsed:.1f}s): {detail}")
    return lines


@functools.lru_cache(maxsize=1)
def ucihar():
    root = find_ucihar_root()
    return load_ucihar(root, strict=True)


@functools.lru_cache(maxsize=1)
def full_feature_accuracies():
    tr, te = ucihar()
    trz, tez, *_ = standardize(tr, te)
    return {c: run_classifier(c, trz, tez).accuracy for c in ("knn", "gnb", "svm")}


# ---------------------------------------------------------------- criteria

def test_criterion_1_dataset_fidelity():
    with criterion(1, "UCI-HAR split and class counts") as detail:
        t0 = time.perf_counter()
        tr, te = load_ucihar(find_ucihar_root(), strict=True)
        load_time = time.perf_counter() - t0
        check(load_time < 5.0, detail, f"load {load_time:.2f}s (< 5s)")
        check((tr.n + te.n, tr.n, te.n) == (10299, 7352, 2947), detail, f"n = {tr.n + te.n}/{tr.n}/{te.n}")
        check(tr.class_counts().tolist() == TRAIN_COUNTS, detail, f"train {tr.class_counts().tolist()}")
        check(te.class_counts().tolist() == TEST_COUNTS, detail, f"test {te.class_counts().tolist()}")
        check(tr.d == te.d == 561, detail, f"d = {tr.d}")
        again, _ = load_ucihar(find_ucihar_root(), strict=True)
        check(again.X.tobytes() == tr.X.tobytes(), detail, "reload bit-identical")


def test_criterion_2_spectral_suite():
    with criterion(2, "eigen residuals, quadratic form, component count", budget=60.0) as detail:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for i in range(200):
            n = int(rng.integers(2, 101))
            A = rng.normal(size=(n, n))
            A = (A + A.T) / 2
            if i % 2:
                # the iterative path, asked for a few eigenpairs
                k = min(5, n - 2) if n > 3 else n
                es = eig_sym(A, k, dense_max=0)
            else:
                es = eig_sym(A, n)
            res = np.linalg.norm(A @ es.eigenvectors - es.eigenvectors * es.eigenvalues, axis=0).max()
            worst = max(worst, res / np.linalg.norm(A))
        check(worst <= 1e-8, detail, f"max residual/||A||_F = {worst:.1e} over 200 matrices")

        worst_q, mism = 0.0, 0
        for i in range(50):
            n = int(rng.integers(5, 60))
            comps = 1 + i % 4
            W = random_graph(n, float(rng.uniform(0.05, 0.5)), rng, min(comps, n))
            L = laplacian(W).matrix
            x = rng.normal(size=n)
            quad = 0.5 * np.sum(W * (x[:, None] - x[None, :]) ** 2)
            worst_q = max(worst_q, abs(x @ L @ x - quad) / max(1.0, quad))
            lam = eig_sym(L, n).eigenvalues
            zeros = int(np.sum(lam <= 1e-9 * max(1.0, lam[-1])))
            mism += zeros != union_find_components(W)
        check(worst_q <= 1e-8, detail, f"quadratic-form error {worst_q:.1e} over 50 graphs")
        check(mism == 0, detail, f"{mism} zero-multiplicity mismatches")


def test_criterion_3_solver_oracles():
    with criterion(3, "APG vs coordinate descent; gradients vs finite differences", budget=60.0) as detail:
        rng = np.random.default_rng(3)
        gaps = []
        for _ in range(50):
            U, x = rng.normal(size=(20, 10)), rng.normal(size=20)
            alpha = float(rng.uniform(0.1, 5.0))
            code = sparse_codes(x[:, None], U, alpha, config=APGConfig(tol=1e-12, max_iter=5000))
            ours = lasso_objective(U, x, code.Z[:, 0], alpha)
            gaps.append(ours - lasso_objective(U, x, cd_lasso(U, x, alpha), alpha))
        check(max(gaps) <= 1e-6, detail, f"max objective gap {max(gaps):.1e} over 50 instances")

        U, _ = np.linalg.qr(rng.normal(size=(7, 3)))
        X = rng.normal(size=(7, 4))
        objectives = {
            "coding": (CodingObjective(X, U), rng.normal(size=(3, 4))),
            "coding_eigen": (CodingObjective(X, U, eigen_metric(U, np.array([0.3, 1.0, 2.0]))),
                             rng.normal(size=(3, 4))),
        }
        L = naive_laplacian(random_graph(8, 0.5, rng))
        q = rng.normal(size=8)
        objectives["trace"] = (TraceObjective(L, q / np.linalg.norm(q), 2.0), rng.normal(size=(8, 2)))
        S = rng.normal(size=(6, 4))
        objectives["weights"] = (WeightObjective(S, 0.7 * naive_laplacian(random_graph(6, 0.5, rng))),
                                 rng.normal(size=(6, 6)))
        rel = {}
        for name, (obj, Z) in objectives.items():
            fd = central_difference(lambda z: obj.value(z).sum(), Z)
            an = obj.grad(Z)
            rel[name] = float(np.linalg.norm(an - fd) / np.linalg.norm(an))
        worst = max(rel.values())
        check(worst <= 1e-4, detail, "gradient rel. error " + ", ".join(f"{k} {v:.1e}" for k, v in rel.items()))


def test_criterion_4_selection_properties():
    with criterion(4, "single view, duplicated view, permutation, nesting", budget=120.0) as detail:
        rng = np.random.default_rng(4)
        n, d = 80, 12
        y = np.arange(n) % 3
        X = rng.normal(0, 2, size=(3, d))[y] + rng.normal(size=(n, d))
        cfg = MSLEConfig(sigma=3.0, n_components=4)
        Xz, *_ = standardize(Dataset(X))

        one = ViewSet((("all", np.arange(d)),))
        mv = multiview_laplacian(Xz.X, one, cfg)
        lap = laplacian(gaussian_similarity(Xz.X, 3.0))
        err = float(np.abs(mv.L - lap.matrix).max())
        res = run_msle(X, one, d, cfg)
        emb = laplacian_eigenmaps(lap, 4)
        cos = np.abs(np.sum(res.spectral_basis * emb.Y * lap.degrees[:, None], axis=0))
        check(err <= 1e-12 and np.all(cos >= 1 - 1e-8), detail,
              f"m=1: |L - L_1| {err:.1e}, basis cosines >= {cos.min():.10f}")

        dup = ViewSet((("a", np.arange(6)), ("b", np.arange(6))))
        half = ViewSet((("a", np.arange(6)),))
        two, single = multiview_laplacian(Xz.X, dup, cfg), multiview_laplacian(Xz.X, half, cfg)
        err = float(np.abs(two.L - 2 * single.L).max())
        check(err <= 1e-12, detail, f"L_sum - 2 L_1 = {err:.1e}")

        views = contiguous_views(d, 3)
        base = run_msle(X, views, 5, cfg)
        perm = rng.permutation(d)
        inv = np.argsort(perm)
        moved = run_msle(X[:, perm], ViewSet(tuple((nm, inv[c]) for nm, c in views.views)), 5, cfg)
        err = float(np.abs(moved.scores - base.scores[perm]).max())
        same = sorted(perm[moved.selected].tolist()) == base.selected.tolist()
        check(err <= 1e-7 and same, detail, f"permutation: score error {err:.1e}, selection mapped={same}")

        prev, nested = set(), True
        for k in range(1, d + 1):
            sel = set(run_msle(X, views, k, cfg).selected.tolist())
            nested &= prev <= sel and len(sel) == k
            prev = sel
        check(nested, detail, "selections nested for k = 1..12")


def test_criterion_5_full_feature_baselines():
    with criterion(5, "full-feature kNN / GNB / linear SVM bands", budget=600.0) as detail:
        acc = {c: 100 * a for c, a in full_feature_accuracies().items()}
        detail.append(", ".join(f"{c} {v:.2f}" for c, v in acc.items()))
        check(abs(acc["knn"] - 80.9) <= 5.0, detail, "kNN in 80.9 +- 5.0")
        check(abs(acc["gnb"] - 77.0) <= 6.0, detail, "GNB in 77.0 +- 6.0")
        check(acc["svm"] >= 90.0, detail, "SVM >= 90.0")


def test_criterion_6_reduced_feature_accuracy():
    with criterion(6, "accuracy at 80% and 50% reduction") as detail:
        tr, te = ucihar()
        sel = run_msle(tr, ucihar_views(tr.feature_names), tr.d, MSLEConfig())
        trz, tez, *_ = standardize(tr, te)
        out = {}
        for r in (80, 50):
            cols = sel.top(reduction_k(tr.d, r))
            a, b = trz.select_features(cols), tez.select_features(cols)
            out[r] = {c: 100 * run_classifier(c, a, b).accuracy for c in ("svm", "knn")}
        full_svm = 100 * full_feature_accuracies()["svm"]
        detail.append(f"80%: svm {out[80]['svm']:.2f} knn {out[80]['knn']:.2f}; 50%: svm {out[50]['svm']:.2f}"
                      f" vs full {full_svm:.2f}")
        check(out[80]["svm"] >= 90.0, detail, "SVM@80 >= 90")
        check(out[80]["knn"] >= 85.0, detail, "kNN@80 >= 85")
        check(out[50]["svm"] >= full_svm - 3.0, detail, "SVM@50 within 3 of full")


def test_criterion_7_runtime():
    with criterion(7, "full six-view selection runtime", budget=900.0) as detail:
        tr, _ = ucihar()
        res = run_msle(tr, ucihar_views(tr.feature_names), tr.d, MSLEConfig())
        detail.append("phases " + ", ".join(f"{p} {t:.1f}s" for p, t in sorted(res.timings.items())))
        for p, t in sorted(res.timings.items()):
            log.info("phase %s: %.3f s", p, t)


def test_criterion_8_sweep_determinism(tmp_path):
    with criterion(8, "identical sweeps give byte-identical tables") as detail:
        rng = np.random.default_rng(8)
        n, d = 240, 24
        y = np.arange(n) % 4
        X = rng.normal(0, 1.5, size=(4, d))[y] + rng.normal(size=(n, d))
        save_dataset(Dataset(X[:160], y[:160]), tmp_path / "train.csv")
        save_dataset(Dataset(X[160:], y[160:]), tmp_path / "test.csv")
        tables = []
        for run in ("a", "b"):
            code = cli_main(["sweep", "--dataset", "csv", "--data", str(tmp_path / "train.csv"),
                             "--test-data", str(tmp_path / "test.csv"), "--views", "contiguous:3",
                             "--reductions", "10,50,90", "--output", str(tmp_path / run)])
            check(code == 0, detail, f"run {run} exit {code}")
            out = tmp_path / run
            files = sorted(p.relative_to(out).as_posix() for p in out.rglob("*")
                           if p.is_file() and p.name not in ("timings.tsv", "resolved_config.json"))
            tables.append({f: (out / f).read_bytes() for f in files})
        differing = [f for f in tables[0] if tables[0][f] != tables[1].get(f)]
        check(set(tables[0]) == set(tables[1]) and not differing, detail,
              f"{len(tables[0])} report files compared, {len(differing)} differ")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_criterion_")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as tmp:
                    fn(Path(tmp))
            else:
                fn()
        except Exception:
            pass
    print("\n".join(summary_lines()))
    sys.exit(0 if all(ok for _, ok, _, _ in RESULTS.values()) else 1)
