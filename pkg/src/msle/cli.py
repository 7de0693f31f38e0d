"""Command-line front end: ``msle select|sweep|embed|eval|fetch-ucihar``.

Options resolve as command-line flags over a JSON config file over built-in
defaults. Every command writes ``resolved_config.json`` into its output
directory. Failures print a JSON error document to stderr (and to
``error.json`` in the output directory) and exit with 2 (configuration),
3 (data) or 4 (numerical).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import urllib.request
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import DATA_DIR_ENV, Dataset, load_delimited, load_ucihar, standardize, train_test_split
from .embedding import laplacian_eigenmaps
from .errors import ConfigInvalid, DataError, KTooLarge, MSLEError
from .evaluation import (CLASSIFIERS, ClassifierParams, default_views, reduction_k, run_classifier,
                         sweep_reduction, write_reports)
from .graph import VARIANTS, laplacian, similarity_graph
from .selector import MSLEConfig, ViewSet, contiguous_views, run_msle
from .store import load_selection, save_embedding, save_selection, write_delimited

log = logging.getLogger("msle")

UCIHAR_URL = "https://archive.ics.uci.edu/static/public/240/human+activity+recognition+using+smartphones.zip"
VARIANT_ALIASES = {"unnormalized": "unnormalized", "unnorm": "unnormalized", "symmetric": "symmetric",
                   "sym": "symmetric", "random_walk": "random_walk", "rw": "random_walk"}


@dataclass
class RunConfig:
    # data
    dataset: str = "ucihar"
    data: str | None = None
    test_data: str | None = None
    sep: str = ","
    label_column: str | None = "label"
    test_fraction: float = 0.3
    views: str | dict = "auto"
    # graph
    sigma: float | None = None
    graph_mode: str = "auto"
    k_nn: int = 15
    variant: str = "unnormalized"
    # solver
    n_components: int = 10
    alpha: float = 1.0
    alphas: list | None = None
    weighting: str = "uniform"
    blend: float = 0.5
    score_rule: str = "blend"
    code_rule: str = "row_norm"
    rounds: int = 1
    l1_weight: float = 0.0
    tol: float = 1e-6
    max_iter: int = 500
    # selection / evaluation
    k: int | None = None
    reduction: float | None = None
    reductions: list = field(default_factory=lambda: [10, 20, 30, 40, 50, 60, 70, 80, 90])
    classifiers: list = field(default_factory=lambda: list(CLASSIFIERS))
    knn_k: int = 5
    svm_lambda: float = 1e-4
    svm_epochs: int = 30
    svm_seed: int = 42
    selection: str | None = None
    # embedding
    graph_file: str | None = None
    d_embed: int = 2
    problem: str = "standard"
    drop_trivial: bool = True
    # run
    seed: int = 0
    threads: int | None = None
    strict: bool = False
    output: str = "msle_out"

    def msle_config(self) -> MSLEConfig:
        return MSLEConfig(sigma=self.sigma, graph_mode=self.graph_mode, k_nn=self.k_nn,
                          n_components=self.n_components, alpha=self.alpha,
                          alphas=None if self.alphas is None else tuple(float(a) for a in self.alphas),
                          weighting=self.weighting, blend=self.blend, score_rule=self.score_rule,
                          code_rule=self.code_rule, rounds=self.rounds, l1_weight=self.l1_weight,
                          tol=self.tol, max_iter=self.max_iter, seed=self.seed,
                          threads=self.threads or 1)

    def classifier_params(self) -> ClassifierParams:
        return ClassifierParams(knn_k=self.knn_k, svm_lambda=self.svm_lambda, svm_epochs=self.svm_epochs,
                                svm_seed=self.svm_seed, strict=self.strict)


_LIST_FIELDS = {"alphas": float, "reductions": float, "classifiers": str}
_HELP = {
    "dataset": "ucihar or csv",
    "data": f"dataset root (ucihar) or delimited file (csv); falls back to ${DATA_DIR_ENV}",
    "test_data": "separate delimited test file (csv); otherwise a stratified split is used",
    "views": "auto, contiguous:M, or a JSON mapping name -> column list",
    "sigma": "kernel bandwidth; unset means the median-distance heuristic",
    "graph_mode": "auto, dense or knn",
    "variant": "unnormalized (unnorm), symmetric (sym) or random_walk (rw)",
    "alphas": "comma-separated per-view weights for the weight matrix",
    "reductions": "comma-separated percentages of features removed",
    "classifiers": "comma-separated subset of knn,gnb,svm",
    "selection": "selection container to evaluate (eval)",
    "graph_file": "square delimited adjacency matrix for embed",
    "threads": "worker threads; unset means all logical cores",
}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    for f in fields(RunConfig):
        default = RunConfig.__dataclass_fields__[f.name]
        dv = default.default_factory() if callable(default.default_factory) else default.default
        if isinstance(dv, list):
            dv = ",".join(str(x) for x in dv)
        help_text = f"{_HELP.get(f.name, f.name.replace('_', ' '))} (default: {dv})"
        flag = "--" + f.name.replace("_", "-")
        if f.name in _LIST_FIELDS or f.name == "views":
            typ = str
        elif f.type in ("bool",):
            typ = _parse_bool
        elif "int" in str(f.type) and "float" not in str(f.type):
            typ = int
        elif "float" in str(f.type):
            typ = float
        else:
            typ = str
        p.add_argument(flag, dest=f.name, type=typ, default=None, help=help_text)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = asdict(RunConfig())
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigInvalid(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config file {args.config} is not valid JSON: {exc}") from None
        unknown = set(doc) - set(values)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(doc)
    for name in values:
        v = getattr(args, name, None)
        if v is None:
            continue
        if name in _LIST_FIELDS:
            v = [_LIST_FIELDS[name](x) for x in v.split(",") if x.strip()]
        elif name == "views" and v.strip().startswith("{"):
            v = json.loads(v)
        values[name] = v
    cfg = RunConfig(**values)
    if cfg.threads is None:
        cfg.threads = os.cpu_count() or 1
    if cfg.variant not in VARIANT_ALIASES:
        raise ConfigInvalid(f"unknown Laplacian variant {cfg.variant!r}; allowed: "
                            f"{', '.join(sorted(VARIANT_ALIASES))}")
    for c in cfg.classifiers:
        if c not in CLASSIFIERS:
            raise ConfigInvalid(f"unknown classifier {c!r}; allowed: {', '.join(CLASSIFIERS)}")
    if cfg.dataset not in ("ucihar", "csv"):
        raise ConfigInvalid(f"unknown dataset kind {cfg.dataset!r}; allowed: ucihar, csv")
    return cfg


# --------------------------------------------------------------------- data

def load_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    path = cfg.data or os.environ.get(DATA_DIR_ENV)
    if not path:
        raise ConfigInvalid(f"no dataset path: pass --data or set ${DATA_DIR_ENV}")
    if not Path(path).exists():
        raise ConfigInvalid(f"dataset path {path} does not exist")
    if cfg.dataset == "ucihar":
        return load_ucihar(path, strict=True)
    ds = load_delimited(path, sep=cfg.sep, label_column=cfg.label_column, split="train")
    if cfg.test_data:
        if not Path(cfg.test_data).exists():
            raise ConfigInvalid(f"test data path {cfg.test_data} does not exist")
        te = load_delimited(cfg.test_data, sep=cfg.sep, label_column=cfg.label_column, split="test")
        return ds, te
    return train_test_split(ds, cfg.test_fraction, cfg.seed)


def resolve_views(cfg: RunConfig, ds: Dataset) -> ViewSet:
    v = cfg.views
    if isinstance(v, dict):
        return ViewSet.from_dict(v).validate(ds.d, require_disjoint=False)
    if v == "auto":
        return default_views(ds)
    if isinstance(v, str) and v.startswith("contiguous:"):
        return contiguous_views(ds.d, int(v.split(":", 1)[1]))
    raise ConfigInvalid(f"cannot parse views setting {v!r}")


def _resolve_k(cfg: RunConfig, d: int) -> int:
    if cfg.k is not None and cfg.reduction is not None:
        raise ConfigInvalid("give either k or reduction, not both")
    if cfg.reduction is not None:
        return reduction_k(d, cfg.reduction)
    k = cfg.k if cfg.k is not None else d
    if not 1 <= k <= d:
        raise KTooLarge(f"k must satisfy 1 <= k <= d = {d}, got {k}")
    return k


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- commands

def cmd_select(cfg: RunConfig) -> int:
    out = Path(cfg.output)
    train, _ = load_data(cfg)
    k = _resolve_k(cfg, train.d)
    views = resolve_views(cfg, train)
    res = run_msle(train, views, k, cfg.msle_config())
    res.metadata["feature_names"] = list(train.feature_names)
    save_selection(res, out / "selection.msle")
    write_delimited(out / "selected_features.tsv", ["feature", "name", "score"],
                    [[int(j), train.feature_names[j], float(res.scores[j])] for j in res.selected])
    write_delimited(out / "timings.tsv", ["phase", "seconds"],
                    [[p, f"{t:.3f}"] for p, t in sorted(res.timings.items())])
    for p, t in sorted(res.timings.items()):
        log.info("phase %s: %.3f s", p, t)
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    out = Path(cfg.output)
    train, test = load_data(cfg)
    views = resolve_views(cfg, train)
    sweep = sweep_reduction(train, test, cfg.reductions, cfg.classifiers, cfg.msle_config(), views,
                            cfg.classifier_params())
    sweep.selection.metadata["feature_names"] = list(train.feature_names)
    write_reports(sweep, out)
    for p, t in sorted(sweep.timings.items()):
        log.info("phase %s: %.3f s", p, t)
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    """Train and test the classifiers on all features, or on the columns of
    a saved selection."""
    out = Path(cfg.output)
    train, test = load_data(cfg)
    cols = np.arange(train.d)
    if cfg.selection:
        if not Path(cfg.selection).exists():
            raise ConfigInvalid(f"selection file {cfg.selection} does not exist")
        sel = load_selection(cfg.selection)
        if sel.d != train.d:
            raise ConfigInvalid(f"selection scores {sel.d} features, dataset has {train.d}")
        cols = sel.selected
    trz, tez, *_ = standardize(train.select_features(cols), test.select_features(cols))
    reduction = 100.0 * (1.0 - len(cols) / train.d)
    reports = [run_classifier(c, trz, tez, cfg.classifier_params(), reduction) for c in cfg.classifiers]
    _write_json(out / "eval.json", {"features": [int(c) for c in cols],
                                    "reports": [r.to_dict() for r in reports]})
    write_delimited(out / "eval_table.tsv", ["classifier", "features", "accuracy", "precision", "recall", "f1"],
                    [[r.classifier, r.feature_count] + [f"{100 * v:.2f}" for v in
                                                        (r.accuracy, r.precision, r.recall, r.f1)]
                     for r in reports])
    return 0


def _read_adjacency(path: str, sep: str) -> np.ndarray:
    rows = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        parts = line.split(sep) if sep.strip() and sep in line else line.split()
        try:
            rows.append([float(x) for x in parts])
        except ValueError:
            raise DataError(f"{path}:{i + 1}: non-numeric adjacency entry") from None
    if not rows or any(len(r) != len(rows) for r in rows):
        raise DataError(f"{path}: adjacency matrix must be square")
    A = np.asarray(rows)
    if not np.allclose(A, A.T, rtol=0, atol=1e-12):
        raise DataError(f"{path}: adjacency matrix is not symmetric")
    return A


def cmd_embed(cfg: RunConfig) -> int:
    out = Path(cfg.output)
    variant = VARIANT_ALIASES[cfg.variant]
    if cfg.graph_file:
        if not Path(cfg.graph_file).exists():
            raise ConfigInvalid(f"graph file {cfg.graph_file} does not exist")
        W = _read_adjacency(cfg.graph_file, cfg.sep)
        source = {"graph_file": cfg.graph_file}
    else:
        train, _ = load_data(cfg)
        Xz, *_ = standardize(train)
        G = similarity_graph(Xz.X, cfg.sigma, mode=cfg.graph_mode, k_nn=cfg.k_nn, seed=cfg.seed)
        W = G.weights
        source = {"data": cfg.data, "sigma": G.sigma, "graph_mode": G.sparsity}
    lap = laplacian(W, variant)
    emb = laplacian_eigenmaps(lap, cfg.d_embed, cfg.drop_trivial, cfg.problem)
    save_embedding(emb, out / "embedding.msle", {"variant": variant, "requested_variant": cfg.variant,
                                                 "d_embed": cfg.d_embed, **source})
    write_delimited(out / "eigenvalues.tsv", ["index", "eigenvalue"],
                    [[i, float(v)] for i, v in enumerate(emb.eigenvalues)])
    return 0


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch_ucihar(url: str, dest, sha256: str | None = None) -> Path:
    """Download the UCI-HAR archive, check its digest and unpack it (the
    official archive nests a second zip, which is unpacked as well)."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        archive = Path(tmp) / "ucihar.zip"
        try:
            with urllib.request.urlopen(url) as resp, open(archive, "wb") as fh:
                shutil.copyfileobj(resp, fh)
        except OSError as exc:
            raise DataError(f"download of {url} failed: {exc}") from None
        digest = _sha256(archive)
        if sha256 and digest.lower() != sha256.lower():
            raise DataError(f"checksum mismatch for {url}: expected {sha256}, got {digest}")
        if not zipfile.is_zipfile(archive):
            raise DataError(f"{url} is not a zip archive")
        with zipfile.ZipFile(archive) as zf:
            zf.extractall(dest)
    inner = dest / "UCI HAR Dataset.zip"
    if inner.is_file():
        with zipfile.ZipFile(inner) as zf:
            zf.extractall(dest)
        inner.unlink()
    _write_json(dest / "fetch.json", {"url": url, "sha256": digest})
    return dest


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msle", description="Multi-view sparse Laplacian eigenmaps feature selection")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and phase timings")
    sub = p.add_subparsers(dest="command", required=True)
    for name, doc in (("select", "rank features and write a selection"),
                      ("sweep", "select on train, classify over a grid of reductions"),
                      ("embed", "Laplacian eigenmaps of a data set or adjacency file"),
                      ("eval", "train and test classifiers on all or selected features")):
        _add_config_flags(sub.add_parser(name, help=doc, description=doc))
    f = sub.add_parser("fetch-ucihar", help="download and unpack UCI-HAR")
    f.add_argument("--url", default=UCIHAR_URL, help=f"archive URL (default: {UCIHAR_URL})")
    f.add_argument("--sha256", default=None, help="expected archive digest (default: not checked)")
    f.add_argument("--dest", default=None, help=f"target directory (default: ${DATA_DIR_ENV} or ./data)")
    return p


COMMANDS = {"select": cmd_select, "sweep": cmd_sweep, "embed": cmd_embed, "eval": cmd_eval}


def _fail(exc: Exception, code: int, outdir: Path | None) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    if outdir is not None:
        try:
            outdir.mkdir(parents=True, exist_ok=True)
            _write_json(outdir / "error.json", doc)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "fetch-ucihar":
        dest = args.dest or os.environ.get(DATA_DIR_ENV) or "data"
        try:
            root = fetch_ucihar(args.url, dest, args.sha256)
        except MSLEError as exc:
            return _fail(exc, exc.exit_code, None)
        print(root)
        return 0
    outdir = None
    try:
        cfg = resolve_config(args)
        outdir = Path(cfg.output)
        outdir.mkdir(parents=True, exist_ok=True)
        err = outdir / "error.json"
        if err.exists():
            err.unlink()
        _write_json(outdir / "resolved_config.json", asdict(cfg))
        return COMMANDS[args.command](cfg)
    except MSLEError as exc:
        return _fail(exc, exc.exit_code, outdir)
    except (TypeError, ValueError) as exc:
        return _fail(exc, 2, outdir)
    except np.linalg.LinAlgError as exc:
        return _fail(exc, 4, outdir)


if __name__ == "__main__":
    sys.exit(main())
