"""Datasets: UCI-HAR native layout, generic delimited tables, standardisation."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, LayoutNotFound, NonFinite, NonNumericCell, RaggedRows, ShapeMismatch

UCIHAR_DIRNAME = "UCI HAR Dataset"
UCIHAR_SHAPES = {"train": 7352, "test": 2947, "features": 561}
DATA_DIR_ENV = "MSLE_DATA_DIR"


@dataclass(frozen=True)
class Dataset:
    """Row-major sample matrix with optional integer labels."""

    X: np.ndarray
    y: np.ndarray | None = None
    feature_names: tuple = ()
    label_names: tuple = ()
    split: str = "unsplit"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ShapeMismatch(f"sample matrix must be 2-d, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            bad = np.argwhere(~np.isfinite(X))[0]
            raise NonFinite(f"non-finite value at row {bad[0]}, column {bad[1]}")
        object.__setattr__(self, "X", X)
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ShapeMismatch(f"{len(names)} feature names for {X.shape[1]} columns")
        object.__setattr__(self, "feature_names", names)
        if self.y is not None:
            y = np.asarray(self.y)
            if y.shape != (X.shape[0],):
                raise ShapeMismatch(f"{y.shape[0]} labels for {X.shape[0]} samples")
            if y.size and not np.issubdtype(y.dtype, np.integer):
                if not np.all(y == np.round(y)):
                    raise ShapeMismatch("labels must be integers")
            y = y.astype(np.int64)
            n_cls = len(self.label_names) or (int(y.max()) + 1 if y.size else 0)
            if y.size and (y.min() < 0 or y.max() >= n_cls):
                raise ShapeMismatch(f"labels must lie in 0..{n_cls - 1}")
            object.__setattr__(self, "y", y)
            if not self.label_names:
                object.__setattr__(self, "label_names", tuple(str(c) for c in range(n_cls)))
        object.__setattr__(self, "label_names", tuple(self.label_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def select_features(self, cols) -> "Dataset":
        cols = np.asarray(cols, dtype=int)
        return replace(self, X=self.X[:, cols], feature_names=tuple(self.feature_names[j] for j in cols))

    def take(self, rows, split: str | None = None) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return replace(self, X=self.X[rows], y=None if self.y is None else self.y[rows],
                       split=split or self.split)


# ------------------------------------------------------------------ UCI-HAR

def find_ucihar_root(path=None) -> Path:
    """Resolve the dataset root: ``path``, its ``UCI HAR Dataset`` child, or
    ``$MSLE_DATA_DIR`` when ``path`` is None."""
    if path is None:
        env = os.environ.get(DATA_DIR_ENV)
        if not env:
            raise LayoutNotFound(f"no dataset path given and ${DATA_DIR_ENV} is not set")
        path = env
    root = Path(path)
    for cand in (root, root / UCIHAR_DIRNAME):
        if (cand / "features.txt").is_file() and (cand / "train").is_dir():
            return cand
    raise LayoutNotFound(f"UCI-HAR layout (features.txt, train/, test/) not found under {root}")


def _read_matrix(path: Path, ncols: int | None = None) -> np.ndarray:
    text = path.read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ShapeMismatch(f"{path}: file is empty")
    counts = np.fromiter((len(ln.split()) for ln in lines), dtype=np.int64, count=len(lines))
    width = ncols if ncols is not None else int(counts[0])
    bad = np.flatnonzero(counts != width)
    if bad.size:
        raise ShapeMismatch(f"{path}: line {bad[0] + 1} has {counts[bad[0]]} fields, expected {width}")
    try:
        flat = np.array(" ".join(lines).split(), dtype=float)
    except ValueError as exc:
        raise ShapeMismatch(f"{path}: non-numeric value ({exc})") from exc
    return flat.reshape(len(lines), width)


def _read_index_names(path: Path) -> list[tuple[int, str]]:
    out = []
    for ln in path.read_text().splitlines():
        if not ln.strip():
            continue
        idx, _, name = ln.strip().partition(" ")
        out.append((int(idx), name.strip()))
    return out


def dedupe_names(names) -> list[str]:
    """Suffix repeated names with ``_1``, ``_2``, ... in order of appearance;
    the first occurrence keeps its name."""
    seen: dict[str, int] = {}
    taken = set(names)
    out = []
    for name in names:
        if name not in seen:
            seen[name] = 0
            out.append(name)
            continue
        while True:
            seen[name] += 1
            cand = f"{name}_{seen[name]}"
            if cand not in taken:
                break
        taken.add(cand)
        out.append(cand)
    return out


def load_ucihar(root=None, strict: bool = True) -> tuple[Dataset, Dataset]:
    """Load the featurised UCI-HAR train and test splits.

    Labels are remapped from the file's 1-based activity ids to 0-based
    class ids; ``label_names`` follow ``activity_labels.txt``. With
    ``strict`` the split sizes must match the official release.
    """
    base = find_ucihar_root(root)
    feats = _read_index_names(base / "features.txt")
    names = dedupe_names([name for _, name in feats])
    acts = sorted(_read_index_names(base / "activity_labels.txt"))
    label_ids = [i for i, _ in acts]
    label_names = tuple(name for _, name in acts)
    remap = {aid: c for c, aid in enumerate(label_ids)}

    out = []
    for split in ("train", "test"):
        xp = base / split / f"X_{split}.txt"
        yp = base / split / f"y_{split}.txt"
        for p in (xp, yp):
            if not p.is_file():
                raise LayoutNotFound(f"missing {p}")
        X = _read_matrix(xp, len(names))
        yraw = _read_matrix(yp, 1).ravel()
        if yraw.shape[0] != X.shape[0]:
            raise ShapeMismatch(f"{yp}: {yraw.shape[0]} labels but {xp.name} has {X.shape[0]} rows")
        try:
            y = np.array([remap[int(v)] for v in yraw], dtype=np.int64)
        except KeyError as exc:
            raise ShapeMismatch(f"{yp}: unknown activity id {exc}") from exc
        if strict:
            if X.shape[0] != UCIHAR_SHAPES[split]:
                raise ShapeMismatch(f"{xp}: {X.shape[0]} rows, expected {UCIHAR_SHAPES[split]}")
            if X.shape[1] != UCIHAR_SHAPES["features"]:
                raise ShapeMismatch(f"{xp}: {X.shape[1]} columns, expected {UCIHAR_SHAPES['features']}")
        out.append(Dataset(X, y, tuple(names), label_names, split))
    return out[0], out[1]


# ---------------------------------------------------------------- delimited

def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_delimited(path, sep: str = ",", header="auto", label_column=None, split: str = "unsplit") -> Dataset:
    """Read a rectangular numeric table.

    ``header`` is True, False or ``"auto"`` (a first row containing any
    non-numeric cell is a header). ``label_column`` names or indexes the
    column holding class labels; label values are mapped to 0-based ids in
    sorted order (numerically when every label is a number). Row and column
    numbers in errors are 0-based positions in the data part of the table.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=sep) if r and any(c.strip() for c in r)]
    if not rows:
        raise ShapeMismatch(f"{path}: no data rows")
    rows = [[c.strip() for c in r] for r in rows]
    if header == "auto":
        header = not all(_is_number(c) for c in rows[0])
    names = rows[0] if header else [f"f{j}" for j in range(len(rows[0]))]
    body = rows[1:] if header else rows
    width = len(names)
    for i, r in enumerate(body):
        if len(r) != width:
            raise RaggedRows(path, i, width, len(r))

    label_idx = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if label_column not in names:
                raise ConfigInvalid(f"{path}: no column named {label_column!r}")
            label_idx = names.index(label_column)
        else:
            label_idx = int(label_column) % width
    cols = [j for j in range(width) if j != label_idx]
    X = np.empty((len(body), len(cols)))
    for i, r in enumerate(body):
        for jj, j in enumerate(cols):
            try:
                X[i, jj] = float(r[j])
            except ValueError:
                raise NonNumericCell(path, i, j, r[j]) from None
    y = label_names = None
    if label_idx is not None:
        raw = [r[label_idx] for r in body]
        uniq = sorted(set(raw), key=lambda v: (float(v), v)) if all(_is_number(v) for v in raw) else sorted(set(raw))
        code = {v: c for c, v in enumerate(uniq)}
        y = np.array([code[v] for v in raw], dtype=np.int64)
        label_names = tuple(uniq)
    return Dataset(X, y, tuple(names[j] for j in cols), label_names or (), split)


def save_dataset(ds: Dataset, path, sep: str = ",", label_column: str = "label") -> None:
    """Write a header row plus one row per sample; floats use ``repr`` so a
    reload is bit-exact."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=sep, lineterminator="\n")
        head = list(ds.feature_names) + ([label_column] if ds.y is not None else [])
        w.writerow(head)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.X[i]]
            if ds.y is not None:
                row.append(ds.label_names[ds.y[i]])
            w.writerow(row)


# ------------------------------------------------------------ standardisation

def fit_standardizer(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column means, population standard deviations and the constant-column mask."""
    X = np.asarray(X, dtype=float)
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    mask = stds <= 1e-12 * (1.0 + np.abs(means))
    return means, stds, mask


def apply_standardizer(X, means, stds, mask) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    safe = np.where(mask, 1.0, stds)
    Z = (X - means) / safe
    Z[:, mask] = 0.0
    return Z


def standardize(train: Dataset, test: Dataset | None = None):
    """Z-score both splits with statistics from ``train`` only.

    Returns ``(train_z, test_z, means, stds, constant_mask)``; constant
    training columns are mapped to zero in both splits.
    """
    means, stds, mask = fit_standardizer(train.X)
    tr = replace(train, X=apply_standardizer(train.X, means, stds, mask))
    te = None if test is None else replace(test, X=apply_standardizer(test.X, means, stds, mask))
    return tr, te, means, stds, mask


def train_test_split(ds: Dataset, test_fraction: float = 0.3, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded stratified split for data that ships without one."""
    if not 0 < test_fraction < 1:
        raise ConfigInvalid("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    if ds.y is None:
        perm = rng.permutation(ds.n)
        cut = int(round(ds.n * (1 - test_fraction)))
        return ds.take(np.sort(perm[:cut]), "train"), ds.take(np.sort(perm[cut:]), "test")
    tr_idx, te_idx = [], []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.y == c)
        idx = idx[rng.permutation(idx.size)]
        cut = int(round(idx.size * (1 - test_fraction)))
        tr_idx.append(idx[:cut])
        te_idx.append(idx[cut:])
    return (ds.take(np.sort(np.concatenate(tr_idx)), "train"),
            ds.take(np.sort(np.concatenate(te_idx)), "test"))
