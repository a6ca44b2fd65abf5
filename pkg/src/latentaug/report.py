"""Confusion matrices, the metric suite, PCA projection, and report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError, InsufficientDataError

BASELINE_CONFIG = "real_noaug"


def build_confusion(true_labels, predicted_labels, num_classes: int) -> np.ndarray:
    """C x C counts; rows are true classes, columns predicted classes."""
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted_labels, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ContractError(f"{t.size} true labels but {p.size} predictions")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{name} label outside 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass
class MetricsReport:
    overall_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_accuracy: list[float]
    per_class_precision: list[float]
    class_counts: list[int]


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def metrics_from_confusion(cm) -> MetricsReport:
    """Overall accuracy plus macro precision / recall / F1 and per-class recall.

    A class that is never predicted has precision 0; a class with precision
    and recall both 0 has F1 0.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.size == 0:
        raise ContractError(f"confusion matrix must be square and non-empty, got {cm.shape}")
    total = cm.sum()
    if total <= 0:
        raise ContractError("confusion matrix holds no samples")
    diag = np.diag(cm).astype(np.float64)
    rows = cm.sum(axis=1).astype(np.float64)
    cols = cm.sum(axis=0).astype(np.float64)
    precision = _safe_div(diag, cols)
    recall = _safe_div(diag, rows)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    return MetricsReport(
        overall_accuracy=float(diag.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        per_class_accuracy=recall.tolist(),
        per_class_precision=precision.tolist(),
        class_counts=rows.astype(int).tolist(),
    )


# -- PCA ------------------------------------------------------------------------------

@dataclass
class PcaResult:
    coords: np.ndarray  # (n, n_components)
    explained_ratio: np.ndarray  # (n_components,)
    components: np.ndarray  # (n_components, dim), unit rows
    mean: np.ndarray  # (dim,)
    eigenvalues: np.ndarray  # all covariance eigenvalues, descending


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues descending, eigenvectors as columns). Cost is
    O(n^3) per sweep with Python-level loops over pairs, so keep n small.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = c * ap - s * aq, s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def pca_project(vectors, n_components: int = 2, method: str = "eigh") -> PcaResult:
    """Project mean-centred vectors onto the leading covariance eigenvectors.

    Each component's sign is fixed so its largest-magnitude entry is positive.
    ``method`` selects numpy's LAPACK solver ("eigh") or ``jacobi_eigh``.
    """
    x = np.asarray(vectors, dtype=np.float64)
    x = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError("PCA needs at least 2 vectors")
    if not 1 <= n_components <= x.shape[1]:
        raise ContractError(f"n_components must lie in 1..{x.shape[1]}")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / (x.shape[0] - 1)
    if method == "eigh":
        w, v = np.linalg.eigh(cov)
        order = np.argsort(-w, kind="stable")
        w, v = w[order], v[:, order]
    elif method == "jacobi":
        w, v = jacobi_eigh(cov)
    else:
        raise ContractError(f"unknown eigen method {method!r}")
    w = np.clip(w, 0.0, None)
    comps = v[:, :n_components].T.copy()
    for k in range(n_components):
        if comps[k, np.argmax(np.abs(comps[k]))] < 0:
            comps[k] = -comps[k]
    total = w.sum()
    ratio = w[:n_components] / total if total > 0 else np.zeros(n_components)
    return PcaResult(centred @ comps.T, ratio, comps, mean, w)


def mean_nn_distance(points) -> float:
    """Mean Euclidean distance from each point to its nearest other point."""
    p = np.asarray(points, dtype=np.float64)
    if p.shape[0] < 2:
        raise InsufficientDataError("need at least 2 points")
    sq = np.sum(p * p, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * p @ p.T
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(np.clip(d2.min(axis=1), 0.0, None)).mean())


# -- report files ---------------------------------------------------------------------

def _pct(x: float) -> float:
    return round(100.0 * x, 2)


def metrics_rows(reports: dict[str, MetricsReport]) -> list[dict]:
    rows = []
    for name, m in reports.items():
        row = {
            "config": name,
            "overall_acc": _pct(m.overall_accuracy),
            "overall_prec": _pct(m.macro_precision),
            "overall_rec": _pct(m.macro_recall),
            "overall_f1": _pct(m.macro_f1),
        }
        for k, acc in enumerate(m.per_class_accuracy):
            row[f"class{k}_acc"] = _pct(acc)
        rows.append(row)
    return rows


def bar_rows(reports: dict[str, MetricsReport], baseline: str = BASELINE_CONFIG) -> list[dict]:
    """Per-class accuracy bars with improvement over the baseline configuration.

    Falls back to the first configuration when ``baseline`` is absent.
    """
    if not reports:
        return []
    base_name = baseline if baseline in reports else next(iter(reports))
    base = [_pct(a) for a in reports[base_name].per_class_accuracy]
    rows = []
    for name, m in reports.items():
        for k, acc in enumerate(m.per_class_accuracy):
            pct = _pct(acc)
            rows.append({"config": name, "class": k, "accuracy": pct,
                         "improvement_vs_baseline": round(pct - base[k], 2)})
    return rows


def _write_csv(path: Path, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.2f}" if isinstance(v, float) else v) for k, v in row.items()})


def emit_report(reports: dict[str, MetricsReport], out_dir, baseline: str = BASELINE_CONFIG) -> dict[str, Path]:
    """Write metrics.csv, metrics.json and class_acc_bars.csv under ``out_dir``."""
    if not reports:
        raise ContractError("need at least one metrics report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = metrics_rows(reports)
    fields = list(rows[0])
    paths = {"metrics_csv": out / "metrics.csv", "metrics_json": out / "metrics.json",
             "bars_csv": out / "class_acc_bars.csv"}
    _write_csv(paths["metrics_csv"], rows, fields)
    paths["metrics_json"].write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    _write_csv(paths["bars_csv"], bar_rows(reports, baseline),
               ["config", "class", "accuracy", "improvement_vs_baseline"])
    return paths


def write_pca_csv(path, label: int, provenance, coords) -> Path:
    """Scatter data with columns class,provenance,pc1,pc2."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coords = np.asarray(coords)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class", "provenance", "pc1", "pc2"])
        for prov, (x, y) in zip(provenance, coords[:, :2]):
            writer.writerow([label, prov, repr(float(x)), repr(float(y))])
    return path


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (v if k == "config" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
