"""Leave-one-out cross-validation and bandwidth sweeps.

Folds group rows by subject: leaving a subject out removes every row it
contributes, and each held-out row yields one prediction. Training smooths
never see the held-out subject's shape, covariates, or label. Fits across
folds and bandwidths share one read-only distance cache; only index
subsetting differs per fold.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateDatasetError, InvalidArgumentError
from .models import (
    FitConfig,
    fit_logistic_plm,
    fit_ordinal_plm,
    predict_logistic,
    predict_ordinal,
)
from .smoothing import KernelSpec, SmootherCache

__all__ = ["CvReport", "SubjectPrediction", "loocv", "bandwidth_sweep"]


@dataclass(frozen=True)
class SubjectPrediction:
    """One held-out prediction: identifiers, truth, call, and probabilities."""

    bandwidth: float
    row_id: str
    subject: str
    true_label: int
    predicted: int
    probs: tuple[float, ...]


@dataclass
class CvReport:
    """Accuracy per bandwidth with per-row detail and confusion matrices."""

    model: str
    bandwidths: list[float]
    accuracy: dict[float, float]                      # percent
    n_evaluated: dict[float, int]
    n_correct: dict[float, int]
    predictions: list[SubjectPrediction]
    confusion: dict[float, NDArray]                   # rows true, cols predicted
    skipped_folds: dict[float, list[str]] = field(default_factory=dict)

    @property
    def best_bandwidth(self) -> float:
        """Highest accuracy; ties resolved toward the smaller bandwidth."""
        return min(sorted(self.bandwidths),
                   key=lambda h: (-self.accuracy[h], h))


def _class_values(model: str) -> list[int]:
    return [0, 1] if model == "logistic" else [1, 2, 3]


def _fit_one(model, y, x, shapes, spec, backend, cfg, cache):
    if model == "logistic":
        return fit_logistic_plm(y, x, shapes, spec, backend, cfg=cfg, cache=cache)
    if model == "ordinal":
        return fit_ordinal_plm(y, x, shapes, spec, backend, cfg=cfg, cache=cache)
    raise InvalidArgumentError(f"cross-validation supports logistic/ordinal, got {model!r}")


def _predict_one(model, fit, x_new, s_new, shapes, x, spec, backend,
                 query_rows=None):
    if model == "logistic":
        p = predict_logistic(fit, x_new, s_new, shapes, x, spec, backend,
                             query_rows=query_rows)
        return (1 if p > 0.5 else 0), (1.0 - p, p)
    pred = predict_ordinal(fit, x_new, s_new, shapes, x, spec, backend,
                           query_rows=query_rows)
    return pred.category, tuple(pred.probs)


def loocv(bundle, model: str, spec: KernelSpec, cfg: FitConfig | None = None,
          use_cache: bool = True) -> CvReport:
    """Leave-one-subject-out cross-validation at a single bandwidth.

    Folds whose training part lost an entire response class are skipped and
    recorded; if every fold is skipped the dataset cannot be cross-validated.
    With ``use_cache=False`` each fold rebuilds its own pairwise matrices from
    scratch (the reference point for the cache benchmark).
    """
    cfg = cfg or FitConfig()
    n = len(bundle.samples)
    if n < 3:
        raise InvalidArgumentError("cross-validation needs at least 3 rows")
    y = np.asarray(bundle.y)
    x = bundle.x
    shapes = bundle.shapes
    subjects = np.asarray(bundle.subjects)
    classes = _class_values(model)

    order = []
    seen = set()
    for s in subjects:
        if s not in seen:
            seen.add(s)
            order.append(s)

    full_cache = bundle.cache if use_cache else None
    predictions: list[SubjectPrediction] = []
    skipped: list[str] = []

    def run_fold(subject):
        held = np.flatnonzero(subjects == subject)
        train = np.flatnonzero(subjects != subject)
        y_tr = y[train]
        if any(not np.any(y_tr == c) for c in classes):
            return None
        shapes_tr = [shapes[i] for i in train]
        x_tr = x[train]
        if use_cache:
            cache_tr = SmootherCache(dist=full_cache.dist[np.ix_(train, train)],
                                     logdens=full_cache.logdens[np.ix_(train, train)])
        else:
            cache_tr = SmootherCache.from_points(shapes_tr, bundle.backend)
        fit = _fit_one(model, y_tr, x_tr, shapes_tr, spec, bundle.backend,
                       cfg, cache_tr)
        out = []
        for i in held:
            rows = None
            if use_cache:
                rows = (full_cache.dist[i, train], full_cache.logdens[i, train])
            pred, probs = _predict_one(model, fit, x[i], shapes[i],
                                       shapes_tr, x_tr, spec, bundle.backend,
                                       query_rows=rows)
            out.append(SubjectPrediction(
                bandwidth=spec.bandwidth, row_id=str(bundle.ids[i]),
                subject=str(subject), true_label=int(y[i]),
                predicted=int(pred), probs=tuple(float(p) for p in probs)))
        return out

    workers = int(os.environ.get("SHAPEGPLM_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_fold, order))
    else:
        results = [run_fold(s) for s in order]

    for subject, res in zip(order, results):
        if res is None:
            skipped.append(str(subject))
        else:
            predictions.extend(res)

    if not predictions:
        raise DegenerateDatasetError(
            "every cross-validation fold was skipped (a class vanished from "
            "each training set)")

    n_eval = len(predictions)
    n_corr = sum(p.predicted == p.true_label for p in predictions)
    conf = np.zeros((len(classes), len(classes)), dtype=int)
    index = {c: i for i, c in enumerate(classes)}
    for p in predictions:
        conf[index[p.true_label], index[p.predicted]] += 1

    h = spec.bandwidth
    return CvReport(model=model, bandwidths=[h],
                    accuracy={h: 100.0 * n_corr / n_eval},
                    n_evaluated={h: n_eval}, n_correct={h: n_corr},
                    predictions=predictions, confusion={h: conf},
                    skipped_folds={h: skipped})


def bandwidth_sweep(bundle, model: str, grid, cfg: FitConfig | None = None,
                    use_cache: bool = True) -> CvReport:
    """One :func:`loocv` per bandwidth, sharing the dataset cache.

    Results are keyed and ordered by bandwidth, independent of grid order.
    """
    grid = sorted(float(h) for h in grid)
    if not grid or any(h <= 0 for h in grid):
        raise InvalidArgumentError("bandwidth grid must be nonempty and positive")
    merged: CvReport | None = None
    for h in grid:
        rep = loocv(bundle, model, KernelSpec(bandwidth=h), cfg, use_cache)
        if merged is None:
            merged = rep
        else:
            merged.bandwidths.append(h)
            merged.accuracy.update(rep.accuracy)
            merged.n_evaluated.update(rep.n_evaluated)
            merged.n_correct.update(rep.n_correct)
            merged.predictions.extend(rep.predictions)
            merged.confusion.update(rep.confusion)
            merged.skipped_folds.update(rep.skipped_folds)
    return merged
