"""Kernel regression on a manifold backend.

The estimator at a query point ``s`` is a weighted average of the targets,
with weights ``K_h(rho(s, s_i)) / theta_s(s_i)``: a Gaussian kernel in the
geodesic distance, corrected by the reciprocal volume density so that the
curvature of the manifold does not bias the local averaging. All weights are
accumulated in log domain with a max shift; normalisation constants cancel in
the ratio.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import BandwidthTooSmallError, InvalidArgumentError

__all__ = ["KernelSpec", "SmootherCache", "kernel_weight",
           "pelletier_estimate", "smooth_all"]


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and bandwidth (radians)."""

    bandwidth: float
    family: str = "gaussian"

    def __post_init__(self):
        if self.family != "gaussian":
            raise InvalidArgumentError(f"unsupported kernel family {self.family!r}")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InvalidArgumentError(f"bandwidth must be positive, got {self.bandwidth!r}")

    def check_against(self, backend) -> None:
        """Warn (never raise) when the bandwidth exceeds the injectivity bound."""
        bound = getattr(backend, "injectivity_bound", None)
        if bound is not None and self.bandwidth > bound:
            warnings.warn(
                f"bandwidth {self.bandwidth:.6g} exceeds the injectivity bound "
                f"{bound:.6g} of {backend.description}; estimates remain defined "
                "but lose their local character", stacklevel=2)


@dataclass(frozen=True)
class SmootherCache:
    """Pairwise distances and log volume densities over one sample.

    Both matrices are symmetric with exactly zero diagonals; they depend only
    on the sample, not on the bandwidth, so one cache serves every fit and
    every bandwidth on the same data.
    """

    dist: NDArray[np.floating]
    logdens: NDArray[np.floating]

    def __post_init__(self):
        d, l = np.asarray(self.dist, float), np.asarray(self.logdens, float)
        if d.shape != l.shape or d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise InvalidArgumentError("cache matrices must be square and congruent")
        for name, mat in (("distance", d), ("log-density", l)):
            if not np.allclose(mat, mat.T, atol=1e-12):
                raise InvalidArgumentError(f"{name} matrix is not symmetric")
            if np.any(np.diagonal(mat) != 0.0):
                raise InvalidArgumentError(f"{name} matrix has a nonzero diagonal")

    @classmethod
    def from_points(cls, points, backend, count_label: str | None = None
                    ) -> "SmootherCache":
        dist, logdens = backend.pairwise_matrices(points, count_label=count_label)
        return cls(dist=dist, logdens=logdens)

    @property
    def n(self) -> int:
        return self.dist.shape[0]


def kernel_weight(d: float, spec: KernelSpec) -> float:
    """Unnormalised Gaussian kernel value ``exp(-d^2 / (2 h^2))``."""
    if d < 0:
        raise InvalidArgumentError(f"distance must be nonnegative, got {d}")
    h = spec.bandwidth
    return float(np.exp(-(d * d) / (2.0 * h * h)))


def _log_weights(dist, logdens, spec: KernelSpec) -> NDArray[np.floating]:
    h = spec.bandwidth
    # extreme bandwidths may overflow to -inf here; the normalisation guard
    # turns that into BandwidthTooSmallError
    with np.errstate(divide="ignore", over="ignore"):
        return (-np.asarray(logdens, float)
                - np.asarray(dist, float) ** 2 / (2.0 * h * h))


def _normalised(logw: NDArray, query) -> NDArray[np.floating]:
    """Rows of normalised weights from log weights, max-shifted per row."""
    shift = logw.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(shift)):
        raise BandwidthTooSmallError(query)
    w = np.exp(logw - shift)
    return w / w.sum(axis=-1, keepdims=True)


def _weighted_average(w: NDArray, targets: NDArray) -> NDArray[np.floating]:
    # Averaging deviations from the column mean keeps constant targets exact.
    tbar = targets.mean(axis=0)
    return tbar + w @ (targets - tbar)


def _as_targets(targets) -> tuple[NDArray[np.floating], bool]:
    t = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(t)):
        raise InvalidArgumentError("targets contain non-finite values")
    if t.ndim == 1:
        return t[:, None], True
    return t, False


def pelletier_estimate(query, points, targets, spec: KernelSpec, backend,
                       cache: SmootherCache | None = None):
    """Kernel-regression estimate of the target function at one point.

    ``query`` is either a point of the backend or an integer index into
    ``points`` (served from ``cache`` when given). Vector targets are smoothed
    column-wise. Every sample point contributes, including the query itself
    when it is part of the sample.

    Raises :class:`BandwidthTooSmallError` when all log weights underflow to
    ``-inf`` even after shifting, naming the query.
    """
    if len(points) == 0:
        raise InvalidArgumentError("cannot smooth over an empty sample")
    t, squeeze = _as_targets(targets)
    if t.shape[0] != len(points):
        raise InvalidArgumentError(
            f"{t.shape[0]} target rows for {len(points)} sample points")
    spec.check_against(backend)
    if isinstance(query, (int, np.integer)) and cache is not None:
        dist = cache.dist[query]
        logdens = cache.logdens[query]
    else:
        point = points[query] if isinstance(query, (int, np.integer)) else query
        dist = backend.distances_to(point, points)
        logdens = backend.log_density_at(dist)
    w = _normalised(_log_weights(dist, logdens, spec), query)
    out = _weighted_average(w, t)
    return out[0] if squeeze else out


def smooth_all(points, targets, spec: KernelSpec, backend,
               cache: SmootherCache | None = None) -> NDArray[np.floating]:
    """Estimates at every sample point; row ``i`` is the estimate at point ``i``.

    Equivalent to ``n`` independent :func:`pelletier_estimate` calls over the
    shared cache.
    """
    t, squeeze = _as_targets(targets)
    n = len(points)
    if t.shape[0] != n:
        raise InvalidArgumentError(f"{t.shape[0]} target rows for {n} sample points")
    spec.check_against(backend)
    if cache is None:
        cache = SmootherCache.from_points(points, backend)
    elif cache.n != n:
        raise InvalidArgumentError(
            f"cache built for {cache.n} points cannot serve {n} points")
    w = _normalised(_log_weights(cache.dist, cache.logdens, spec),
                    query="<all sample points>")
    out = _weighted_average(w, t)
    return out[:, 0] if squeeze else out


def smooth_at(dist_row, logdens_row, targets, spec: KernelSpec, query=None):
    """Estimate at an off-sample point from precomputed distances.

    Low-level entry used by prediction paths that already hold the distances
    from the query to the training sample.
    """
    t, squeeze = _as_targets(targets)
    w = _normalised(_log_weights(dist_row, logdens_row, spec), query)
    out = _weighted_average(w, t)
    return out[0] if squeeze else out


def normalised_weight_matrix(cache: SmootherCache, spec: KernelSpec) -> NDArray:
    """Row-normalised weights over one sample, ready for repeated smoothing.

    The weights depend only on the cache and the bandwidth, not on the
    targets, so iterative fits compute this once and re-apply it every sweep;
    ``apply_weights(w, t)`` then equals ``smooth_all`` on the same cache.
    """
    return _normalised(_log_weights(cache.dist, cache.logdens, spec),
                       query="<all sample points>")


def apply_weights(w: NDArray, targets) -> NDArray[np.floating]:
    t, squeeze = _as_targets(targets)
    out = _weighted_average(w, t)
    return out[:, 0] if squeeze else out
