"""Gaussian radial basis interpolation and panel fusion.

Scattered station readings are fused into a dense (time, station, target)
matrix: cells a station measured keep their raw value, every other cell is
interpolated from the stations that did measure that target at that hour.

The interpolant through N sources solves A w = b where
A[i, j] = exp(-c * dist(i, j)^2) plus an optional diagonal ridge, and
evaluates as F(q) = sum_j w_j * exp(-c * dist(q, j)^2). The Gaussian kernel
makes A symmetric positive definite for distinct sources, so the solve goes
through a Cholesky factorization with iterative refinement; the factorization
is cached per (target, availability pattern) when fusing a whole panel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import FusionError, SingularSystemError, ValidationError
from .ingest import ObservationPanel, Station

EARTH_RADIUS_KM = 6371.0088
_METRICS = ("euclidean", "haversine_km")

# Residual contract for every weight solve: ||A w - b||_inf below this times
# (1 + ||b||_inf), else the system is reported as effectively singular.
RESIDUAL_RTOL = 1e-8


@dataclass(frozen=True)
class RbfConfig:
    """Kernel shape, diagonal ridge and distance metric.

    ``shape_c`` None means per-target auto-scaling: c = 1 / (2 * d_med^2)
    with d_med the median pairwise distance between that target's native
    stations. ``ridge`` None means a tiny trace-scaled default; pass 0.0
    explicitly for exact interpolation.
    """

    shape_c: float | None = None
    ridge: float | None = None
    distance_metric: str = "euclidean"

    def validate(self) -> None:
        if self.shape_c is not None and not self.shape_c > 0:
            raise ValidationError(f"shape_c must be positive, got {self.shape_c}")
        if self.ridge is not None and self.ridge < 0:
            raise ValidationError(f"ridge must be >= 0, got {self.ridge}")
        if self.distance_metric not in _METRICS:
            raise ValidationError(
                f"distance_metric must be one of {_METRICS}, got {self.distance_metric!r}")


def _check_points(points: np.ndarray, label: str) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError(f"{label} must be (n, 2), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValidationError(f"{label} contain non-finite coordinates")
    return pts


def cross_distances(a: np.ndarray, b: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """(len(a), len(b)) distance matrix under the chosen metric.

    ``euclidean`` treats coordinates as planar (x, y). ``haversine_km``
    treats them as (longitude, latitude) in degrees and returns great-circle
    kilometres.
    """
    a = _check_points(a, "points")
    b = _check_points(b, "points")
    if metric == "euclidean":
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))
    if metric == "haversine_km":
        lon_a, lat_a = np.radians(a[:, 0])[:, None], np.radians(a[:, 1])[:, None]
        lon_b, lat_b = np.radians(b[:, 0])[None, :], np.radians(b[:, 1])[None, :]
        h = (np.sin((lat_b - lat_a) / 2) ** 2
             + np.cos(lat_a) * np.cos(lat_b) * np.sin((lon_b - lon_a) / 2) ** 2)
        return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    raise ValidationError(f"unknown distance metric {metric!r}")


def pairwise_distances(points: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Symmetric distance matrix with an exactly zero diagonal."""
    d = cross_distances(points, points, metric)
    np.fill_diagonal(d, 0.0)
    return d


def gaussian_rbf(dist, shape_c: float) -> np.ndarray:
    """exp(-c * d^2): 1 at zero distance, monotone decreasing."""
    if not shape_c > 0:
        raise ValidationError(f"shape_c must be positive, got {shape_c}")
    d = np.asarray(dist, dtype=np.float64)
    if (d < 0).any():
        raise ValidationError("distances must be non-negative")
    return np.exp(-shape_c * d * d)


def resolve_shape_c(dists: np.ndarray, config: RbfConfig) -> float:
    """Explicit shape_c, or 1 / (2 * median off-diagonal distance squared)."""
    if config.shape_c is not None:
        return config.shape_c
    n = dists.shape[0]
    if n < 2:
        return 1.0
    off = dists[~np.eye(n, dtype=bool)]
    d_med = float(np.median(off))
    if d_med <= 0.0:
        return 1.0  # coincident sources; the solve will report singularity
    return 1.0 / (2.0 * d_med * d_med)


def _resolve_ridge(n: int, trace: float, config: RbfConfig) -> float:
    if config.ridge is not None:
        return config.ridge
    return 1e-10 * trace / n


def assemble_coefficient_matrix(dists: np.ndarray, config: RbfConfig) -> np.ndarray:
    """Kernel Gram matrix with the resolved ridge added to the diagonal."""
    dists = np.asarray(dists, dtype=np.float64)
    if dists.ndim != 2 or dists.shape[0] != dists.shape[1]:
        raise ValidationError(f"distance matrix must be square, got {dists.shape}")
    config.validate()
    c = resolve_shape_c(dists, config)
    a = gaussian_rbf(dists, c)
    ridge = _resolve_ridge(dists.shape[0], float(np.trace(a)), config)
    if ridge:
        a = a + ridge * np.eye(dists.shape[0])
    return a


def solve_weights(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve the SPD system A w = b to the residual contract.

    Cholesky plus iterative refinement. Raises SingularSystemError (with the
    ridge suggestion) when the factorization fails or the refined residual
    still exceeds the bound.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"coefficient matrix must be square, got {a.shape}")
    if b.shape != (a.shape[0],):
        raise ValidationError(f"rhs shape {b.shape} does not match matrix {a.shape}")
    try:
        factor = cho_factor(a, lower=True)
    except LinAlgError as exc:
        raise SingularSystemError(
            "coefficient matrix is singular or not positive definite; "
            "duplicate source locations are the usual cause, and a positive "
            "ridge regularizes near-duplicates") from exc
    return _solve_refined(factor, a, b)


def _solve_refined(factor, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
    bound = RESIDUAL_RTOL * scale
    # Refine toward the rounding floor, not just the contract bound: stopping
    # right at the relative bound leaves an absolute error of RESIDUAL_RTOL *
    # max|b|, which is visible when observations are large. Refinement stops
    # once it hits the floor or stops helping; the bound stays the pass/fail
    # line for declaring the system solvable.
    floor = 1e4 * np.finfo(np.float64).eps * scale
    best_w = cho_solve(factor, b)
    best_r = float(np.max(np.abs(b - a @ best_w), initial=0.0))
    for _ in range(4):
        if best_r <= floor:
            break
        w = best_w + cho_solve(factor, b - a @ best_w)
        r = float(np.max(np.abs(b - a @ w), initial=0.0))
        if r >= best_r:
            break
        best_w, best_r = w, r
    if best_r < bound:
        return best_w
    raise SingularSystemError(
        f"weight solve residual {best_r:.3e} exceeds {bound:.3e}; the system "
        "is too ill-conditioned, increase the ridge")


@dataclass
class RbfInterpolant:
    """Fitted interpolant: source points, solved weights, resolved kernel."""

    points: np.ndarray
    weights: np.ndarray
    shape_c: float
    distance_metric: str


def build_interpolant(points: np.ndarray, values: np.ndarray,
                      config: RbfConfig | None = None) -> RbfInterpolant:
    """Fit weights so the interpolant passes through (points, values).

    With ridge 0 the fit is exact at the sources; a positive ridge trades a
    little exactness for conditioning.
    """
    config = config or RbfConfig()
    config.validate()
    points = _check_points(points, "source points")
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (points.shape[0],):
        raise ValidationError(
            f"values shape {values.shape} does not match {points.shape[0]} points")
    if points.shape[0] == 0:
        raise ValidationError("need at least one source point")
    if not np.isfinite(values).all():
        raise ValidationError("source values contain non-finite entries")
    dists = pairwise_distances(points, config.distance_metric)
    c = resolve_shape_c(dists, config)
    a = assemble_coefficient_matrix(dists, replace(config, shape_c=c))
    return RbfInterpolant(points, solve_weights(a, values), c, config.distance_metric)


def evaluate_interpolant(interp: RbfInterpolant, query_points: np.ndarray) -> np.ndarray:
    """F(q) = sum_j w_j * exp(-c * dist(q, s_j)^2) for each query point."""
    queries = _check_points(query_points, "query points")
    basis = gaussian_rbf(
        cross_distances(queries, interp.points, interp.distance_metric), interp.shape_c)
    return basis @ interp.weights


@dataclass
class FusionMatrix:
    """Dense fused panel plus provenance.

    ``values`` is (T, S, K) with no missing entries. ``raw_mask`` is True
    where the value is an untouched station reading, False where it was
    interpolated.
    """

    timestamps: list[datetime]
    station_ids: list[str]
    target_ids: list[str]
    values: np.ndarray
    raw_mask: np.ndarray

    def validate(self) -> None:
        t, s, k = self.values.shape
        if (t, s, k) != (len(self.timestamps), len(self.station_ids), len(self.target_ids)):
            raise ValidationError("fusion matrix axes do not match index lists")
        if self.raw_mask.shape != self.values.shape:
            raise ValidationError("provenance mask shape does not match values")
        if np.isnan(self.values).any():
            raise ValidationError("fusion matrix contains missing values")


def _station_coords(stations: list[Station]) -> np.ndarray:
    return np.array([[st.x, st.y] for st in stations], dtype=np.float64)


def fuse_time_step(panel_slice: np.ndarray, stations: list[Station],
                   target_ids: list[str], config: RbfConfig | None = None,
                   timestamp=None) -> np.ndarray:
    """Fuse one (S, K) slice: keep available native readings, interpolate the rest.

    The kernel shape for target k is resolved from the geometry of all of
    k's native stations, so it does not drift when some of them drop out for
    an hour. Raises FusionError when a target has no available source.
    """
    config = config or RbfConfig()
    config.validate()
    panel_slice = np.asarray(panel_slice, dtype=np.float64)
    n_stations, n_targets = len(stations), len(target_ids)
    if panel_slice.shape != (n_stations, n_targets):
        raise ValidationError(
            f"slice shape {panel_slice.shape} does not match ({n_stations}, {n_targets})")

    coords = _station_coords(stations)
    native = np.zeros((n_stations, n_targets), dtype=bool)
    k_index = {t: i for i, t in enumerate(target_ids)}
    for s, st in enumerate(stations):
        for t in st.targets:
            if t in k_index:
                native[s, k_index[t]] = True

    fused = panel_slice.copy()
    for k, tid in enumerate(target_ids):
        available = native[:, k] & ~np.isnan(panel_slice[:, k])
        if not available.any():
            when = f" at {timestamp}" if timestamp is not None else ""
            raise FusionError(f"target {tid!r} has no available source station{when}")
        fill = ~available
        if not fill.any():
            continue
        c_k = _target_shape_c(coords, native[:, k], config)
        interp = build_interpolant(
            coords[available], panel_slice[available, k], replace(config, shape_c=c_k))
        fused[fill, k] = evaluate_interpolant(interp, coords[fill])
    return fused


def _target_shape_c(coords: np.ndarray, native_k: np.ndarray, config: RbfConfig) -> float:
    if config.shape_c is not None:
        return config.shape_c
    dists = pairwise_distances(coords[native_k], config.distance_metric)
    return resolve_shape_c(dists, config)


class _StepSolver:
    """Per-(target, availability pattern) cached factorization for panel fusion."""

    def __init__(self, coords: np.ndarray, available: np.ndarray, shape_c: float,
                 config: RbfConfig):
        self.available = available
        self.queries = ~available
        src = coords[available]
        dists = pairwise_distances(src, config.distance_metric)
        self.a = assemble_coefficient_matrix(dists, replace(config, shape_c=shape_c))
        try:
            self.factor = cho_factor(self.a, lower=True)
        except LinAlgError as exc:
            raise SingularSystemError(
                "coefficient matrix is singular or not positive definite; "
                "duplicate source locations are the usual cause, and a positive "
                "ridge regularizes near-duplicates") from exc
        self.basis = gaussian_rbf(
            cross_distances(coords[self.queries], src, config.distance_metric), shape_c)

    def fill(self, slice_k: np.ndarray) -> None:
        w = _solve_refined(self.factor, self.a, slice_k[self.available])
        slice_k[self.queries] = self.basis @ w


def fuse_panel(panel: ObservationPanel, config: RbfConfig | None = None) -> FusionMatrix:
    """Fuse every time step of a panel into a dense matrix with provenance.

    Availability patterns repeat hour after hour, so the Cholesky factor and
    query basis for each (target, pattern) pair are built once and reused.
    """
    config = config or RbfConfig()
    config.validate()
    panel.validate()
    t_total, n_stations, n_targets = panel.values.shape
    coords = _station_coords(panel.stations)
    native = panel.native_mask()
    shape_cs = [
        _target_shape_c(coords, native[:, k], config) for k in range(n_targets)
    ]

    values = panel.values.copy()
    raw_mask = np.zeros_like(values, dtype=bool)
    solvers: dict[tuple[int, bytes], _StepSolver] = {}
    for t in range(t_total):
        for k in range(n_targets):
            available = native[:, k] & ~np.isnan(panel.values[t, :, k])
            if not available.any():
                raise FusionError(
                    f"target {panel.target_ids[k]!r} has no available source "
                    f"station at {panel.timestamps[t]}")
            raw_mask[t, :, k] = available
            if available.all():
                continue
            key = (k, available.tobytes())
            solver = solvers.get(key)
            if solver is None:
                solver = _StepSolver(coords, available, shape_cs[k], config)
                solvers[key] = solver
            solver.fill(values[t, :, k])

    fused = FusionMatrix(
        timestamps=list(panel.timestamps),
        station_ids=[st.id for st in panel.stations],
        target_ids=list(panel.target_ids),
        values=values,
        raw_mask=raw_mask,
    )
    fused.validate()
    return fused
