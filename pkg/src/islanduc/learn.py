"""Dataset construction and the censored-regression shedding estimator.

Pipeline: enumerate feasible snapshots at given demand levels, keep the
cheap fraction, compress with k-means, label every (snapshot, outage)
pair with the simulated minimal shed, then fit a left-censored (at zero)
linear model of shed vs. initial RoCoF by maximum likelihood.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .sfr import CollapseError, NoOnlineUnitsError, optimal_ufls
from .system_model import (OperatingPoint, SystemSpec, ValidationError,
                           initial_rocof, system_inertia)

log = logging.getLogger(__name__)

KMEANS_RESTARTS = 20
KMEANS_MAX_ITER = 300


class TobitFitError(RuntimeError):
    """The likelihood maximization could not produce a usable model."""


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class DatasetPoint:
    """One labeled (operating point, outage) pair."""

    operating_point: OperatingPoint | None
    outage: str
    initial_rocof_hzps: float
    optimal_ufls_mw: float
    point_id: int = -1

    def __post_init__(self):
        if self.optimal_ufls_mw < 0:
            raise ValidationError("optimal_ufls_mw", "must be >= 0")
        if self.initial_rocof_hzps <= 0:
            raise ValidationError("initial_rocof_hzps", "must be > 0")


@dataclass(frozen=True)
class TobitModel:
    """Fitted threshold/slope/noise of the censored shed-vs-RoCoF line.

    Prediction is ``max(0, slope_b * (x - threshold_a))``; the latent line
    is ``slope_b * (x - threshold_a)`` with homoscedastic normal noise
    ``noise_sigma``, censored at ``censor_point`` (0 MW).
    """

    threshold_a: float
    slope_b: float
    noise_sigma: float
    censor_point: float = 0.0
    n_points: int = 0
    n_censored: int = 0
    max_label_mw: float = 0.0
    conservative_fraction: float = float("nan")

    def __post_init__(self):
        if self.slope_b <= 0:
            raise ValidationError("slope_b", "must be > 0")
        if self.noise_sigma <= 0:
            raise ValidationError("noise_sigma", "must be > 0")


def predict_ufls(model: TobitModel, rocof_hzps: float) -> float:
    """Estimated shed in MW: zero below the threshold, linear above."""
    if rocof_hzps < 0:
        raise ValidationError("rocof_hzps", "must be >= 0")
    return max(0.0, model.slope_b * (rocof_hzps - model.threshold_a))


# ---------------------------------------------------------------------------
# feasible-point enumeration


def _unit_grid(p_min: float, p_max: float, step: float) -> list[float]:
    vals = []
    v = p_min
    while v < p_max - 1e-9:
        vals.append(round(v, 9))
        v += step
    vals.append(p_max)
    return vals


def enumerate_operating_points(spec: SystemSpec, demand_mw: float,
                               step_mw: float = 1.0,
                               cost_quantile: float = 0.25
                               ) -> list[OperatingPoint]:
    """All grid dispatches balancing ``demand_mw`` within half a step,
    filtered to the cheapest ``cost_quantile`` fraction by dispatch cost.

    Unit dispatch is either 0 (off) or on a ``step_mw`` grid over
    [p_min, p_max] (p_max always included).  Returns [] with a logged
    diagnostic when no commitment can reach the demand.
    """
    if step_mw <= 0:
        raise ValidationError("step_mw", "must be > 0")
    if not 0 < cost_quantile <= 1:
        raise ValidationError("cost_quantile", "must be in (0, 1]")
    n = spec.n_units
    grids = [_unit_grid(g.p_min, g.p_max, step_mw) for g in spec.generators]
    max_rest = [0.0] * (n + 1)
    for i in reversed(range(n)):
        max_rest[i] = max_rest[i + 1] + grids[i][-1]
    tol = step_mw / 2 + 1e-9
    found: list[tuple[float, ...]] = []
    disp = [0.0] * n

    def rec(i: int, total: float) -> None:
        if total > demand_mw + tol:
            return
        if total + max_rest[i] < demand_mw - tol:
            return
        if i == n:
            if total > 0 and abs(total - demand_mw) <= tol:
                found.append(tuple(disp))
            return
        disp[i] = 0.0
        rec(i + 1, total)
        for v in grids[i]:
            if total + v > demand_mw + tol:
                break
            disp[i] = v
            rec(i + 1, total + v)
        disp[i] = 0.0

    rec(0, 0.0)
    if not found:
        log.warning("no feasible operating point for demand %.2f MW (step %.2f)",
                    demand_mw, step_mw)
        return []
    costs = [sum(g.dispatch_cost(p) for g, p in zip(spec.generators, d))
             for d in found]
    order = sorted(range(len(found)), key=lambda j: (costs[j], found[j]))
    keep = max(1, math.ceil(cost_quantile * len(found)))
    return [OperatingPoint.from_dispatch(spec, found[j]) for j in order[:keep]]


# ---------------------------------------------------------------------------
# k-means compression


def _features(points: Sequence[OperatingPoint], spec: SystemSpec) -> np.ndarray:
    pmax = np.array([g.p_max for g in spec.generators])
    return np.array([p.dispatch for p in points]) / pmax


def _pairwise_d2(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (X * X).sum(1)[:, None] + (centers * centers).sum(1)[None, :] \
        - 2.0 * X @ centers.T
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = _pairwise_d2(X, centers[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = centers[0]
            break
        idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
        idx = min(idx, n - 1)
        centers[j] = X[idx]
        d2 = np.minimum(d2, _pairwise_d2(X, centers[j:j + 1]).ravel())
    return centers


_LLOYD_CHUNK = 16384


def _assign(X: np.ndarray, centers: np.ndarray
            ) -> tuple[np.ndarray, float]:
    """Chunked nearest-center assignment; returns labels and inertia."""
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    inertia = 0.0
    for lo in range(0, n, _LLOYD_CHUNK):
        hi = min(lo + _LLOYD_CHUNK, n)
        d2 = _pairwise_d2(X[lo:hi], centers)
        labels[lo:hi] = d2.argmin(1)
        inertia += float(d2[np.arange(hi - lo), labels[lo:hi]].sum())
    return labels, inertia


def _lloyd(X: np.ndarray, centers: np.ndarray,
           max_iter: int = KMEANS_MAX_ITER) -> tuple[np.ndarray, float]:
    k, d = centers.shape
    for _ in range(max_iter):
        labels, _ = _assign(X, centers)
        counts = np.bincount(labels, minlength=k).astype(float)
        new_centers = centers.copy()
        nonempty = counts > 0
        sums = np.empty((k, d))
        for dim in range(d):
            sums[:, dim] = np.bincount(labels, weights=X[:, dim], minlength=k)
        new_centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        shift = float(((new_centers - centers) ** 2).sum())
        centers = new_centers
        if shift < 1e-12:
            break
    _, inertia = _assign(X, centers)
    return centers, inertia


def _kmeans_best(X: np.ndarray, k: int, seed: int,
                 restarts: int = KMEANS_RESTARTS) -> tuple[np.ndarray, float]:
    best_centers, best_inertia = None, float("inf")
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        centers, inertia = _lloyd(X, _kmeans_pp_init(X, k, rng))
        if inertia < best_inertia - 1e-12:
            best_centers, best_inertia = centers, inertia
    return best_centers, best_inertia


def clustering_error(points: Sequence[OperatingPoint], k: int, seed: int,
                     spec: SystemSpec) -> float:
    """Within-cluster sum of squared feature distances at the best restart."""
    X = _features(points, spec)
    _, inertia = _kmeans_best(X, k, seed)
    return inertia


def kmeans_reduce(points: Sequence[OperatingPoint], k: int, seed: int,
                  spec: SystemSpec) -> list[OperatingPoint]:
    """k representative operating points (k-means++ centroids snapped to
    the nearest enumerated point so every centroid stays feasible)."""
    if not 1 <= k <= len(points):
        raise ValidationError("k", "must be in [1, len(points)]")
    X = _features(points, spec)
    centers, _ = _kmeans_best(X, k, seed)
    snapped = []
    for c in centers:
        idx = int(_pairwise_d2(X, c[None, :]).ravel().argmin())
        snapped.append(points[idx])
    return snapped


def select_k(points: Sequence[OperatingPoint], k_max: int,
             improvement_tol: float = 0.001, seed: int = 0,
             spec: SystemSpec | None = None) -> int:
    """Smallest k whose relative error improvement to k+1 drops below
    ``improvement_tol``; k_max when every step still improves more."""
    if k_max < 2:
        raise ValidationError("k_max", "must be >= 2")
    if spec is None:
        raise ValidationError("spec", "system spec is required")
    X = _features(points, spec)
    errs = [_kmeans_best(X, k, seed)[1] for k in range(1, min(k_max, len(points)) + 1)]
    for k, (e_k, e_next) in enumerate(zip(errs, errs[1:]), start=1):
        if e_k <= 0:
            return k
        if (e_k - e_next) / e_k < improvement_tol:
            return k
    return len(errs)


# ---------------------------------------------------------------------------
# labeling


def label_dataset(centroids: Sequence[OperatingPoint], spec: SystemSpec,
                  rocof_cap_hzps: float | None = None) -> list[DatasetPoint]:
    """Label every (centroid, online unit) outage pair with the simulated
    minimal shed.

    Pairs whose initial RoCoF exceeds ``rocof_cap_hzps`` (default: 1.2x
    the system RoCoF limit, beyond which no schedule can operate) and
    collapse cases are excluded; exclusions are logged.
    """
    if not centroids:
        raise ValidationError("centroids", "must not be empty")
    cap = (1.2 * spec.rocof_crit if rocof_cap_hzps is None else rocof_cap_hzps)
    points: list[DatasetPoint] = []
    n_collapse = n_capped = n_degenerate = 0
    for ci, op in enumerate(centroids):
        online = op.online_indices()
        if len(online) < 2:
            n_degenerate += 1
            continue
        for i in online:
            uid = spec.generators[i].id
            rocof = initial_rocof(op.dispatch[i],
                                  system_inertia(op, spec, excluded=uid),
                                  spec.nominal_freq_f0)
            if rocof > cap:
                n_capped += 1
                continue
            try:
                shed = optimal_ufls(op, spec, uid)
            except CollapseError:
                n_collapse += 1
                continue
            points.append(DatasetPoint(operating_point=op, outage=uid,
                                       initial_rocof_hzps=rocof,
                                       optimal_ufls_mw=shed, point_id=ci))
    if n_collapse or n_capped or n_degenerate:
        log.info("label_dataset exclusions: %d collapse, %d above RoCoF cap "
                 "%.2f Hz/s, %d single-unit centroids",
                 n_collapse, n_capped, cap, n_degenerate)
    return points


# ---------------------------------------------------------------------------
# dataset pipeline driver


def demand_grid(net_demands: Sequence[float], n_levels: int = 10) -> list[float]:
    """Evenly spaced demand levels between the valley and the peak."""
    lo, hi = min(net_demands), max(net_demands)
    if n_levels == 1:
        return [0.5 * (lo + hi)]
    return [lo + (hi - lo) * k / (n_levels - 1) for k in range(n_levels)]


def filter_operable(points: Sequence[OperatingPoint],
                    spec: SystemSpec) -> list[OperatingPoint]:
    """Keep points a reserve-constrained scheduler could actually visit:
    after any single outage the remaining headroom covers the lost
    dispatch.  Training on these keeps the estimator on the conservative
    side of the points a schedule produces."""
    kept = []
    for op in points:
        online = op.online_indices()
        if len(online) < 2:
            continue
        ok = True
        for li in online:
            head = sum(spec.generators[j].p_max - op.dispatch[j]
                       for j in online if j != li)
            if head < op.dispatch[li] - 1e-9:
                ok = False
                break
        if ok:
            kept.append(op)
    return kept


def build_dataset(spec: SystemSpec, demand_levels: Sequence[float],
                  step_mw: float = 1.0, cost_quantile: float = 0.25,
                  k: int = 250, seed: int = 42,
                  max_pool: int = 40_000,
                  operable_only: bool = True) -> list[DatasetPoint]:
    """Enumerate, cluster and label in one pass.

    Feasible points from every demand level are pooled, by default
    restricted to reserve-operable ones (:func:`filter_operable`); a
    seeded subsample caps the pool at ``max_pool`` to keep clustering
    tractable (0 disables the cap).  The pool is compressed to ``k``
    representatives and labeled against the simulation oracle.
    """
    pool: list[OperatingPoint] = []
    for d in demand_levels:
        pts = enumerate_operating_points(spec, d, step_mw, cost_quantile)
        if operable_only:
            pts = filter_operable(pts, spec)
        pool.extend(pts)
    if not pool:
        raise ValidationError("demand_levels", "no feasible operating points")
    if max_pool and len(pool) > max_pool:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(pool), size=max_pool, replace=False))
        pool = [pool[int(j)] for j in idx]
        log.info("pool subsampled to %d points", max_pool)
    k_eff = min(k, len(pool))
    centroids = kmeans_reduce(pool, k_eff, seed, spec)
    return label_dataset(centroids, spec)


# ---------------------------------------------------------------------------
# censored-regression fit


LOG_SIGMA_FLOOR = math.log(1e-8)


def _tobit_nll_grad(theta: np.ndarray, x: np.ndarray, y: np.ndarray,
                    cens: np.ndarray) -> tuple[float, np.ndarray]:
    b0, b1, logs = theta
    s = math.exp(logs)
    mu = b0 + b1 * x
    nll = 0.0
    grad = np.zeros(3)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        # uncensored part: normal density of the residual
        xu, yu, mu_u = x[~cens], y[~cens], mu[~cens]
        ru = (yu - mu_u) / s
        nll -= float(np.sum(-0.5 * ru * ru - logs - 0.5 * math.log(2 * math.pi)))
        grad[0] -= float(np.sum(ru / s))
        grad[1] -= float(np.sum(xu * ru / s))
        grad[2] -= float(np.sum(ru * ru - 1.0))
        # censored part: normal CDF of the standardized negative latent mean
        xc, mu_c = x[cens], mu[cens]
        alpha = -mu_c / s
        lam = np.exp(norm.logpdf(alpha) - norm.logcdf(alpha))
        nll -= float(np.sum(norm.logcdf(alpha)))
        grad[0] -= float(np.sum(-lam / s))
        grad[1] -= float(np.sum(-lam * xc / s))
        grad[2] -= float(np.sum(-lam * alpha))
    if not math.isfinite(nll) or not np.all(np.isfinite(grad)):
        return float("inf"), np.full(3, float("nan"))
    return nll, grad


def _ols_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    vx = float(np.var(x))
    if vx <= 0:
        return float(np.mean(y)), 1.0
    b1 = float(np.cov(x, y, bias=True)[0, 1]) / vx
    b0 = float(np.mean(y)) - b1 * float(np.mean(x))
    return b0, b1


def fit_tobit(data: Sequence[DatasetPoint], grad_tol: float = 1e-8,
              max_iter: int = 200) -> TobitModel:
    """Maximum-likelihood censored regression of shed (MW) on RoCoF (Hz/s).

    Newton iterations on (intercept, slope, log sigma) with backtracking
    line search and a gradient-descent fallback, started from OLS on the
    uncensored points.
    """
    if len(data) < 10:
        raise TobitFitError(f"need >= 10 points, got {len(data)}")
    x = np.array([p.initial_rocof_hzps for p in data])
    y = np.array([p.optimal_ufls_mw for p in data])
    cens = y <= 0.0
    if not cens.any():
        raise TobitFitError("no censored (zero-shed) points; fit a plain line")
    if cens.all():
        raise TobitFitError("all points censored; nothing to regress on")

    b0, b1 = _ols_line(x[~cens], y[~cens])
    if b1 <= 0:
        b1 = 1.0
    resid = y[~cens] - (b0 + b1 * x[~cens])
    s0 = float(np.std(resid))
    if s0 < 1e-8 and b1 > 0 and np.all(b0 + b1 * x[cens] <= 1e-8):
        # exact interpolation: the likelihood grows without bound as
        # sigma -> 0, so return the limiting line directly
        return _finish_model(b0, b1, 1e-8, x, y, cens)
    theta = np.array([b0, b1, math.log(max(s0, 1e-3))])
    nll, grad = _tobit_nll_grad(theta, x, y, cens)
    nll_start = nll

    def free_grad(th: np.ndarray, g: np.ndarray) -> float:
        # sigma is floored; ignore the component pushing through the floor
        g_eff = g.copy()
        if th[2] <= LOG_SIGMA_FLOOR + 1e-12 and g_eff[2] > 0:
            g_eff[2] = 0.0
        return float(np.max(np.abs(g_eff)))

    converged = False
    for _ in range(max_iter):
        if free_grad(theta, grad) < grad_tol:
            converged = True
            break
        # Hessian by central differences of the analytic gradient
        hess = np.empty((3, 3))
        for j in range(3):
            h = 1e-5 * max(1.0, abs(theta[j]))
            ej = np.zeros(3)
            ej[j] = h
            _, gp = _tobit_nll_grad(theta + ej, x, y, cens)
            _, gm = _tobit_nll_grad(theta - ej, x, y, cens)
            hess[:, j] = (gp - gm) / (2 * h)
        hess = 0.5 * (hess + hess.T)
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = -grad
        if not np.all(np.isfinite(step)) or float(grad @ step) >= 0:
            step = -grad
        slope = float(grad @ step)
        t = 1.0
        improved = False
        for _ in range(40):
            cand = theta + t * step
            cand[2] = max(cand[2], LOG_SIGMA_FLOOR)
            nll_c, grad_c = _tobit_nll_grad(cand, x, y, cens)
            if math.isfinite(nll_c) and nll_c <= nll + 1e-4 * t * slope:
                theta, nll, grad = cand, nll_c, grad_c
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    # near-degenerate fits (sigma -> 0) hit float resolution before the
    # absolute tolerance; a gradient negligible against the likelihood
    # scale is the numerical optimum
    if not converged and free_grad(theta, grad) < 1e-6 * max(1.0, abs(nll)):
        converged = True
    if not converged:
        raise TobitFitError(
            f"no convergence after {max_iter} iterations; "
            f"|grad|_inf = {np.max(np.abs(grad)):.3e}")
    if nll > nll_start + 1e-9:
        raise TobitFitError("optimizer ended above the OLS-initialized likelihood")

    b0, b1, logs = theta
    if b1 <= 0:
        raise TobitFitError(f"non-positive fitted slope {b1:.4f}")
    return _finish_model(b0, b1, math.exp(logs), x, y, cens)


def _finish_model(b0: float, b1: float, sigma: float, x: np.ndarray,
                  y: np.ndarray, cens: np.ndarray) -> TobitModel:
    model = TobitModel(threshold_a=-b0 / b1, slope_b=b1, noise_sigma=sigma,
                       n_points=len(x), n_censored=int(cens.sum()),
                       max_label_mw=float(y.max()))
    pred = np.maximum(0.0, model.slope_b * (x - model.threshold_a))
    frac = float(np.mean(pred <= y + 1e-9))
    return replace(model, conservative_fraction=frac)


# ---------------------------------------------------------------------------
# artifacts


def write_dataset_csv(points: Sequence[DatasetPoint], path: str | Path,
                      meta: dict | None = None) -> None:
    lines = []
    for key, val in sorted((meta or {}).items()):
        lines.append(f"# {key}={val}")
    lines.append("point_id,outage_unit,rocof_hzps,ufls_mw")
    for p in points:
        lines.append(f"{p.point_id},{p.outage},{p.initial_rocof_hzps:.6f},"
                     f"{p.optimal_ufls_mw:.4f}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset_csv(path: str | Path) -> list[DatasetPoint]:
    rows = []
    with Path(path).open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "point_id":
                continue
            rows.append(DatasetPoint(operating_point=None, outage=row[1],
                                     initial_rocof_hzps=float(row[2]),
                                     optimal_ufls_mw=float(row[3]),
                                     point_id=int(row[0])))
    return rows


def write_tobit_json(model: TobitModel, path: str | Path,
                     meta: dict | None = None) -> None:
    payload = {
        "a_hzps": model.threshold_a,
        "b_mw_per_hzps": model.slope_b,
        "sigma_mw": model.noise_sigma,
        "censor_point_mw": model.censor_point,
        "n_points": model.n_points,
        "n_censored": model.n_censored,
        "max_label_mw": model.max_label_mw,
        "conservative_fraction": model.conservative_fraction,
    }
    if meta:
        payload["meta"] = meta
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_tobit_json(path: str | Path) -> TobitModel:
    raw = json.loads(Path(path).read_text())
    return TobitModel(threshold_a=float(raw["a_hzps"]),
                      slope_b=float(raw["b_mw_per_hzps"]),
                      noise_sigma=float(raw["sigma_mw"]),
                      censor_point=float(raw.get("censor_point_mw", 0.0)),
                      n_points=int(raw.get("n_points", 0)),
                      n_censored=int(raw.get("n_censored", 0)),
                      max_label_mw=float(raw.get("max_label_mw", 0.0)),
                      conservative_fraction=float(raw.get("conservative_fraction",
                                                          float("nan"))))
