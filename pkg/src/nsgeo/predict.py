"""Plug-in kriging of the outcome at new covariate-tagged locations.

Parameter uncertainty is not propagated: the fitted parameters are treated
as known, so intervals are ``mean +/- z * sd_Y`` with ``sd_Y`` the
conditional standard deviation of a new outcome (nugget included).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .kernels import DistanceSet, PointSet, SchemaError, as_pointset, covariance_from_distances
from .likelihood import FitResult, cholesky_jittered
from .model import DataTable, ObservationSet

Z95 = float(norm.ppf(0.975))


@dataclass
class PredictionResult:
    points: PointSet
    mean: np.ndarray
    sd_Y: np.ndarray
    sd_S: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray

    def __len__(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def empty(cls, names=()) -> "PredictionResult":
        z = np.zeros(0)
        return cls(PointSet(np.zeros((0, 2)), np.zeros((0, len(names))), tuple(names)),
                   z, z.copy(), z.copy(), z.copy(), z.copy())

    @classmethod
    def concat(cls, parts) -> "PredictionResult":
        parts = list(parts)
        pts = PointSet(np.vstack([p.points.coords for p in parts]),
                       np.vstack([p.points.covariates for p in parts]), parts[0].points.names)
        cat = lambda attr: np.concatenate([getattr(p, attr) for p in parts])  # noqa: E731
        return cls(pts, cat("mean"), cat("sd_Y"), cat("sd_S"), cat("lower95"), cat("upper95"))


class Kriger:
    """Factorises the data covariance once and predicts any number of batches."""

    def __init__(self, fit: FitResult, data: ObservationSet):
        self.fit = fit
        self.spec = fit.spec
        self.theta = fit.theta_hat
        if data.q != fit.config.q:
            raise SchemaError(f"data design has {data.q} columns, fit expects {fit.config.q}")
        names = self.spec.covariate_names
        self.source = fit.scaling.apply(data.points.select(names))
        dist = DistanceSet.between(self.source, self.source, self.spec)
        sigma = covariance_from_distances(dist, self.spec)
        sigma[np.diag_indices_from(sigma)] += self.theta.tau2
        self.L, self.jitter = cholesky_jittered(sigma, self.theta)
        resid = data.outcome - data.design @ self.theta.beta
        self.alpha = linalg.cho_solve((self.L, True), resid, check_finite=False)
        self.marginal = self.spec.marginal_variance

    def predict(self, targets: PointSet, target_design: np.ndarray) -> PredictionResult:
        names = self.spec.covariate_names
        raw = targets.select(names)
        target_design = np.asarray(target_design, dtype=float).reshape(len(raw), -1)
        if target_design.shape[1] != self.theta.q:
            raise SchemaError(f"target design has {target_design.shape[1]} columns, "
                              f"expected {self.theta.q}")
        if len(raw) == 0:
            return PredictionResult.empty(names)
        tgt = self.fit.scaling.apply(raw)
        c = covariance_from_distances(DistanceSet.between(tgt, self.source, self.spec), self.spec)
        mean = target_design @ self.theta.beta + c @ self.alpha
        w = linalg.solve_triangular(self.L, c.T, lower=True, check_finite=False)
        var_s = np.maximum(self.marginal - np.einsum("ij,ij->j", w, w), 0.0)
        var_y = var_s + self.theta.tau2
        sd_y, sd_s = np.sqrt(var_y), np.sqrt(var_s)
        return PredictionResult(raw, mean, sd_y, sd_s, mean - Z95 * sd_y, mean + Z95 * sd_y)


def krige(fit: FitResult, data: ObservationSet, targets, target_design) -> PredictionResult:
    """Conditional mean and pointwise 95% prediction intervals at ``targets``.

    ``targets`` is a list of :class:`InputPoint` or a :class:`PointSet`;
    ``target_design`` is the (m, q) mean design at the targets.
    """
    names = fit.spec.covariate_names
    pts = as_pointset(targets, names) if not isinstance(targets, PointSet) else targets
    return Kriger(fit, data).predict(pts, target_design)


def predict_grid(fit: FitResult, data: ObservationSet, grid: DataTable,
                 batch_size: int = 1000, threads: Optional[int] = 1) -> PredictionResult:
    """Krige every row of ``grid`` in batches; output follows grid row order."""
    config = fit.config
    names = config.cov_covariate_names
    if len(grid) == 0:
        return PredictionResult.empty(names)
    for col in config.mean_covariate_names + names:
        grid.column(col)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    kr = Kriger(fit, data)
    pts = grid.points(config)
    design = grid.design(config)
    slices = [slice(i, min(i + batch_size, len(grid))) for i in range(0, len(grid), batch_size)]
    job = lambda s: kr.predict(pts.take(s), design[s])  # noqa: E731
    if threads and threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, slices))
    else:
        parts = [job(s) for s in slices]
    return PredictionResult.concat(parts)
