"""Matérn correlations and the covariate-driven covariance constructions.

Four constructions are supported, each over a 2-D location plus ``p``
covariate kernels that consume absolute covariate differences:

=============  ==================================================  ==========
form           covariance                                          variance
=============  ==================================================  ==========
stationary     s2 * r_x                                            s2
product        s2 * r_x * prod_j r_j                               s2
partial_sum    s2 * r_x * sum_j r_j                                p * s2
full_sum       s2 * (r_x + sum_j r_j)                              (p+1) * s2
=============  ==================================================  ==========

Every function here is pure; kernel objects are frozen dataclasses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.special import gamma, kv

__all__ = [
    "Form",
    "MaternKernel",
    "CovarianceSpec",
    "InputPoint",
    "PointSet",
    "SchemaError",
    "matern_correlation",
    "matern_correlation_bessel",
    "matern_dlogphi",
    "pair_covariance",
    "covariance_matrix",
    "cross_covariance",
    "DistanceSet",
    "covariance_from_distances",
]

CLOSED_FORM_KAPPAS = (0.5, 1.5, 2.5)
_ZERO_DISTANCE = 1e-15
EARTH_RADIUS_KM = 6371.0088


class SchemaError(ValueError):
    """A point or table does not carry the covariates a model needs."""


class Form(str, Enum):
    STATIONARY = "stationary"
    PRODUCT = "product"
    PARTIAL_SUM = "partial_sum"
    FULL_SUM = "full_sum"

    @classmethod
    def parse(cls, value: Union[str, "Form"]) -> "Form":
        if isinstance(value, Form):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"model1": "product", "model_1": "product",
                   "model2": "partial_sum", "model_2": "partial_sum",
                   "model3": "full_sum", "model_3": "full_sum"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class MaternKernel:
    """Matérn correlation with scale ``phi`` and smoothness ``kappa``.

    The argument of the Bessel form is ``sqrt(2 * kappa) * u / phi`` so that
    kappa = 1.5 gives ``(1 + sqrt(3) u / phi) exp(-sqrt(3) u / phi)``.
    """

    phi: float
    kappa: float = 1.5

    def __post_init__(self):
        if not (np.isfinite(self.phi) and self.phi > 0):
            raise ValueError(f"phi must be positive and finite, got {self.phi!r}")
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError(f"kappa must be positive and finite, got {self.kappa!r}")

    def __call__(self, u):
        return matern_correlation(u, self)

    def with_phi(self, phi: float) -> "MaternKernel":
        return replace(self, phi=float(phi))


def _check_distance(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("distance must be finite")
    if np.any(u < 0):
        raise ValueError("distance must be non-negative")
    return np.where(u < _ZERO_DISTANCE, 0.0, u)


def _closed_form(kappa: float) -> bool:
    return any(kappa == k for k in CLOSED_FORM_KAPPAS)


def matern_correlation_bessel(u, kernel: MaternKernel):
    """Matérn correlation through the modified Bessel function K_kappa."""
    u = _check_distance(u)
    kappa = float(kernel.kappa)
    s = math.sqrt(2.0 * kappa) * u / kernel.phi
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        out = (2.0 ** (1.0 - kappa) / gamma(kappa)) * s**kappa * kv(kappa, s)
    # 0 * inf at s = 0 (removable singularity) and underflow far out
    out = np.where(s == 0.0, 1.0, out)
    out = np.where(np.isfinite(out), out, 0.0)
    return out[()] if out.ndim == 0 else out


def matern_correlation(u, kernel: MaternKernel):
    """Evaluate the Matérn correlation ``rho(u)`` (scalar or array ``u``).

    Closed forms are used for kappa in {0.5, 1.5, 2.5}; other smoothness
    values go through :func:`matern_correlation_bessel`.

    Raises
    ------
    ValueError
        If any distance is negative or not finite.
    """
    kappa = float(kernel.kappa)
    if not _closed_form(kappa):
        return matern_correlation_bessel(u, kernel)
    u = _check_distance(u)
    a = math.sqrt(2.0 * kappa) * u / kernel.phi
    e = np.exp(-a)
    if kappa == 0.5:
        out = e
    elif kappa == 1.5:
        out = (1.0 + a) * e
    else:
        out = (1.0 + a + a * a / 3.0) * e
    return out[()] if np.ndim(out) == 0 else out


def matern_dlogphi(u, kernel: MaternKernel):
    """Derivative of the correlation with respect to ``log(phi)``."""
    u = _check_distance(u)
    kappa = float(kernel.kappa)
    a = math.sqrt(2.0 * kappa) * u / kernel.phi
    e = np.exp(-a)
    if kappa == 0.5:
        out = a * e
    elif kappa == 1.5:
        out = a * a * e
    elif kappa == 2.5:
        out = a * a * (1.0 + a) * e / 3.0
    else:
        with np.errstate(invalid="ignore", over="ignore", under="ignore"):
            out = (2.0 ** (1.0 - kappa) / gamma(kappa)) * a ** (kappa + 1.0) * kv(kappa - 1.0, a)
        out = np.where(a == 0.0, 0.0, out)
        out = np.where(np.isfinite(out), out, 0.0)
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CovarianceSpec:
    """Declarative description of one covariance construction.

    ``covariate_kernels`` is an ordered tuple of ``(name, MaternKernel)``;
    its order fixes the order of the covariate scale parameters.
    ``distance`` selects planar Euclidean distance or great-circle distance
    (km) between (lon, lat) pairs given in degrees.
    """

    form: Form
    spatial_kernel: MaternKernel
    covariate_kernels: tuple = ()
    sigma2: float = 1.0
    distance: str = "euclidean"

    def __post_init__(self):
        object.__setattr__(self, "form", Form.parse(self.form))
        kernels = tuple((str(n), k) for n, k in self.covariate_kernels)
        object.__setattr__(self, "covariate_kernels", kernels)
        if self.form is Form.STATIONARY and kernels:
            raise ValueError("stationary covariance takes no covariate kernels")
        if self.form is not Form.STATIONARY and not kernels:
            raise ValueError(f"{self.form.value} covariance needs at least one covariate kernel")
        names = [n for n, _ in kernels]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate covariate kernel names: {names}")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")
        if self.distance not in ("euclidean", "great_circle"):
            raise ValueError(f"unknown distance {self.distance!r}")

    @property
    def p(self) -> int:
        return len(self.covariate_kernels)

    @property
    def covariate_names(self) -> tuple:
        return tuple(n for n, _ in self.covariate_kernels)

    @property
    def kernels(self) -> tuple:
        """Spatial kernel followed by covariate kernels."""
        return (self.spatial_kernel,) + tuple(k for _, k in self.covariate_kernels)

    @property
    def phis(self) -> np.ndarray:
        return np.array([k.phi for k in self.kernels])

    @property
    def marginal_variance(self) -> float:
        return self.sigma2 * variance_multiplier(self.form, self.p)

    def with_params(self, sigma2: float, phis: Sequence[float]) -> "CovarianceSpec":
        phis = list(phis)
        if len(phis) != 1 + self.p:
            raise ValueError(f"expected {1 + self.p} scale parameters, got {len(phis)}")
        cov = tuple((n, k.with_phi(f)) for (n, k), f in zip(self.covariate_kernels, phis[1:]))
        return replace(self, sigma2=float(sigma2),
                       spatial_kernel=self.spatial_kernel.with_phi(phis[0]),
                       covariate_kernels=cov)


def variance_multiplier(form: Form, p: int) -> int:
    form = Form.parse(form)
    if form is Form.PARTIAL_SUM:
        return p
    if form is Form.FULL_SUM:
        return p + 1
    return 1


@dataclass(frozen=True)
class InputPoint:
    coords: tuple
    covariate_values: Mapping[str, float] = field(default_factory=dict)

    def value(self, name: str) -> float:
        try:
            return float(self.covariate_values[name])
        except KeyError:
            raise SchemaError(f"point is missing covariate {name!r}") from None


@dataclass(frozen=True)
class PointSet:
    """Array form of a list of input points: ``coords`` (n, 2), ``covariates`` (n, p)."""

    coords: np.ndarray
    covariates: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if coords.size == 0:
            coords = coords.reshape(0, 2)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(len(coords), -1) if cov.size else np.zeros((len(coords), 0))
        if coords.shape[1] != 2:
            raise ValueError(f"coords must have two columns, got shape {coords.shape}")
        if cov.shape[0] != coords.shape[0] or cov.shape[1] != len(self.names):
            raise SchemaError(
                f"covariate block {cov.shape} does not match {coords.shape[0]} points "
                f"and names {list(self.names)}")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return self.coords.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.covariates[:, self.names.index(name)]
        except ValueError:
            raise SchemaError(f"missing covariate column {name!r}") from None

    def select(self, names: Iterable[str]) -> "PointSet":
        names = tuple(names)
        cols = [self.column(n) for n in names]
        cov = np.column_stack(cols) if cols else np.zeros((len(self), 0))
        return PointSet(self.coords, cov, names)

    def take(self, index) -> "PointSet":
        return PointSet(self.coords[index], self.covariates[index], self.names)

    @classmethod
    def from_points(cls, points: Sequence[InputPoint], names: Sequence[str]) -> "PointSet":
        names = tuple(names)
        coords = np.array([np.asarray(pt.coords, dtype=float) for pt in points]).reshape(-1, 2)
        cov = np.array([[pt.value(n) for n in names] for pt in points], dtype=float)
        return cls(coords, cov.reshape(len(points), len(names)), names)

    def to_points(self) -> list:
        return [InputPoint(tuple(self.coords[i]),
                           {n: float(self.covariates[i, j]) for j, n in enumerate(self.names)})
                for i in range(len(self))]


def as_pointset(points, names: Sequence[str]) -> PointSet:
    if isinstance(points, PointSet):
        return points.select(names)
    return PointSet.from_points(list(points), names)


def spatial_distance(a: np.ndarray, b: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Pairwise distances between rows of ``a`` (m, 2) and ``b`` (n, 2)."""
    if metric == "euclidean":
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if metric == "great_circle":
        lon1, lat1 = np.radians(a[:, 0])[:, None], np.radians(a[:, 1])[:, None]
        lon2, lat2 = np.radians(b[:, 0])[None, :], np.radians(b[:, 1])[None, :]
        h = (np.sin((lat2 - lat1) / 2) ** 2
             + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
        return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    raise ValueError(f"unknown distance {metric!r}")


@dataclass(frozen=True)
class DistanceSet:
    """Spatial distances plus one absolute-difference matrix per covariate."""

    spatial: np.ndarray
    covariate: tuple

    @classmethod
    def between(cls, a: PointSet, b: PointSet, spec: CovarianceSpec) -> "DistanceSet":
        names = spec.covariate_names
        a, b = a.select(names), b.select(names)
        spatial = spatial_distance(a.coords, b.coords, spec.distance)
        cov = tuple(np.abs(a.covariates[:, j][:, None] - b.covariates[:, j][None, :])
                    for j in range(len(names)))
        if a is b or (a.coords.shape == b.coords.shape and np.array_equal(a.coords, b.coords)
                      and np.array_equal(a.covariates, b.covariates)):
            spatial = _symmetrize(spatial)
            cov = tuple(_symmetrize(c) for c in cov)
        return cls(spatial, cov)

    @property
    def matrices(self) -> tuple:
        return (self.spatial,) + self.covariate


def _symmetrize(m: np.ndarray) -> np.ndarray:
    upper = np.triu(m, 1)
    return upper + upper.T + np.diag(np.diag(m))


def correlation_blocks(dist: DistanceSet, spec: CovarianceSpec) -> list:
    return [matern_correlation(d, k) for d, k in zip(dist.matrices, spec.kernels)]


def combine(blocks: Sequence[np.ndarray], spec: CovarianceSpec) -> np.ndarray:
    """Combine per-kernel correlation blocks according to the spec's form."""
    spatial, rest = blocks[0], blocks[1:]
    form = spec.form
    if form is Form.STATIONARY:
        out = spatial.copy()
    elif form is Form.PRODUCT:
        out = spatial.copy()
        for r in rest:
            out *= r
    elif form is Form.PARTIAL_SUM:
        out = spatial * sum(rest)
    else:
        out = spatial + sum(rest)
    return spec.sigma2 * out


def covariance_from_distances(dist: DistanceSet, spec: CovarianceSpec) -> np.ndarray:
    return combine(correlation_blocks(dist, spec), spec)


def pair_covariance(a: InputPoint, b: InputPoint, spec: CovarianceSpec) -> float:
    """Covariance of the latent process between two input points."""
    u = float(np.linalg.norm(np.asarray(a.coords, float) - np.asarray(b.coords, float)))
    if spec.distance == "great_circle":
        u = float(spatial_distance(np.asarray([a.coords], float), np.asarray([b.coords], float),
                                   "great_circle")[0, 0])
    r_x = float(matern_correlation(u, spec.spatial_kernel))
    rs = [float(matern_correlation(abs(a.value(n) - b.value(n)), k))
          for n, k in spec.covariate_kernels]
    if spec.form is Form.STATIONARY:
        c = r_x
    elif spec.form is Form.PRODUCT:
        c = r_x * math.prod(rs)
    elif spec.form is Form.PARTIAL_SUM:
        c = r_x * sum(rs)
    else:
        c = r_x + sum(rs)
    return spec.sigma2 * c


def covariance_matrix(points, spec: CovarianceSpec, tau2: float = 0.0) -> np.ndarray:
    """Covariance matrix of the outcome at ``points``: process plus nugget.

    ``points`` is a list of :class:`InputPoint` or a :class:`PointSet`.
    The result is exactly symmetric.
    """
    if tau2 < 0:
        raise ValueError("tau2 must be non-negative")
    ps = as_pointset(points, spec.covariate_names)
    if len(ps) == 0:
        raise ValueError("need at least one point")
    sigma = covariance_from_distances(DistanceSet.between(ps, ps, spec), spec)
    sigma = _symmetrize(sigma)
    sigma[np.diag_indices_from(sigma)] += tau2
    return sigma


def cross_covariance(targets, sources, spec: CovarianceSpec) -> np.ndarray:
    """Process covariance between targets (rows) and sources (columns); no nugget."""
    t = as_pointset(targets, spec.covariate_names)
    s = as_pointset(sources, spec.covariate_names)
    if len(t) == 0 or len(s) == 0:
        return np.zeros((len(t), len(s)))
    return covariance_from_distances(DistanceSet.between(t, s, spec), spec)
