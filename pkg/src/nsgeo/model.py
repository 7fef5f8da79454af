"""Data containers, the parameter vector and its unconstrained layout.

Parameter ordering is fixed everywhere::

    beta_0 .. beta_{q-1}, sigma2, phi_spatial, phi_<cov_1> .. phi_<cov_p>, tau2

Positive parameters live on the log scale in optimizer space; ``beta`` is
passed through unchanged. A zero nugget maps to ``log(TAU2_FLOOR)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .kernels import CovarianceSpec, Form, MaternKernel, PointSet, SchemaError

TAU2_FLOOR = 1e-10


class LayoutError(ValueError):
    """Vector length does not match the model's parameter layout."""


@dataclass(frozen=True)
class ObservationSet:
    """Observed outcomes with locations, mean design and covariance covariates.

    ``design`` includes the intercept column. ``cov_covariates`` columns are
    named by ``cov_names``; ``design_names`` labels the design columns.
    """

    coords: np.ndarray
    design: np.ndarray
    cov_covariates: np.ndarray
    outcome: np.ndarray
    cov_names: tuple = ()
    design_names: tuple = ()

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        y = np.asarray(self.outcome, dtype=float).reshape(-1)
        n = y.shape[0]
        design = np.asarray(self.design, dtype=float)
        if design.ndim == 1:
            design = design.reshape(n, -1)
        cov = np.asarray(self.cov_covariates, dtype=float)
        if cov.size == 0:
            cov = np.zeros((n, 0))
        elif cov.ndim == 1:
            cov = cov.reshape(n, -1)
        if n < 1:
            raise ValueError("observation set needs at least one row")
        if coords.shape != (n, 2):
            raise ValueError(f"coords must be ({n}, 2), got {coords.shape}")
        if design.shape[0] != n or cov.shape[0] != n:
            raise ValueError(
                f"row counts differ: outcome {n}, design {design.shape[0]}, covariates {cov.shape[0]}")
        for label, arr in (("coords", coords), ("design", design),
                           ("cov_covariates", cov), ("outcome", y)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{label} contains non-finite values")
        cov_names = tuple(self.cov_names)
        if len(cov_names) != cov.shape[1]:
            raise SchemaError(f"{cov.shape[1]} covariate columns but names {list(cov_names)}")
        design_names = tuple(self.design_names) or tuple(f"x{j}" for j in range(design.shape[1]))
        if len(design_names) != design.shape[1]:
            raise SchemaError("design_names does not match the design matrix")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "cov_covariates", cov)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "cov_names", cov_names)
        object.__setattr__(self, "design_names", design_names)

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def q(self) -> int:
        return self.design.shape[1]

    @property
    def points(self) -> PointSet:
        return PointSet(self.coords, self.cov_covariates, self.cov_names)

    def take(self, index) -> "ObservationSet":
        return replace(self, coords=self.coords[index], design=self.design[index],
                       cov_covariates=self.cov_covariates[index], outcome=self.outcome[index])


@dataclass(frozen=True)
class ParameterVector:
    beta: np.ndarray
    sigma2: float
    phis: np.ndarray
    tau2: float = 0.0

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        phis = np.atleast_1d(np.asarray(self.phis, dtype=float))
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")
        if phis.size < 1 or not np.all(np.isfinite(phis)) or np.any(phis <= 0):
            raise ValueError(f"phis must be positive, got {phis}")
        if not (np.isfinite(self.tau2) and self.tau2 >= 0):
            raise ValueError(f"tau2 must be non-negative, got {self.tau2!r}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "tau2", float(self.tau2))

    @property
    def q(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.phis.shape[0] - 1

    def as_array(self) -> np.ndarray:
        """Natural-scale values in layout order."""
        return np.concatenate([self.beta, [self.sigma2], self.phis, [self.tau2]])

    def to_dict(self) -> dict:
        return {"beta": [float(b) for b in self.beta], "sigma2": self.sigma2,
                "phis": [float(f) for f in self.phis], "tau2": self.tau2}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParameterVector":
        return cls(np.array(d["beta"], dtype=float), float(d["sigma2"]),
                   np.array(d["phis"], dtype=float), float(d["tau2"]))

    def __eq__(self, other):
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return (np.array_equal(self.beta, other.beta) and self.sigma2 == other.sigma2
                and np.array_equal(self.phis, other.phis) and self.tau2 == other.tau2)

    __hash__ = None


def to_unconstrained(theta: ParameterVector, tau2_floor: float = TAU2_FLOOR) -> np.ndarray:
    """Map parameters to optimizer space: identity for beta, log elsewhere."""
    tau2 = max(theta.tau2, tau2_floor)
    return np.concatenate([theta.beta, [np.log(theta.sigma2)], np.log(theta.phis), [np.log(tau2)]])


def from_unconstrained(v, layout) -> ParameterVector:
    """Inverse of :func:`to_unconstrained`.

    ``layout`` is anything with ``q`` and ``p`` attributes (a
    :class:`ModelConfig` or :class:`ParameterLayout`).
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    q, p = layout.q, layout.p
    if v.shape[0] != q + 3 + p:
        raise LayoutError(f"expected {q + 3 + p} values (q={q}, p={p}), got {v.shape[0]}")
    return ParameterVector(v[:q].copy(), float(np.exp(v[q])), np.exp(v[q + 1:q + 2 + p]),
                           float(np.exp(v[q + 2 + p])))


@dataclass(frozen=True)
class ParameterLayout:
    q: int
    p: int

    @property
    def size(self) -> int:
        return self.q + 3 + self.p


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``fixed`` maps parameter labels (``sigma2``, ``tau2``, ``phi_spatial``,
    ``phi_<name>``, ``beta_<j>``) to values held constant during fitting.
    ``gradient`` is ``"numeric"`` (central differences of the log-likelihood)
    or ``"analytic"``.
    """

    restarts: int = 5
    seed: int = 0
    grad_tol: float = 1e-2
    rel_tol: float = 1e-12
    max_iter: int = 500
    jitter_sd: float = 0.25
    fixed: Mapping[str, float] = field(default_factory=dict)
    gradient: str = "numeric"
    profile_beta: bool = True
    log_scale_ci: bool = True
    level: float = 0.95

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.gradient not in ("numeric", "analytic"):
            raise ValueError(f"gradient must be 'numeric' or 'analytic', got {self.gradient!r}")
        object.__setattr__(self, "fixed", dict(self.fixed))

    def to_dict(self) -> dict:
        return {"restarts": self.restarts, "seed": self.seed, "grad_tol": self.grad_tol,
                "rel_tol": self.rel_tol, "max_iter": self.max_iter, "jitter_sd": self.jitter_sd,
                "fixed": dict(self.fixed), "gradient": self.gradient,
                "profile_beta": self.profile_beta, "log_scale_ci": self.log_scale_ci,
                "level": self.level}


@dataclass(frozen=True)
class ModelConfig:
    """Which covariates go where, the covariance construction, and fit options.

    ``spec`` carries the form, the kappa of every kernel and the covariate
    kernel order; its sigma2/phi values are placeholders. The design matrix
    is an intercept followed by ``mean_covariate_names``.
    """

    spec: CovarianceSpec
    mean_covariate_names: tuple = ()
    standardize: tuple = ()
    options: FitOptions = field(default_factory=FitOptions)
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "mean_covariate_names", tuple(self.mean_covariate_names))
        object.__setattr__(self, "standardize", tuple(self.standardize))
        unknown = set(self.standardize) - set(self.spec.covariate_names)
        if unknown:
            raise SchemaError(f"standardize names not used by the covariance: {sorted(unknown)}")
        if not self.label:
            object.__setattr__(self, "label", self.spec.form.value)

    @property
    def cov_covariate_names(self) -> tuple:
        return self.spec.covariate_names

    @property
    def q(self) -> int:
        return 1 + len(self.mean_covariate_names)

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def layout(self) -> ParameterLayout:
        return ParameterLayout(self.q, self.p)

    @property
    def parameter_names(self) -> list:
        return ([f"beta_{j}" for j in range(self.q)] + ["sigma2", "phi_spatial"]
                + [f"phi_{n}" for n in self.cov_covariate_names] + ["tau2"])

    @property
    def design_names(self) -> tuple:
        return ("intercept",) + self.mean_covariate_names

    def with_options(self, **changes) -> "ModelConfig":
        return replace(self, options=replace(self.options, **changes))

    def check_columns(self, available: Sequence[str]) -> None:
        have = set(available)
        for name in self.mean_covariate_names + self.cov_covariate_names:
            if name not in have:
                raise SchemaError(f"missing column {name!r}")


def build_config(form, cov_covariates: Sequence = (), mean_covariates: Sequence[str] = (),
                 spatial_kappa: float = 1.5, kappa: float = 1.5, distance: str = "euclidean",
                 options: Optional[FitOptions] = None, standardize: Sequence[str] = (),
                 label: str = "") -> ModelConfig:
    """Convenience constructor.

    ``cov_covariates`` holds names or ``(name, kappa)`` pairs; bare names get
    the default ``kappa``.
    """
    form = Form.parse(form)
    kernels = []
    for item in cov_covariates:
        name, k = (item, kappa) if isinstance(item, str) else item
        kernels.append((name, MaternKernel(1.0, float(k))))
    spec = CovarianceSpec(form, MaternKernel(1.0, float(spatial_kappa)), tuple(kernels),
                          1.0, distance)
    return ModelConfig(spec, tuple(mean_covariates), tuple(standardize),
                       options or FitOptions(), label)


@dataclass(frozen=True)
class CovariateScaling:
    """Per-covariate centre and scale applied before covariance distances."""

    names: tuple
    center: tuple
    scale: tuple

    @classmethod
    def identity(cls, names: Sequence[str]) -> "CovariateScaling":
        names = tuple(names)
        return cls(names, (0.0,) * len(names), (1.0,) * len(names))

    @classmethod
    def from_data(cls, data: ObservationSet, config: ModelConfig) -> "CovariateScaling":
        names = config.cov_covariate_names
        centers, scales = [], []
        for name in names:
            if name in config.standardize:
                col = data.points.column(name)
                sd = float(np.std(col, ddof=1)) if col.size > 1 else 0.0
                centers.append(float(np.mean(col)))
                scales.append(sd if sd > 0 else 1.0)
            else:
                centers.append(0.0)
                scales.append(1.0)
        return cls(tuple(names), tuple(centers), tuple(scales))

    def apply(self, points: PointSet) -> PointSet:
        ps = points.select(self.names)
        if not ps.covariates.size:
            return ps
        cov = (ps.covariates - np.asarray(self.center)) / np.asarray(self.scale)
        return PointSet(ps.coords, cov, ps.names)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "center": list(self.center), "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CovariateScaling":
        return cls(tuple(d["names"]), tuple(float(c) for c in d["center"]),
                   tuple(float(s) for s in d["scale"]))


@dataclass(frozen=True)
class DataTable:
    """Coordinates plus named numeric columns, with an optional outcome.

    This is the shape both observation files and prediction grids take
    before a :class:`ModelConfig` decides which columns go where.
    """

    coords: np.ndarray
    columns: Mapping[str, np.ndarray]
    outcome: Optional[np.ndarray] = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        cols = {str(k): np.asarray(v, dtype=float).reshape(-1) for k, v in self.columns.items()}
        for name, col in cols.items():
            if col.shape[0] != coords.shape[0]:
                raise ValueError(f"column {name!r} has {col.shape[0]} rows, expected {coords.shape[0]}")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "columns", cols)
        if self.outcome is not None:
            y = np.asarray(self.outcome, dtype=float).reshape(-1)
            if y.shape[0] != coords.shape[0]:
                raise ValueError("outcome length does not match coordinates")
            object.__setattr__(self, "outcome", y)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"missing column {name!r}") from None

    def design(self, config: ModelConfig) -> np.ndarray:
        cols = [np.ones(len(self))] + [self.column(n) for n in config.mean_covariate_names]
        return np.column_stack(cols)

    def points(self, config: ModelConfig) -> PointSet:
        names = config.cov_covariate_names
        cols = [self.column(n) for n in names]
        cov = np.column_stack(cols) if cols else np.zeros((len(self), 0))
        return PointSet(self.coords, cov, names)

    def to_observations(self, config: ModelConfig) -> ObservationSet:
        if self.outcome is None:
            raise SchemaError("table has no outcome column")
        config.check_columns(self.columns)
        pts = self.points(config)
        return ObservationSet(self.coords, self.design(config), pts.covariates, self.outcome,
                              pts.names, config.design_names)

    def take(self, index) -> "DataTable":
        return DataTable(self.coords[index], {k: v[index] for k, v in self.columns.items()},
                         None if self.outcome is None else self.outcome[index])
