"""Dataset generation and the Monte-Carlo study protocol.

Random streams
--------------
Replicate ``r`` of scenario ``s`` under master seed ``M`` draws from::

    numpy.random.Generator(numpy.random.Philox(
        numpy.random.SeedSequence(entropy=M, spawn_key=(s, r))))

Philox is counter-based and the SeedSequence hash makes the key a pure
function of ``(M, s, r)``, so replicates can run in any order or process.
Within a replicate the draws are, in order: ``(n+m, 2)`` uniform locations,
``(n+m, k)`` Unif[-1, 1] covariates, ``n+m`` standard normals for the
latent surface, ``n+m`` standard normals for the nugget. The first ``n``
rows are observed, the remaining ``m`` held out.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .kernels import CovarianceSpec, Form, MaternKernel, PointSet, covariance_matrix
from .likelihood import OptimizationError, SingularCovarianceError, cholesky_jittered, fit
from .metrics import StudyReport, parameter_coverage, percent_relative_bias, prediction_metrics
from .model import DataTable, FitOptions, ModelConfig, ObservationSet, ParameterVector
from .predict import Kriger

log = logging.getLogger(__name__)

REPLICA_THETA = {"beta": (1.0, 0.5, -0.5), "sigma2": 0.5, "phis": (0.3, 0.2, 0.1), "tau2": 0.0}


@dataclass(frozen=True)
class ScenarioConfig:
    """One data-generating scenario.

    The generator's covariate kernels name a subset of ``covariate_names``;
    every covariate also enters the mean, so ``theta_true.beta`` has
    ``1 + len(covariate_names)`` entries. ``fit_options`` apply to every
    model fitted in the study; when ``fit_tau2`` is False the nugget is held
    at its true value.
    """

    name: str
    generator: CovarianceSpec
    theta_true: ParameterVector
    n: int = 200
    B: int = 100
    master_seed: int = 0
    heldout_m: int = 50
    index: int = 0
    covariate_names: tuple = ("e", "t")
    fit_options: FitOptions = field(default_factory=lambda: FitOptions(restarts=2, gradient="analytic"))
    fit_tau2: Optional[bool] = None
    prediction_mode: str = "heldout"

    def __post_init__(self):
        if self.n < 1 or self.B < 1 or self.heldout_m < 0:
            raise ValueError("need n >= 1, B >= 1, heldout_m >= 0")
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        missing = set(self.generator.covariate_names) - set(self.covariate_names)
        if missing:
            raise ValueError(f"generator uses covariates not simulated: {sorted(missing)}")
        if self.theta_true.q != 1 + len(self.covariate_names):
            raise ValueError("theta_true.beta must have 1 + number of covariates entries")
        if self.theta_true.p != self.generator.p:
            raise ValueError("theta_true.phis does not match the generator's kernels")
        if self.prediction_mode not in ("heldout", "in_sample"):
            raise ValueError("prediction_mode must be 'heldout' or 'in_sample'")

    @property
    def true_spec(self) -> CovarianceSpec:
        return self.generator.with_params(self.theta_true.sigma2, self.theta_true.phis)

    @property
    def estimate_tau2(self) -> bool:
        return self.theta_true.tau2 > 0 if self.fit_tau2 is None else bool(self.fit_tau2)

    def truth(self) -> dict:
        th = self.theta_true
        out = {f"beta_{j}": float(b) for j, b in enumerate(th.beta)}
        out["sigma2"] = th.sigma2
        out["phi_spatial"] = float(th.phis[0])
        for name, phi in zip(self.generator.covariate_names, th.phis[1:]):
            out[f"phi_{name}"] = float(phi)
        out["tau2"] = th.tau2
        return out

    def model_config(self, form) -> ModelConfig:
        """Model of the given form over this scenario's covariates."""
        form = Form.parse(form)
        kappa = dict(self.generator.covariate_kernels)
        default_k = self.generator.spatial_kernel.kappa
        kernels = () if form is Form.STATIONARY else tuple(
            (n, MaternKernel(1.0, kappa[n].kappa if n in kappa else default_k))
            for n in self.covariate_names)
        spec = CovarianceSpec(form, MaternKernel(1.0, self.generator.spatial_kernel.kappa),
                              kernels, 1.0, self.generator.distance)
        opts = self.fit_options
        if not self.estimate_tau2:
            opts = replace(opts, fixed={**opts.fixed, "tau2": self.theta_true.tau2})
        return ModelConfig(spec, self.covariate_names, (), opts, form.value)


def replica_scenarios(n: int = 200, B: int = 100, heldout_m: int = 50, master_seed: int = 20240,
                    tau2: float = 0.0, fit_options: Optional[FitOptions] = None) -> list:
    """Scenarios 1-3: data from the product, partial-sum and full-sum models."""
    theta = ParameterVector(REPLICA_THETA["beta"], REPLICA_THETA["sigma2"], REPLICA_THETA["phis"], tau2)
    out = []
    for i, form in enumerate((Form.PRODUCT, Form.PARTIAL_SUM, Form.FULL_SUM)):
        spec = CovarianceSpec(form, MaternKernel(1.0, 1.5),
                              (("e", MaternKernel(1.0, 1.5)), ("t", MaternKernel(1.0, 1.5))))
        kw = {} if fit_options is None else {"fit_options": fit_options}
        out.append(ScenarioConfig(f"scenario_{i + 1}", spec, theta, n=n, B=B,
                                  master_seed=master_seed, heldout_m=heldout_m, index=i, **kw))
    return out


def replicate_rng(master_seed: int, scenario_index: int, replicate_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(int(scenario_index), int(replicate_id)))
    return np.random.Generator(np.random.Philox(ss))


def sample_tables(cfg: ScenarioConfig, replicate_id: int):
    """Draw one replicate; returns ``(observed, heldout)`` tables.

    Each table carries the covariates and a latent column ``s``.
    """
    rng = replicate_rng(cfg.master_seed, cfg.index, replicate_id)
    total = cfg.n + cfg.heldout_m
    names = cfg.covariate_names
    coords = rng.random((total, 2))
    cov = rng.uniform(-1.0, 1.0, size=(total, len(names)))
    z = rng.standard_normal(total)
    eps = rng.standard_normal(total)
    spec = cfg.true_spec
    pts = PointSet(coords, cov, names)
    sigma = covariance_matrix(pts, spec, 0.0)
    L, _ = cholesky_jittered(sigma, cfg.theta_true)
    s = L @ z
    design = np.column_stack([np.ones(total), cov])
    y = design @ cfg.theta_true.beta + s + math.sqrt(cfg.theta_true.tau2) * eps
    cols = {n: cov[:, j] for j, n in enumerate(names)}
    cols["s"] = s
    table = DataTable(coords, cols, y)
    return table.take(slice(0, cfg.n)), table.take(slice(cfg.n, total))


def sample_dataset(cfg: ScenarioConfig, replicate_id: int):
    """Draw one replicate as ``(observed, heldout)`` observation sets.

    The design is an intercept plus every simulated covariate; all
    covariates are carried as covariance covariates.
    """
    obs, held = sample_tables(cfg, replicate_id)
    cfg_all = ModelConfig(
        CovarianceSpec(Form.PRODUCT, MaternKernel(1.0),
                       tuple((n, MaternKernel(1.0)) for n in cfg.covariate_names))
        if cfg.covariate_names else CovarianceSpec(Form.STATIONARY, MaternKernel(1.0)),
        cfg.covariate_names)

    def as_obs(t: DataTable) -> ObservationSet:
        cov = np.column_stack([t.column(n) for n in cfg.covariate_names]) \
            if cfg.covariate_names else np.zeros((len(t), 0))
        return ObservationSet(t.coords, t.design(cfg_all), cov, t.outcome,
                              cfg.covariate_names, cfg_all.design_names)

    held_obs = as_obs(held) if len(held) else None
    return as_obs(obs), held_obs


@dataclass
class _FitOutcome:
    form: str
    status: str
    names: list = field(default_factory=list)
    estimates: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    estimated: Optional[np.ndarray] = None
    ci_ok: bool = False
    pred: Optional[np.ndarray] = None
    pred_lower: Optional[np.ndarray] = None
    pred_upper: Optional[np.ndarray] = None
    observed: Optional[np.ndarray] = None


def run_replicate(cfg: ScenarioConfig, replicate_id: int, fit_forms: Sequence) -> list:
    """Sample one dataset, fit every form, krige the evaluation set."""
    with threadpool_limits(limits=1):
        obs, held = sample_tables(cfg, replicate_id)
        target = obs if cfg.prediction_mode == "in_sample" or len(held) == 0 else held
        out = []
        for form in fit_forms:
            mc = cfg.model_config(form)
            label = mc.label
            try:
                data = obs.to_observations(mc)
                res = fit(data, mc)
            except (OptimizationError, SingularCovarianceError, ValueError) as exc:
                out.append(_FitOutcome(label, f"error: {exc}"))
                continue
            if not res.converged:
                out.append(_FitOutcome(label, "not converged"))
                continue
            try:
                pr = Kriger(res, data).predict(target.points(mc), target.design(mc))
            except SingularCovarianceError as exc:
                out.append(_FitOutcome(label, f"error: {exc}"))
                continue
            out.append(_FitOutcome(label, "ok", res.names, res.estimates, res.ci_lower,
                                   res.ci_upper, res.estimated, res.information_ok,
                                   pr.mean, pr.lower95, pr.upper95, target.outcome))
        return out


def _run_unit(args):
    cfg, rep, forms = args
    return run_replicate(cfg, rep, forms)


def run_study(scenarios: Sequence[ScenarioConfig], fit_forms: Sequence,
              threads: int = 1, progress: Optional[Callable[[str], None]] = None) -> StudyReport:
    """Run every scenario x fitted form x replicate and tabulate metrics.

    Non-converged or failed replicates are excluded from a cell's metrics
    and counted in ``report.failures``. Results do not depend on
    ``threads``.
    """
    if not scenarios or not fit_forms:
        raise ValueError("need at least one scenario and one fit form")
    forms = [Form.parse(f).value for f in fit_forms]
    report = StudyReport()
    pool = ProcessPoolExecutor(max_workers=threads) if threads and threads > 1 else None
    try:
        for cfg in scenarios:
            units = [(cfg, r, forms) for r in range(cfg.B)]
            if pool is None:
                per_rep = [_run_unit(u) for u in units]
            else:
                per_rep = list(pool.map(_run_unit, units))
            _aggregate(report, cfg, forms, per_rep)
            if progress:
                for form in forms:
                    fails = report.failures[(cfg.name, form)]
                    progress(f"{cfg.name} x {form}: {cfg.B - fails}/{cfg.B} replicates used")
    finally:
        if pool is not None:
            pool.shutdown()
    return report


def _aggregate(report: StudyReport, cfg: ScenarioConfig, forms: Sequence[str], per_rep: list):
    truth = cfg.truth()
    for k, form in enumerate(forms):
        outcomes = [rep[k] for rep in per_rep]
        used = [o for o in outcomes if o.status == "ok"]
        report.failures[(cfg.name, form)] = len(outcomes) - len(used)
        report.replicates[(cfg.name, form)] = len(outcomes)
        mc = cfg.model_config(form)
        for i, name in enumerate(mc.parameter_names):
            if name in mc.options.fixed or truth.get(name, 0.0) == 0.0:
                continue
            est = [o.estimates[i] for o in used]
            with_ci = [o for o in used if o.ci_ok]
            intervals = [(o.lower[i], o.upper[i]) for o in with_ci]
            report.parameter_rows.append({
                "scenario": cfg.name, "model": form, "parameter": name,
                "truth": truth[name],
                "prb": percent_relative_bias(est, truth[name]) if est else math.nan,
                "cp": parameter_coverage(intervals, truth[name]) if intervals else math.nan,
                "n_used": len(used), "n_ci": len(with_ci)})
        if used:
            bias, rmse, cp = prediction_metrics(
                np.concatenate([o.pred for o in used]), np.concatenate([o.observed for o in used]),
                np.concatenate([o.pred_lower for o in used]),
                np.concatenate([o.pred_upper for o in used]))
        else:
            bias = rmse = cp = math.nan
        report.prediction_rows.append({"scenario": cfg.name, "model": form, "bias": bias,
                                       "rmse": rmse, "cp": cp, "n_used": len(used),
                                       "n_failed": len(outcomes) - len(used)})
