"""CSV ingestion, JSON configuration and report emission.

Observation files are RFC-4180 CSV (UTF-8, ``.`` decimal separator) with a
header containing ``lon``, ``lat``, the outcome (``y_elogit`` or another
configured column, or ``positive`` and ``examined`` counts) and any number
of covariate columns. Grid files have the same layout without the outcome.
Floats are written with 17 significant digits so that a write/read cycle
returns identical values.
"""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .kernels import CovarianceSpec, Form, MaternKernel, SchemaError
from .likelihood import FitResult
from .metrics import StudyReport
from .model import (CovariateScaling, DataTable, FitOptions, ModelConfig, ObservationSet,
                    ParameterVector)

SCHEMA = "nonstat-geo/v1"
FLOAT_FMT = "%.17g"
COORD_COLUMNS = ("lon", "lat")
COUNT_COLUMNS = ("positive", "examined")
DEFAULT_OUTCOME = "y_elogit"


class ConfigError(ValueError):
    """Configuration document is invalid."""


class DataError(ValueError):
    """Input table is malformed."""


def empirical_logit(positive, examined):
    """``log((positive + 0.5) / (examined - positive + 0.5))``."""
    pos = np.asarray(positive, dtype=float)
    ex = np.asarray(examined, dtype=float)
    if np.any(ex < 1) or np.any(pos < 0) or np.any(pos > ex):
        raise ValueError("empirical logit needs 0 <= positive <= examined and examined >= 1")
    out = np.log((pos + 0.5) / (ex - pos + 0.5))
    return float(out) if out.ndim == 0 else out


# -- configuration -------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CovariateKernelDoc(_Strict):
    name: str
    kappa: float = Field(1.5, gt=0)
    standardize: bool = False


class ModelDoc(_Strict):
    form: Literal["stationary", "product", "partial_sum", "full_sum"]
    spatial_kappa: float = Field(1.5, gt=0)
    mean_covariates: List[str] = []
    cov_covariates: List[CovariateKernelDoc] = []
    distance: Literal["euclidean", "great_circle"] = "euclidean"

    @field_validator("form", mode="before")
    @classmethod
    def _form(cls, v):
        return Form.parse(v).value


class FitDoc(_Strict):
    restarts: int = Field(5, ge=1)
    seed: int = 0
    grad_tol: float = Field(1e-2, gt=0)
    rel_tol: float = Field(1e-12, gt=0)
    max_iter: int = Field(500, ge=1)
    jitter_sd: float = Field(0.25, ge=0)
    fixed: Dict[str, float] = {}
    gradient: Literal["numeric", "analytic"] = "numeric"
    profile_beta: bool = True
    log_scale_ci: bool = True
    level: float = Field(0.95, gt=0, lt=1)


class DataDoc(_Strict):
    outcome: Optional[str] = None
    path: Optional[str] = None
    grid: Optional[str] = None


class RunDoc(_Strict):
    """Config-file equivalents of the CLI run flags; flags take precedence."""
    out: Optional[str] = None
    threads: Optional[int] = Field(None, ge=1)
    verbose: int = Field(0, ge=0)
    fit_path: Optional[str] = None


class PredictDoc(_Strict):
    batch_size: int = Field(1000, ge=1)


class ScenarioDoc(_Strict):
    name: str
    form: Literal["stationary", "product", "partial_sum", "full_sum"]
    beta: List[float] = [1.0, 0.5, -0.5]
    sigma2: float = Field(0.5, gt=0)
    phis: List[float] = [0.3, 0.2, 0.1]
    tau2: float = Field(0.0, ge=0)
    kappa: float = Field(1.5, gt=0)
    covariates: List[str] = ["e", "t"]
    n: Optional[int] = Field(None, ge=1)
    B: Optional[int] = Field(None, ge=1)
    heldout_m: Optional[int] = Field(None, ge=0)
    fit_tau2: Optional[bool] = None

    @field_validator("form", mode="before")
    @classmethod
    def _form(cls, v):
        return Form.parse(v).value


class StudyDoc(_Strict):
    master_seed: int = 20240
    n: int = Field(200, ge=1)
    B: int = Field(100, ge=1)
    heldout_m: int = Field(50, ge=0)
    fit_forms: List[str] = ["product", "partial_sum", "full_sum"]
    prediction_mode: Literal["heldout", "in_sample"] = "heldout"
    fit: FitDoc = FitDoc(restarts=2, gradient="analytic")
    scenarios: List[ScenarioDoc]

    @field_validator("fit_forms")
    @classmethod
    def _forms(cls, v):
        return [Form.parse(f).value for f in v]


class ConfigDoc(_Strict):
    schema_: Literal["nonstat-geo/v1"] = Field(SCHEMA, alias="schema")
    label: str = ""
    data: DataDoc = DataDoc()
    model: Optional[ModelDoc] = None
    fit: FitDoc = FitDoc()
    predict: PredictDoc = PredictDoc()
    study: Optional[StudyDoc] = None
    run: RunDoc = RunDoc()

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    def resolved(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def parse_config(doc: Union[dict, str, Path]) -> ConfigDoc:
    """Validate a config document (dict, JSON text or path)."""
    if isinstance(doc, Path) or (isinstance(doc, str) and not doc.lstrip().startswith("{")):
        try:
            doc = json.loads(Path(doc).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    elif isinstance(doc, str):
        doc = json.loads(doc)
    try:
        return ConfigDoc.model_validate(doc)
    except Exception as exc:
        raise ConfigError(str(exc)) from None


def fit_options(doc: FitDoc) -> FitOptions:
    return FitOptions(**doc.model_dump())


def model_config(cfg: ConfigDoc) -> ModelConfig:
    if cfg.model is None:
        raise ConfigError("config has no 'model' section")
    m = cfg.model
    kernels = tuple((k.name, MaternKernel(1.0, k.kappa)) for k in m.cov_covariates)
    try:
        spec = CovarianceSpec(m.form, MaternKernel(1.0, m.spatial_kappa), kernels, 1.0, m.distance)
        return ModelConfig(spec, tuple(m.mean_covariates),
                           tuple(k.name for k in m.cov_covariates if k.standardize),
                           fit_options(cfg.fit), cfg.label or m.form)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def model_config_to_dict(config: ModelConfig) -> dict:
    spec = config.spec
    return {
        "label": config.label,
        "form": spec.form.value,
        "spatial_kappa": spec.spatial_kernel.kappa,
        "mean_covariates": list(config.mean_covariate_names),
        "cov_covariates": [{"name": n, "kappa": k.kappa, "standardize": n in config.standardize}
                           for n, k in spec.covariate_kernels],
        "distance": spec.distance,
        "fit": config.options.to_dict(),
    }


def model_config_from_dict(d: dict) -> ModelConfig:
    doc = ConfigDoc(label=d.get("label", ""), fit=FitDoc(**d["fit"]),
                    model=ModelDoc(form=d["form"], spatial_kappa=d["spatial_kappa"],
                                   mean_covariates=d["mean_covariates"],
                                   cov_covariates=d["cov_covariates"], distance=d["distance"]))
    return model_config(doc)


def scenario_configs(cfg: ConfigDoc, seed: Optional[int] = None) -> list:
    """Build :class:`ScenarioConfig` objects from a study section."""
    from .simulate import ScenarioConfig

    if cfg.study is None:
        raise ConfigError("config has no 'study' section")
    st = cfg.study
    out = []
    for i, sc in enumerate(st.scenarios):
        kernels = () if sc.form == "stationary" else tuple(
            (n, MaternKernel(1.0, sc.kappa)) for n in sc.covariates)
        try:
            spec = CovarianceSpec(sc.form, MaternKernel(1.0, sc.kappa), kernels)
            theta = ParameterVector(sc.beta, sc.sigma2, sc.phis[:1 + len(kernels)], sc.tau2)
            out.append(ScenarioConfig(
                sc.name, spec, theta, n=sc.n or st.n, B=sc.B or st.B,
                master_seed=st.master_seed if seed is None else seed,
                heldout_m=st.heldout_m if sc.heldout_m is None else sc.heldout_m, index=i,
                covariate_names=tuple(sc.covariates), fit_options=fit_options(st.fit),
                fit_tau2=sc.fit_tau2, prediction_mode=st.prediction_mode))
        except ValueError as exc:
            raise ConfigError(f"scenario {sc.name!r}: {exc}") from None
    return out


# -- tables --------------------------------------------------------------------

def _parse_float(text: str, row: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {row}: column {col!r} is not a number: {text!r}") from None
    return v


def read_table(path, outcome: Optional[str] = None, require_outcome: bool = False,
               required: tuple = ()) -> DataTable:
    """Read a CSV into a :class:`DataTable`.

    The outcome is taken from ``outcome`` if given, else ``y_elogit`` if
    present, else the empirical logit of ``positive``/``examined``.
    Required columns are checked before any row is parsed; a row with a
    missing or non-numeric required value raises with its 1-based data-row
    number (header is row 0). Other columns are loaded when every row is
    numeric and ignored otherwise.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = list(reader)
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise DataError(f"duplicate column names: {dupes}")
    for c in COORD_COLUMNS:
        if c not in header:
            raise SchemaError(f"missing column {c!r}")
    if outcome is None:
        if DEFAULT_OUTCOME in header:
            outcome = DEFAULT_OUTCOME
        elif all(c in header for c in COUNT_COLUMNS):
            outcome = "__counts__"
    elif outcome not in header:
        raise SchemaError(f"missing column {outcome!r}")
    if require_outcome and outcome is None:
        raise SchemaError(f"missing outcome: need {DEFAULT_OUTCOME!r} or 'positive' and 'examined'")
    for c in required:
        if c not in header:
            raise SchemaError(f"missing column {c!r}")

    must = set(COORD_COLUMNS) | set(required)
    if outcome == "__counts__":
        must |= set(COUNT_COLUMNS)
    elif outcome is not None:
        must.add(outcome)
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    n = len(rows)
    values: Dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        col = np.empty(n)
        ok = True
        for i, r in enumerate(rows):
            cell = r[j].strip() if j < len(r) else ""
            if cell == "" or cell.upper() == "NA":
                if name in must:
                    raise DataError(f"row {i + 1}: missing value in required column {name!r}")
                ok = False
                break
            try:
                col[i] = float(cell)
            except ValueError:
                if name in must:
                    raise DataError(f"row {i + 1}: column {name!r} is not a number: {cell!r}") from None
                ok = False
                break
            if name in must and not math.isfinite(col[i]):
                raise DataError(f"row {i + 1}: non-finite value in column {name!r}")
        if ok:
            values[name] = col
    coords = np.column_stack([values["lon"], values["lat"]]) if n else np.zeros((0, 2))
    y = None
    if outcome == "__counts__":
        pos, ex = values["positive"], values["examined"]
        for i in range(n):
            if not (ex[i] >= 1 and 0 <= pos[i] <= ex[i]):
                raise DataError(f"row {i + 1}: need 0 <= positive <= examined and examined >= 1")
        y = empirical_logit(pos, ex) if n else np.zeros(0)
    elif outcome is not None:
        y = values[outcome]
    cols = {k: v for k, v in values.items() if k not in COORD_COLUMNS}
    return DataTable(coords, cols, y)


def load_observations(path, config: ModelConfig, outcome: Optional[str] = None) -> ObservationSet:
    """Read an observation CSV and assemble the design and covariance covariates."""
    needed = config.mean_covariate_names + config.cov_covariate_names
    table = read_table(path, outcome=outcome, require_outcome=True, required=needed)
    if len(table) == 0:
        raise DataError(f"{path} has no data rows")
    return table.to_observations(config)


def load_grid(path, config: ModelConfig) -> DataTable:
    needed = config.mean_covariate_names + config.cov_covariate_names
    return read_table(path, outcome=None, required=needed)


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return FLOAT_FMT % x


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def write_table(table: DataTable, path, outcome: str = "y") -> None:
    names = list(table.columns)
    header = ["lon", "lat"] + names + ([outcome] if table.outcome is not None else [])
    rows = []
    for i in range(len(table)):
        r = [float(table.coords[i, 0]), float(table.coords[i, 1])]
        r += [float(table.columns[n][i]) for n in names]
        if table.outcome is not None:
            r.append(float(table.outcome[i]))
        rows.append(r)
    _write_csv(path, header, rows)


PREDICTION_COLUMNS = ("lon", "lat", "mean", "sd_Y", "sd_S", "lower95", "upper95")


def write_predictions(pred, path) -> None:
    rows = [[float(pred.points.coords[i, 0]), float(pred.points.coords[i, 1]),
             float(pred.mean[i]), float(pred.sd_Y[i]), float(pred.sd_S[i]),
             float(pred.lower95[i]), float(pred.upper95[i])] for i in range(len(pred))]
    _write_csv(path, PREDICTION_COLUMNS, rows)


PARAMETER_COLUMNS = ("scenario", "model", "parameter", "truth", "prb", "cp", "n_used", "n_ci")
PREDICTION_TABLE_COLUMNS = ("scenario", "model", "bias", "rmse", "cp", "n_used", "n_failed")


def write_study(report: StudyReport, out_dir) -> tuple:
    """Write ``study_parameters.csv`` and ``study_prediction.csv``."""
    out_dir = Path(out_dir)
    p1, p2 = out_dir / "study_parameters.csv", out_dir / "study_prediction.csv"
    _write_csv(p1, PARAMETER_COLUMNS, [[r[c] for c in PARAMETER_COLUMNS] for r in report.parameter_rows])
    _write_csv(p2, PREDICTION_TABLE_COLUMNS,
               [[r[c] for c in PREDICTION_TABLE_COLUMNS] for r in report.prediction_rows])
    return p1, p2


def read_csv_rows(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- fit.json ------------------------------------------------------------------

def _num(x):
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _unnum(x):
    if x is None:
        return math.nan
    if isinstance(x, str):
        return float(x)
    return float(x)


def fit_to_dict(fit: FitResult, resolved_config: Optional[dict] = None) -> dict:
    est = fit.estimates
    params = [{"name": n, "estimate": _num(est[i]), "lower": _num(fit.ci_lower[i]),
               "upper": _num(fit.ci_upper[i]), "se_unconstrained": _num(fit.se[i]),
               "estimated": bool(fit.estimated[i]), "at_bound": bool(fit.at_bound[i])}
              for i, n in enumerate(fit.names)]
    return {
        "schema": SCHEMA,
        "label": fit.config.label,
        "seed": fit.config.options.seed,
        "parameters": params,
        "theta": fit.theta_hat.to_dict(),
        "loglik": _num(fit.loglik), "aic": _num(fit.aic), "bic": _num(fit.bic),
        "k": fit.k, "n": fit.n,
        "converged": fit.converged, "grad_inf": _num(fit.grad_inf), "n_evals": fit.n_evals,
        "restarts": fit.restarts, "best_restart": fit.best_restart, "message": fit.message,
        "restart_logliks": [_num(x) for x in fit.restart_logliks],
        "information_ok": fit.information_ok, "jitter": fit.jitter,
        "information": None if fit.information is None else [[_num(v) for v in row]
                                                            for row in fit.information],
        "scaling": fit.scaling.to_dict(),
        "model": model_config_to_dict(fit.config),
        "config": resolved_config,
    }


def fit_from_dict(d: dict) -> FitResult:
    config = model_config_from_dict(d["model"])
    params = d["parameters"]
    info = d.get("information")
    return FitResult(
        config=config, theta_hat=ParameterVector.from_dict(d["theta"]),
        names=[p["name"] for p in params], loglik=_unnum(d["loglik"]), aic=_unnum(d["aic"]),
        bic=_unnum(d["bic"]), k=int(d["k"]), n=int(d["n"]), converged=bool(d["converged"]),
        grad_inf=_unnum(d["grad_inf"]), n_evals=int(d["n_evals"]), restarts=int(d["restarts"]),
        best_restart=int(d["best_restart"]), message=d["message"],
        estimated=np.array([p["estimated"] for p in params], dtype=bool),
        at_bound=np.array([p["at_bound"] for p in params], dtype=bool),
        se=np.array([_unnum(p["se_unconstrained"]) for p in params]),
        ci_lower=np.array([_unnum(p["lower"]) for p in params]),
        ci_upper=np.array([_unnum(p["upper"]) for p in params]),
        information=None if info is None else (
            np.array([[_unnum(v) for v in r] for r in info], dtype=float)
            if info else np.zeros((0, 0))),
        information_ok=bool(d["information_ok"]),
        scaling=CovariateScaling.from_dict(d["scaling"]), jitter=float(d.get("jitter", 0.0)),
        restart_logliks=[_unnum(x) for x in d.get("restart_logliks", [])])


def write_json(obj, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def write_fit(fit: FitResult, path, resolved_config: Optional[dict] = None) -> None:
    write_json(fit_to_dict(fit, resolved_config), path)


def read_fit(path) -> FitResult:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read fit file {path}: {exc}") from None
    return fit_from_dict(d)
