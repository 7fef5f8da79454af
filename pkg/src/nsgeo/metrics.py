"""Monte-Carlo evaluation metrics for estimates and predictions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def percent_relative_bias(estimates, truth: float) -> float:
    """Mean of ``(estimate - truth) / truth``, in percent."""
    if truth == 0:
        raise ValueError("percentage relative bias is undefined for a zero true value")
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        return float("nan")
    return float(np.mean((est - truth) / truth) * 100.0)


def parameter_coverage(intervals, truth: float) -> float:
    """Fraction of closed intervals ``[lower, upper]`` that contain ``truth``."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if iv.shape[0] == 0:
        return float("nan")
    if np.any(iv[:, 0] > iv[:, 1]):
        raise ValueError("interval with lower > upper")
    return float(np.mean((iv[:, 0] <= truth) & (truth <= iv[:, 1])))


def prediction_metrics(predicted, observed, lower, upper):
    """Return ``(bias, rmse, cp)`` pooled over all points and replicates.

    RMSE is the square root of the mean squared error.
    """
    pred = np.asarray(predicted, dtype=float).ravel()
    obs = np.asarray(observed, dtype=float).ravel()
    lo = np.asarray(lower, dtype=float).ravel()
    hi = np.asarray(upper, dtype=float).ravel()
    if pred.size == 0:
        raise ValueError("prediction metrics need at least one pair")
    if not (pred.size == obs.size == lo.size == hi.size):
        raise ValueError("predicted, observed and interval arrays differ in length")
    err = pred - obs
    bias = float(np.mean(err))
    rmse = float(np.sqrt(np.mean(err * err)))
    cp = float(np.mean((lo <= obs) & (obs <= hi)))
    return bias, rmse, cp


@dataclass
class StudyReport:
    """Per-cell tables of a simulation study.

    ``parameter_rows`` holds one dict per (scenario, model, parameter) with
    keys scenario, model, parameter, truth, prb, cp, n_used, n_ci; the
    ``prediction_rows`` hold one dict per (scenario, model) with bias,
    rmse, cp, n_used. ``failures`` maps ``(scenario, model)`` to the number
    of replicates excluded for non-convergence or errors.
    """

    parameter_rows: list = field(default_factory=list)
    prediction_rows: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    replicates: dict = field(default_factory=dict)

    def parameter(self, scenario: str, model: str, parameter: str) -> dict:
        for row in self.parameter_rows:
            if (row["scenario"], row["model"], row["parameter"]) == (scenario, model, parameter):
                return row
        raise KeyError((scenario, model, parameter))

    def prediction(self, scenario: str, model: str) -> dict:
        for row in self.prediction_rows:
            if (row["scenario"], row["model"]) == (scenario, model):
                return row
        raise KeyError((scenario, model))
