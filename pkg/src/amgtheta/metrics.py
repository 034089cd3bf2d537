"""Nine-metric battery for scoring threshold predictions against sweeps.

Error metrics (MSE, RMSE, MAE, MdAPE), fit metrics (R², Pearson
correlation), interval coverage (PICP), complexity (BIC on the trained
marginal likelihood), and the closed-form leave-one-out squared
prediction error.  A metric whose definition fails on the given data
(zero denominator, too few points) is reported as absent rather than
aborting the whole report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from amgtheta.gpr import (
    GprModel,
    log_marginal_likelihood,
    trained_param_count,
)

__all__ = [
    "EvalPair",
    "MetricsReport",
    "bic",
    "error_metrics",
    "evaluate",
    "fit_metrics",
    "loo_spe",
    "metrics_table_csv",
    "picp",
    "picp_table_csv",
    "report_to_dict",
]

METRIC_COLUMNS = ("MSE", "RMSE", "MAE", "R2", "BIC", "Corr", "MdAPE", "LOO-SPE")


@dataclass(frozen=True)
class EvalPair:
    """One held-out comparison: sweep truth, posterior mean, posterior sd."""

    actual: float
    predicted: float
    pred_std: float = 0.0

    def __post_init__(self) -> None:
        if not self.pred_std >= 0.0:
            raise ValueError(f"pred_std must be nonnegative, got {self.pred_std}")


@dataclass(frozen=True)
class MetricsReport:
    """One table row; ``None`` marks a metric whose definition failed."""

    mse: float | None = None
    rmse: float | None = None
    mae: float | None = None
    r2: float | None = None
    corr: float | None = None
    mdape: float | None = None
    picp: float | None = None
    bic: float | None = None
    loo_spe: float | None = None


def _arrays(pairs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    actual = np.array([p.actual for p in pairs], dtype=np.float64)
    predicted = np.array([p.predicted for p in pairs], dtype=np.float64)
    std = np.array([p.pred_std for p in pairs], dtype=np.float64)
    return actual, predicted, std


def error_metrics(pairs) -> tuple[float, float, float, float | None]:
    """``(mse, rmse, mae, mdape)`` with compensated accumulation.

    MdAPE divides by the actual values, uses the lower median for even
    counts, and comes back ``None`` when any actual is zero; the other
    three are computed regardless.
    """
    if len(pairs) < 1:
        raise ValueError("error metrics need at least one pair")
    actual, predicted, _ = _arrays(pairs)
    n = actual.shape[0]
    resid = actual - predicted
    mse = math.fsum(float(r) * float(r) for r in resid) / n
    rmse = math.sqrt(mse)
    mae = math.fsum(abs(float(r)) for r in resid) / n
    if np.any(actual == 0.0):
        mdape = None
    else:
        with np.errstate(over="ignore"):  # subnormal actuals may blow up
            ape = np.sort(np.abs(resid / actual))
        mdape = float(ape[(n - 1) // 2])
    return mse, rmse, mae, mdape


def fit_metrics(pairs) -> tuple[float | None, float | None]:
    """``(r2, corr)``; either is ``None`` when its variance is zero.

    R² is ``1 - sum((y - y_hat)^2) / sum((y - mean(y))^2)`` and may be
    negative; Corr is the Pearson coefficient.
    """
    if len(pairs) < 2:
        raise ValueError("fit metrics need at least two pairs")
    actual, predicted, _ = _arrays(pairs)
    da = actual - actual.mean()
    dp = predicted - predicted.mean()
    ss_actual = math.fsum(float(v) * float(v) for v in da)
    ss_pred = math.fsum(float(v) * float(v) for v in dp)
    if ss_actual > 0.0:
        ss_res = math.fsum(float(v) * float(v) for v in (actual - predicted))
        r2 = 1.0 - ss_res / ss_actual
    else:
        r2 = None
    if ss_actual > 0.0 and ss_pred > 0.0:
        cov = math.fsum(float(a) * float(b) for a, b in zip(da, dp))
        corr = cov / math.sqrt(ss_actual * ss_pred)
    else:
        corr = None
    return r2, corr


def picp(pairs) -> float:
    """Fraction of actuals inside the closed 0.95 intervals."""
    if len(pairs) < 1:
        raise ValueError("picp needs at least one pair")
    actual, predicted, std = _arrays(pairs)
    lo = predicted - 1.96 * std
    hi = predicted + 1.96 * std
    inside = (actual >= lo) & (actual <= hi)
    return float(np.count_nonzero(inside)) / actual.shape[0]


def bic(log_likelihood: float, k_params: int, n_obs: int) -> float:
    """``-2 ln L + k ln n``."""
    if n_obs < 1:
        raise ValueError(f"n_obs must be at least 1, got {n_obs}")
    return -2.0 * log_likelihood + k_params * math.log(n_obs)


def loo_spe(model: GprModel) -> float:
    """Leave-one-out mean squared prediction error, closed form.

    ``J = (1/n) sum_i (weights_i / (C^-1)_ii)^2`` where ``weights`` is the
    stored ``C^-1 (y - m)`` and ``C = K + noise I`` via the factorization.
    """
    n = model.n_train
    cinv = scipy.linalg.cho_solve((model.chol, True), np.eye(n))
    ratios = model.weights / np.diag(cinv)
    return float(np.mean(ratios * ratios))


def evaluate(model: GprModel, test_pairs) -> MetricsReport:
    """All nine metrics; per-metric failures become absent fields.

    BIC uses the model's own trained log marginal likelihood with the
    trained parameter count and the training-set size.
    """
    mse = rmse = mae = mdape = None
    try:
        mse, rmse, mae, mdape = error_metrics(test_pairs)
    except ValueError:
        pass
    r2 = corr = None
    try:
        r2, corr = fit_metrics(test_pairs)
    except ValueError:
        pass
    coverage = None
    try:
        coverage = picp(test_pairs)
    except ValueError:
        pass
    return MetricsReport(
        mse=mse,
        rmse=rmse,
        mae=mae,
        r2=r2,
        corr=corr,
        mdape=mdape,
        picp=coverage,
        bic=bic(
            log_marginal_likelihood(model),
            trained_param_count(model.spec),
            model.n_train,
        ),
        loo_spe=loo_spe(model),
    )


def _cell(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def metrics_table_csv(rows) -> str:
    """Nine-metric table; ``rows`` is an iterable of (name, report)."""
    lines = ["kernel," + ",".join(METRIC_COLUMNS)]
    for name, report in rows:
        lines.append(
            ",".join(
                [
                    name,
                    _cell(report.mse),
                    _cell(report.rmse),
                    _cell(report.mae),
                    _cell(report.r2),
                    _cell(report.bic),
                    _cell(report.corr),
                    _cell(report.mdape),
                    _cell(report.loo_spe),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def picp_table_csv(rows) -> str:
    """Coverage table; ``rows`` is an iterable of (name, report)."""
    lines = ["kernel,picp"]
    for name, report in rows:
        lines.append(f"{name},{_cell(report.picp)}")
    return "\n".join(lines) + "\n"


def report_to_dict(report: MetricsReport) -> dict:
    """JSON-ready mapping; absent metrics serialize as ``null``."""
    return json.loads(
        json.dumps(
            {
                "mse": report.mse,
                "rmse": report.rmse,
                "mae": report.mae,
                "r2": report.r2,
                "corr": report.corr,
                "mdape": report.mdape,
                "picp": report.picp,
                "bic": report.bic,
                "loo_spe": report.loo_spe,
            }
        )
    )
