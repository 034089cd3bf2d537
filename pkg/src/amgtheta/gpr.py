"""Gaussian process regression on scalar inputs with a composite kernel.

The covariance is a nonnegative combination ``k = sum_t c_t k_t`` drawn
from a small library of one-dimensional stationary bases.  Inputs are
standardized to zero mean and unit scale before any kernel evaluation;
the constants are stored on the model so prediction sees the same map.
Training maximizes the exact log marginal likelihood over the logarithms
of all positive parameters (lengths, shapes, periods, coefficients) with
analytic gradients and deterministic seeded multi-starts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

__all__ = [
    "BASES",
    "DEFAULT_SIGMA",
    "ConditioningError",
    "GprModel",
    "KernelSpec",
    "KernelTerm",
    "Prediction",
    "TrainingError",
    "fit",
    "gram",
    "kernel_eval",
    "log_marginal_likelihood",
    "log_marginal_likelihood_gradient",
    "model_from_json",
    "model_to_json",
    "posterior",
    "predict",
    "predict_theta",
    "retrain",
    "sample_posterior",
    "spec_from_names",
    "spec_from_dict",
    "spec_to_dict",
    "stationarity_gap",
    "train",
    "trained_param_count",
]

BASES = (
    "gaussian",
    "laplacian",
    "exponential",
    "rationalquadratic",
    "matern52",
    "periodic",
)

# Observation noise sigma; the model stores its square as noise_var.
DEFAULT_SIGMA = 1e-4

# Predicted thresholds are clipped into (0, 1]; this is the open-end floor.
THETA_FLOOR = 1e-6

_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class ConditioningError(RuntimeError):
    """The Gram matrix stayed indefinite through the whole jitter ladder."""


class TrainingError(RuntimeError):
    """Every multi-start initialization failed (conditioning or otherwise)."""


@dataclass(frozen=True)
class KernelTerm:
    """One library base with its positive hyperparameters.

    ``length`` applies to every base; ``shape`` only to
    ``rationalquadratic`` and ``period`` only to ``periodic``.
    """

    base: str
    length: float = 1.0
    shape: float | None = None
    period: float | None = None

    def __post_init__(self) -> None:
        if self.base not in BASES:
            raise ValueError(f"unknown kernel base {self.base!r}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")
        if self.base == "rationalquadratic":
            if self.shape is None or not self.shape > 0:
                raise ValueError("rationalquadratic requires a positive shape")
        elif self.shape is not None:
            raise ValueError(f"{self.base} takes no shape parameter")
        if self.base == "periodic":
            if self.period is None or not self.period > 0:
                raise ValueError("periodic requires a positive period")
        elif self.period is not None:
            raise ValueError(f"{self.base} takes no period parameter")

    @property
    def param_names(self) -> tuple[str, ...]:
        names = ["length"]
        if self.base == "rationalquadratic":
            names.append("shape")
        if self.base == "periodic":
            names.append("period")
        return tuple(names)


@dataclass(frozen=True)
class KernelSpec:
    """An ordered set of terms plus one combination coefficient each."""

    terms: tuple[KernelTerm, ...]
    coeffs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.terms:
            raise ValueError("a kernel spec needs at least one term")
        if len(self.coeffs) != len(self.terms):
            raise ValueError(
                f"{len(self.terms)} terms but {len(self.coeffs)} coefficients"
            )
        if any(c < 0 for c in self.coeffs):
            raise ValueError("coefficients must be nonnegative")
        if not sum(self.coeffs) > 0:
            raise ValueError("at least one coefficient must be positive")

    @property
    def name(self) -> str:
        return "+".join(t.base for t in self.terms)


def spec_from_names(names, length=1.0, shape=1.0, period=1.0) -> KernelSpec:
    """Unit-coefficient spec for the given bases with shared defaults."""
    terms = []
    for base in names:
        terms.append(
            KernelTerm(
                base=base,
                length=length,
                shape=shape if base == "rationalquadratic" else None,
                period=period if base == "periodic" else None,
            )
        )
    return KernelSpec(tuple(terms), tuple(1.0 for _ in terms))


@dataclass(frozen=True, eq=False)
class GprModel:
    """A fitted posterior: data, kernel, factorization, and input map."""

    train_x: np.ndarray
    train_y: np.ndarray
    spec: KernelSpec
    noise_var: float
    chol: np.ndarray
    weights: np.ndarray
    mean_const: float = 0.0
    x_mean: float = 0.0
    x_scale: float = 1.0

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]


@dataclass(frozen=True)
class Prediction:
    """Posterior mean/variance at one input plus the 0.95 interval."""

    mean: float
    variance: float
    interval95: tuple[float, float]
    clamped: int = 0


def _term_cov(term: KernelTerm, d: np.ndarray) -> np.ndarray:
    """Base covariance on a matrix of signed input differences."""
    ell = term.length
    if term.base == "gaussian":
        return np.exp(-(d * d) / (2.0 * ell * ell))
    if term.base in ("laplacian", "exponential"):
        return np.exp(-np.abs(d) / ell)
    if term.base == "rationalquadratic":
        alpha = term.shape
        q = (d * d) / (2.0 * alpha * ell * ell)
        return (1.0 + q) ** (-alpha)
    if term.base == "matern52":
        u = math.sqrt(5.0) * np.abs(d) / ell
        return (1.0 + u + u * u / 3.0) * np.exp(-u)
    # periodic
    s = np.sin(np.pi * np.abs(d) / term.period)
    return np.exp(-2.0 * s * s / (ell * ell))


def _term_grads(term: KernelTerm, d: np.ndarray, k: np.ndarray):
    """Derivatives of the base covariance wrt the logs of its params.

    Yields matrices in ``term.param_names`` order.
    """
    ell = term.length
    if term.base == "gaussian":
        yield k * (d * d) / (ell * ell)
    elif term.base in ("laplacian", "exponential"):
        yield k * np.abs(d) / ell
    elif term.base == "rationalquadratic":
        alpha = term.shape
        q = (d * d) / (2.0 * alpha * ell * ell)
        yield k * 2.0 * alpha * q / (1.0 + q)
        yield k * alpha * (-np.log1p(q) + q / (1.0 + q))
    elif term.base == "matern52":
        u = math.sqrt(5.0) * np.abs(d) / ell
        yield np.exp(-u) * u * u * (1.0 + u) / 3.0
    else:  # periodic
        p = term.period
        ad = np.abs(d)
        s = np.sin(np.pi * ad / p)
        yield k * 4.0 * s * s / (ell * ell)
        yield k * (2.0 * np.pi * ad / (p * ell * ell)) * np.sin(2.0 * np.pi * ad / p)


def _cov(spec: KernelSpec, d: np.ndarray) -> np.ndarray:
    out = np.zeros_like(d)
    for term, coeff in zip(spec.terms, spec.coeffs):
        if coeff != 0.0:
            out += coeff * _term_cov(term, d)
    return out


def _diff(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    return xa[:, None] - xb[None, :]


def kernel_eval(spec: KernelSpec, x: float, x_other: float) -> float:
    """Composite covariance between two scalar inputs."""
    d = np.array([[float(x) - float(x_other)]])
    return float(_cov(spec, d)[0, 0])


def prior_variance(spec: KernelSpec) -> float:
    """``k(x, x)``: every base equals one at zero distance."""
    return float(sum(spec.coeffs))


def gram(spec: KernelSpec, xs: np.ndarray, noise_var: float) -> np.ndarray:
    """Noise-regularized Gram matrix, verified factorizable.

    Raises
    ------
    ConditioningError
        When Cholesky keeps failing after the jitter ladder.
    """
    xs = np.asarray(xs, dtype=np.float64)
    k = _cov(spec, _diff(xs, xs)) + noise_var * np.eye(xs.shape[0])
    _chol_with_jitter(k)
    return k


def _chol_with_jitter(k: np.ndarray) -> tuple[np.ndarray, float]:
    for jit in _JITTERS:
        try:
            chol = np.linalg.cholesky(
                k if jit == 0.0 else k + jit * np.eye(k.shape[0])
            )
            return chol, jit
        except np.linalg.LinAlgError:
            continue
    raise ConditioningError(
        f"Gram matrix of order {k.shape[0]} failed Cholesky after "
        f"jitter escalation to {_JITTERS[-1]:g}"
    )


def _standardize_constants(xs: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(xs))
    scale = float(np.std(xs))
    return mean, scale if scale > 0.0 else 1.0


def fit(
    train_x,
    train_y,
    spec: KernelSpec,
    noise_var: float = DEFAULT_SIGMA**2,
    mean_const: float = 0.0,
) -> GprModel:
    """Factorize the posterior for fixed kernel parameters.

    Inputs are standardized internally; the constants ride on the model.

    Raises
    ------
    ConditioningError
        When the Gram matrix cannot be factorized even with jitter.
    """
    x = np.asarray(train_x, dtype=np.float64).ravel()
    y = np.asarray(train_y, dtype=np.float64).ravel()
    if x.shape[0] == 0:
        raise ValueError("at least one training pair is required")
    if x.shape != y.shape:
        raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
    if noise_var < 0:
        raise ValueError(f"noise_var must be nonnegative, got {noise_var}")
    x_mean, x_scale = _standardize_constants(x)
    xs = (x - x_mean) / x_scale
    k = _cov(spec, _diff(xs, xs)) + noise_var * np.eye(xs.shape[0])
    chol, _ = _chol_with_jitter(k)
    weights = scipy.linalg.cho_solve((chol, True), y - mean_const)
    return GprModel(
        train_x=x,
        train_y=y,
        spec=spec,
        noise_var=float(noise_var),
        chol=chol,
        weights=weights,
        mean_const=float(mean_const),
        x_mean=x_mean,
        x_scale=x_scale,
    )


def _cross_cov(model: GprModel, xs_new: np.ndarray) -> np.ndarray:
    """K(train, new) on standardized coordinates."""
    train_std = (model.train_x - model.x_mean) / model.x_scale
    new_std = (np.asarray(xs_new, dtype=np.float64) - model.x_mean) / model.x_scale
    return _cov(model.spec, _diff(train_std, new_std))


def predict(model: GprModel, x_star: float) -> Prediction:
    """Exact posterior at one input via the stored factorization."""
    ks = _cross_cov(model, np.array([float(x_star)]))
    mean = float(model.mean_const + ks[:, 0] @ model.weights)
    v = scipy.linalg.solve_triangular(model.chol, ks, lower=True)
    variance = prior_variance(model.spec) - float(v[:, 0] @ v[:, 0])
    clamped = 0
    if variance < 0.0:
        variance = 0.0
        clamped = 1
    sd = math.sqrt(variance)
    return Prediction(
        mean=mean,
        variance=variance,
        interval95=(mean - 1.96 * sd, mean + 1.96 * sd),
        clamped=clamped,
    )


def predict_theta(model: GprModel, n: float) -> float:
    """Posterior mean clipped into ``(0, 1]`` for use as a threshold."""
    return float(np.clip(predict(model, float(n)).mean, THETA_FLOOR, 1.0))


def posterior(model: GprModel, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Joint posterior mean vector and covariance matrix at ``xs``."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ks = _cross_cov(model, xs)
    mean = model.mean_const + ks.T @ model.weights
    v = scipy.linalg.solve_triangular(model.chol, ks, lower=True)
    new_std = (xs - model.x_mean) / model.x_scale
    prior = _cov(model.spec, _diff(new_std, new_std))
    return mean, prior - v.T @ v


def sample_posterior(
    model: GprModel, xs: np.ndarray, n_draws: int, seed: int = 0
) -> np.ndarray:
    """Draw joint posterior samples; rows are functions evaluated at ``xs``."""
    mean, cov = posterior(model, xs)
    chol, _ = _chol_with_jitter(cov + 1e-12 * np.eye(cov.shape[0]))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((int(n_draws), mean.shape[0]))
    return mean[None, :] + z @ chol.T


def log_marginal_likelihood(model: GprModel) -> float:
    """``-0.5 y~ᵀ K⁻¹ y~ - Σ log L_ii - (n/2) log 2π`` via the factor."""
    resid = model.train_y - model.mean_const
    n = model.n_train
    return float(
        -0.5 * resid @ model.weights
        - np.sum(np.log(np.diag(model.chol)))
        - 0.5 * n * math.log(2.0 * math.pi)
    )


def _pack(spec: KernelSpec) -> np.ndarray:
    logs = []
    for term in spec.terms:
        logs.append(math.log(term.length))
        if term.base == "rationalquadratic":
            logs.append(math.log(term.shape))
        if term.base == "periodic":
            logs.append(math.log(term.period))
    logs.extend(math.log(max(c, 1e-12)) for c in spec.coeffs)
    return np.array(logs, dtype=np.float64)


def _unpack(template: KernelSpec, packed: np.ndarray) -> KernelSpec:
    pos = 0
    terms = []
    for term in template.terms:
        length = math.exp(packed[pos])
        pos += 1
        shape = period = None
        if term.base == "rationalquadratic":
            shape = math.exp(packed[pos])
            pos += 1
        if term.base == "periodic":
            period = math.exp(packed[pos])
            pos += 1
        terms.append(KernelTerm(term.base, length, shape, period))
    coeffs = tuple(math.exp(v) for v in packed[pos:])
    return KernelSpec(tuple(terms), coeffs)


def trained_param_count(spec: KernelSpec) -> int:
    """Hyperparameters plus coefficients: the BIC parameter count."""
    return _pack(spec).shape[0]


def _lml_and_grad(
    spec: KernelSpec, d: np.ndarray, y: np.ndarray, noise_var: float
) -> tuple[float, np.ndarray]:
    """Likelihood and gradient wrt the packed log-parameters."""
    n = y.shape[0]
    k = _cov(spec, d) + noise_var * np.eye(n)
    chol, _ = _chol_with_jitter(k)
    alpha = scipy.linalg.cho_solve((chol, True), y)
    lml = float(
        -0.5 * y @ alpha
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * n * math.log(2.0 * math.pi)
    )
    kinv = scipy.linalg.cho_solve((chol, True), np.eye(n))
    outer = np.outer(alpha, alpha) - kinv
    hyper_grads = []
    coeff_grads = []
    for term, coeff in zip(spec.terms, spec.coeffs):
        k_term = _term_cov(term, d)
        # dK/d log c = c * K_term; dK/d log h = c * dK_term/d log h
        coeff_grads.append(0.5 * coeff * float(np.sum(outer * k_term)))
        for g in _term_grads(term, d, k_term):
            hyper_grads.append(0.5 * coeff * float(np.sum(outer * g)))
    return lml, np.array(hyper_grads + coeff_grads, dtype=np.float64)


def log_marginal_likelihood_gradient(model: GprModel) -> tuple[float, np.ndarray]:
    """Likelihood and its gradient in packed log-parameter order."""
    xs = (model.train_x - model.x_mean) / model.x_scale
    return _lml_and_grad(
        model.spec, _diff(xs, xs), model.train_y - model.mean_const, model.noise_var
    )


def stationarity_gap(model: GprModel) -> float:
    """Infinity norm of the bound-projected likelihood gradient.

    Components pinned at the training bounds count only when the
    gradient points back into the feasible box; this is the first-order
    condition the trained optimum actually satisfies.
    """
    packed = _pack(model.spec)
    _, grad = log_marginal_likelihood_gradient(model)
    lo, hi = _LOG_BOUND
    g = grad.copy()
    g[(packed <= lo + 1e-9) & (g < 0)] = 0.0
    g[(packed >= hi - 1e-9) & (g > 0)] = 0.0
    return float(np.max(np.abs(g)))


_LOG_BOUND = (math.log(1e-4), math.log(1e4))
_START_RANGE = (math.log(0.05), math.log(5.0))


def _projected_gap(packed: np.ndarray, grad: np.ndarray) -> float:
    """KKT residual for minimization over the log-parameter box."""
    lo, hi = _LOG_BOUND
    g = np.array(grad, copy=True)
    g[(packed <= lo + 1e-9) & (g > 0)] = 0.0
    g[(packed >= hi - 1e-9) & (g < 0)] = 0.0
    return float(np.max(np.abs(g)))


def train(
    train_x,
    train_y,
    spec_init: KernelSpec,
    noise_var: float = DEFAULT_SIGMA**2,
    seed: int = 0,
    n_starts: int = 8,
    mean_const: float = 0.0,
) -> GprModel:
    """Maximize the log marginal likelihood over all log-parameters.

    ``spec_init`` is the first start; the remaining ``n_starts - 1``
    redraw every positive hyperparameter log-uniformly from
    ``[0.05, 5]`` in standardized units, keeping the initial
    coefficients.  Deterministic for a fixed ``seed``.

    Raises
    ------
    TrainingError
        When every start fails at its initial evaluation.
    """
    x = np.asarray(train_x, dtype=np.float64).ravel()
    y = np.asarray(train_y, dtype=np.float64).ravel()
    if x.shape[0] < 2:
        raise ValueError("training requires at least two pairs")
    if x.shape != y.shape:
        raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
    x_mean, x_scale = _standardize_constants(x)
    d = _diff((x - x_mean) / x_scale, (x - x_mean) / x_scale)
    resid = y - mean_const

    def objective(packed: np.ndarray) -> tuple[float, np.ndarray]:
        try:
            lml, grad = _lml_and_grad(_unpack(spec_init, packed), d, resid, noise_var)
        except ConditioningError:
            return 1e12, np.zeros_like(packed)
        return -lml, -grad

    rng = np.random.default_rng(seed)
    starts = [_pack(spec_init)]
    n_hyper = _pack(spec_init).shape[0] - len(spec_init.coeffs)
    for _ in range(max(0, n_starts - 1)):
        drawn = starts[0].copy()
        drawn[:n_hyper] = rng.uniform(*_START_RANGE, size=n_hyper)
        starts.append(drawn)

    candidates: list[tuple[float, float, np.ndarray]] = []
    for start in starts:
        value0, _ = objective(start)
        if value0 >= 1e12:
            continue
        # ftol=0: likelihood plateaus are flat enough that a relative
        # f-decrease test quits with the gradient still loose; run to the
        # projected-gradient criterion instead.
        result = scipy.optimize.minimize(
            objective,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=[_LOG_BOUND] * start.shape[0],
            options={"maxiter": 1000, "ftol": 0.0, "gtol": 1e-8},
        )
        if np.isfinite(result.fun):
            candidates.append(
                (float(result.fun), _projected_gap(result.x, result.jac),
                 np.array(result.x))
            )
        else:
            candidates.append((float(value0), math.inf, np.array(start)))
    if not candidates:
        raise TrainingError(
            "all multi-start initializations failed Gram conditioning"
        )
    # Runs that agree to optimizer noise sit in the same optimum; among
    # those prefer the earliest stationary exit.  Start order puts
    # spec_init first, so an already-optimal warm start is kept verbatim
    # (a no-op retrain reproduces the model); line searches sometimes quit
    # abnormally a hair "better" but with a loose gradient.
    best_fun = min(c[0] for c in candidates)
    window = best_fun + 1e-6 * max(1.0, abs(best_fun))
    viable = [c for c in candidates if c[0] <= window]
    stationary = [c for c in viable if c[1] <= 1e-6]
    if stationary:
        best_packed = stationary[0][2]
    else:
        _, _, best_packed = min(viable, key=lambda c: (c[1], c[0]))
    return fit(x, y, _unpack(spec_init, best_packed), noise_var, mean_const)


def retrain(
    model: GprModel,
    new_x,
    new_y,
    seed: int = 0,
    n_starts: int = 8,
) -> GprModel:
    """Append data and re-train with the previous optimum as one start."""
    x = np.concatenate(
        [model.train_x, np.asarray(new_x, dtype=np.float64).ravel()]
    )
    y = np.concatenate(
        [model.train_y, np.asarray(new_y, dtype=np.float64).ravel()]
    )
    return train(
        x,
        y,
        spec_init=model.spec,
        noise_var=model.noise_var,
        seed=seed,
        n_starts=n_starts,
        mean_const=model.mean_const,
    )


def spec_to_dict(spec: KernelSpec) -> dict:
    terms = []
    for term in spec.terms:
        entry = {"base": term.base, "length": term.length}
        if term.shape is not None:
            entry["shape"] = term.shape
        if term.period is not None:
            entry["period"] = term.period
        terms.append(entry)
    return {"terms": terms, "coeffs": list(spec.coeffs)}


def spec_from_dict(payload: dict) -> KernelSpec:
    terms = tuple(
        KernelTerm(
            base=entry["base"],
            length=float(entry["length"]),
            shape=float(entry["shape"]) if "shape" in entry else None,
            period=float(entry["period"]) if "period" in entry else None,
        )
        for entry in payload["terms"]
    )
    return KernelSpec(terms, tuple(float(c) for c in payload["coeffs"]))


def model_to_json(model: GprModel) -> str:
    """Serialize everything needed to rebuild the model deterministically."""
    payload = {
        "spec": spec_to_dict(model.spec),
        "noise_var": model.noise_var,
        "mean_const": model.mean_const,
        "x_mean": model.x_mean,
        "x_scale": model.x_scale,
        "train_x": model.train_x.tolist(),
        "train_y": model.train_y.tolist(),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def model_from_json(text: str) -> GprModel:
    """Rebuild a model by refitting the stored data; fit is deterministic."""
    payload = json.loads(text)
    return fit(
        np.array(payload["train_x"], dtype=np.float64),
        np.array(payload["train_y"], dtype=np.float64),
        spec_from_dict(payload["spec"]),
        noise_var=float(payload["noise_var"]),
        mean_const=float(payload["mean_const"]),
    )
