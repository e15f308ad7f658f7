"""Bayesian logistic regression over pair features.

Weighted maximum likelihood, the empirical Gaussian prior, the
Jaakkola-Jordan variational posterior and approximate predictive link
probabilities, plus a Monte-Carlo oracle for the predictive integral.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.optimize import linprog
from scipy.special import expit, log_expit

DEFAULT_L2 = 1e-4
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200
BOUND_SLACK = 1e-8


class ConvergenceError(RuntimeError):
    def __init__(self, message, state=None, grad_norm=None):
        super().__init__(message)
        self.state = state
        self.grad_norm = grad_norm


class SeparationError(ValueError):
    pass


def logistic(x):
    """``1 / (1 + exp(-x))``, stable over the whole float range."""
    return expit(x)


def jj_lambda(xi):
    """``tanh(xi / 2) / (4 xi)``, with the limit ``1/8`` at ``xi = 0``."""
    xi = np.abs(np.asarray(xi, dtype=float))
    out = np.full(xi.shape, 0.125)
    big = xi > 1e-6
    out[big] = np.tanh(xi[big] / 2.0) / (4.0 * xi[big])
    small = ~big
    # series: 1/8 - xi^2/96 + ...
    out[small] = 0.125 - xi[small] ** 2 / 96.0
    return out if out.ndim else float(out)


def _as_design(x, y=None, weights=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    if y is None:
        return x
    y = np.asarray(y, dtype=float).reshape(n)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(n)
    if np.any(w <= 0):
        raise ValueError("sample weights must be positive")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return x, y, w


# ---------------------------------------------------------------------------
# maximum likelihood
# ---------------------------------------------------------------------------


def weighted_log_likelihood(theta, x, y, w, l2=0.0) -> float:
    z = x @ theta
    ll = np.sum(w * (y * log_expit(z) + (1.0 - y) * log_expit(-z)))
    return float(ll - 0.5 * l2 * theta @ theta)


def weighted_gradient(theta, x, y, w, l2=0.0) -> np.ndarray:
    return x.T @ (w * (y - expit(x @ theta))) - l2 * theta


def is_separable(x, y) -> bool:
    """True if some hyperplane strictly separates the two labels."""
    signs = np.where(y > 0.5, 1.0, -1.0)
    # s_n x_n . theta >= 1 for all n
    res = linprog(
        np.zeros(x.shape[1]),
        A_ub=-(signs[:, None] * x),
        b_ub=-np.ones(x.shape[0]),
        bounds=[(None, None)] * x.shape[1],
        method="highs",
    )
    return res.status == 0


def fit_mle_weighted(x, y, weights=None, l2=DEFAULT_L2, max_iter=100, tol=1e-6, theta0=None):
    """Penalized weighted logistic MLE by damped Newton steps.

    Maximizes ``sum_n w_n log p(y_n | x_n, theta) - l2/2 |theta|^2``; stops
    when the gradient norm drops below ``tol``.
    """
    x, y, w = _as_design(x, y, weights)
    if not (np.any(y == 1) and np.any(y == 0)):
        raise ValueError("need at least one sample of each label")
    if l2 < 0:
        raise ValueError("l2 must be nonnegative")
    if l2 == 0 and is_separable(x, y):
        raise SeparationError("data are perfectly separable, the MLE does not exist; use l2 > 0")
    k = x.shape[1]
    theta = np.zeros(k) if theta0 is None else np.array(theta0, dtype=float)
    obj = weighted_log_likelihood(theta, x, y, w, l2)
    grad = weighted_gradient(theta, x, y, w, l2)
    for _ in range(max_iter):
        gnorm = np.linalg.norm(grad)
        if gnorm < tol:
            return theta
        p = expit(x @ theta)
        hess = (x * (w * p * (1.0 - p))[:, None]).T @ x + l2 * np.eye(k)
        try:
            step = linalg.solve(hess, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        # steps flat within roundoff are still taken: near the optimum they
        # keep shrinking the gradient even though the objective cannot move
        floor = obj - 1e-12 * max(1.0, abs(obj))
        t = 1.0
        while True:
            cand = theta + t * step
            cand_obj = weighted_log_likelihood(cand, x, y, w, l2)
            if cand_obj >= floor or t < 1e-10:
                break
            t *= 0.5
        if cand_obj < floor:
            break
        theta, obj = cand, cand_obj
        grad = weighted_gradient(theta, x, y, w, l2)
    gnorm = float(np.linalg.norm(grad))
    if gnorm < tol:
        return theta
    raise ConvergenceError(
        f"Newton iterations stopped with gradient norm {gnorm:.3g} (tol {tol:.3g})",
        state=theta,
        grad_norm=gnorm,
    )


# ---------------------------------------------------------------------------
# Gaussian beliefs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Multivariate normal over logistic weights; precision cached alongside."""

    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray = field(default=None)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        k = mean.size
        if cov.shape != (k, k):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {k}")
        if not np.allclose(cov, cov.T, atol=1e-10, rtol=0):
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        if self.precision is None:
            prec = linalg.cho_solve(_cholesky(cov, "covariance"), np.eye(k))
        else:
            prec = np.array(self.precision, dtype=float)
        prec = 0.5 * (prec + prec.T)
        for arr in (mean, cov, prec):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "precision", prec)

    @classmethod
    def from_precision(cls, mean, precision) -> GaussianBelief:
        precision = np.array(precision, dtype=float)
        precision = 0.5 * (precision + precision.T)
        chol = _cholesky(precision, "precision")
        cov = linalg.cho_solve(chol, np.eye(precision.shape[0]))
        return cls(mean, 0.5 * (cov + cov.T), precision)

    @property
    def dimension(self) -> int:
        return self.mean.size

    @cached_property
    def cov_cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance."""
        return np.linalg.cholesky(self.covariance)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "precision": self.precision.tolist(),
        }

    @classmethod
    def from_dict(cls, payload) -> GaussianBelief:
        return cls(payload["mean"], payload["covariance"], payload.get("precision"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> GaussianBelief:
        return cls.from_dict(json.loads(text))


def _cholesky(matrix, what):
    try:
        return linalg.cho_factor(matrix, lower=True)
    except linalg.LinAlgError:
        raise linalg.LinAlgError(f"{what} matrix is not positive definite") from None


def default_ridge(t_hat) -> float:
    k = t_hat.shape[0]
    return 1e-6 * float(np.trace(t_hat)) / k


def build_empirical_prior(theta_hat, positives, c=None, ridge=None) -> GaussianBelief:
    """Prior ``N(theta_hat, (c T + ridge I)^-1)`` with ``T`` the positives' second moments.

    ``T = X_pos^T X_pos / n_pos``; ``c`` defaults to ``n_pos`` so the
    precision is ``X_pos^T X_pos`` up to the ridge.
    """
    x = np.atleast_2d(np.asarray(positives, dtype=float))
    n_pos, k = x.shape
    if n_pos < 1:
        raise ValueError("need at least one positive pair")
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    if theta_hat.size != k:
        raise ValueError(f"theta_hat has length {theta_hat.size}, positives have {k} columns")
    c = float(n_pos) if c is None else float(c)
    if not c > 0:
        raise ValueError("smoothing constant c must be positive")
    t_hat = x.T @ x / n_pos
    ridge = default_ridge(t_hat) if ridge is None else float(ridge)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    precision = c * t_hat + ridge * np.eye(k)
    return GaussianBelief.from_precision(theta_hat, precision)


# ---------------------------------------------------------------------------
# variational posterior
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VariationalState:
    belief: GaussianBelief
    xi: np.ndarray
    bound: float
    iterations: int
    history: tuple[float, ...] = ()


def _logdet_from_chol(chol) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol[0]))))


def variational_fit(
    prior: GaussianBelief, x, y=None, weights=None, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL
) -> VariationalState:
    """Gaussian posterior under the per-point quadratic logistic bound.

    ``y`` defaults to all ones (a query set of linked pairs).  Alternates the
    closed-form Gaussian update with ``xi_n^2 = E[(x_n . theta)^2]`` until the
    relative change of the log-marginal lower bound falls below ``tol``.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return VariationalState(prior, np.zeros(0), 0.0, 0)
    x = np.atleast_2d(x)
    if y is None:
        y = np.ones(x.shape[0])
    x, y, w = _as_design(x, y, weights)
    if x.shape[1] != prior.dimension:
        raise ValueError(f"features have {x.shape[1]} columns, prior has dimension {prior.dimension}")

    p0, m0 = prior.precision, prior.mean
    h0 = p0 @ m0
    h = h0 + x.T @ (w * (y - 0.5))
    const0 = -0.5 * m0 @ h0
    logdet_p0 = _logdet_from_chol(_cholesky(p0, "prior precision"))

    xs = x @ prior.covariance
    xi = np.sqrt(np.einsum("ij,ij->i", xs, x) + (x @ m0) ** 2)
    history: list[float] = []
    belief = prior
    for it in range(1, max_iter + 1):
        lam = jj_lambda(xi)
        prec = p0 + 2.0 * (x * (w * lam)[:, None]).T @ x
        chol = _cholesky(prec, "posterior precision")
        mean = linalg.cho_solve(chol, h)
        bound = float(
            np.sum(w * (log_expit(xi) - 0.5 * xi + lam * xi**2))
            + 0.5 * mean @ h
            + const0
            + 0.5 * (logdet_p0 - _logdet_from_chol(chol))
        )
        cov = linalg.cho_solve(chol, np.eye(prec.shape[0]))
        belief = GaussianBelief(mean, 0.5 * (cov + cov.T), prec)
        if history and bound < history[-1] - BOUND_SLACK:
            raise ConvergenceError(
                f"variational bound decreased from {history[-1]!r} to {bound!r} at iteration {it}",
                state=VariationalState(belief, xi, bound, it, tuple(history + [bound])),
            )
        history.append(bound)
        xs = x @ belief.covariance
        xi = np.sqrt(np.einsum("ij,ij->i", xs, x) + (x @ mean) ** 2)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol * max(1.0, abs(history[-2])):
            return VariationalState(belief, xi, bound, it, tuple(history))
    state = VariationalState(belief, xi, history[-1], max_iter, tuple(history))
    raise ConvergenceError(f"variational fit did not converge in {max_iter} iterations", state=state)


# ---------------------------------------------------------------------------
# predictive link probabilities
# ---------------------------------------------------------------------------

_PROBIT_SCALE = np.pi / 8.0


def predictive_moments(belief: GaussianBelief, x):
    """Mean and variance of ``theta . x`` under ``belief`` (``x`` may be a batch)."""
    x = np.asarray(x, dtype=float)
    mu = x @ belief.mean
    s2 = np.einsum("...i,...i->...", x @ belief.covariance, x)
    return mu, np.maximum(s2, 0.0)


def log_predictive_probability(belief: GaussianBelief, x):
    mu, s2 = predictive_moments(belief, x)
    return log_expit(mu / np.sqrt(1.0 + _PROBIT_SCALE * s2))


def predictive_probability(belief: GaussianBelief, x):
    """``sigma(mu / sqrt(1 + pi s^2 / 8))``: moment-matched predictive link probability."""
    mu, s2 = predictive_moments(belief, x)
    return expit(mu / np.sqrt(1.0 + _PROBIT_SCALE * s2))


def mc_predictive_oracle(belief: GaussianBelief, x, n_samples: int, seed: int, chunk: int = 200_000):
    """Monte-Carlo average of ``sigma(theta . x)`` with ``theta ~ belief``.

    Returns ``(estimate, standard_error)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    chol = belief.cov_cholesky
    mu = float(belief.mean @ x)
    direction = chol.T @ x
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        z = rng.standard_normal((m, belief.dimension))
        vals = expit(mu + z @ direction)
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += m
    est = total / n_samples
    if n_samples == 1:
        return est, float("nan")
    var = max(total_sq / n_samples - est * est, 0.0) * n_samples / (n_samples - 1)
    return est, float(np.sqrt(var / n_samples))
