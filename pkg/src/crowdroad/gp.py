"""Exact Gaussian process regression over 1-D positions with an
exponentiated-quadratic kernel, marginal-likelihood hyperparameter
training, and a noisy-input variant that absorbs GPS position noise.

The noisy-input mode follows the local-linearization idea: the effect of
input noise on an output is approximately the posterior-mean slope at that
input times the input noise, so each training point's noise variance is
inflated by slope^2 * sigma_s^2 and sigma_s joins the trained
hyperparameters. Training alternates between optimizing the marginal
likelihood with the slope-corrected diagonal held fixed and recomputing
the slopes from the refreshed posterior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotrf, dpotri
from scipy.optimize import minimize

from .errors import InvalidParameterError, NumericalError

STANDARD = "standard"
NOISY_INPUT = "nigp"

JITTER_START = 1e-10  # times signal variance
JITTER_MAX = 1e-4
_LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GPHyperParams:
    """Kernel and noise hyperparameters, all in the units of the data (m)."""

    signal_std: float
    lengthscale: float
    noise_std: float
    input_noise_std: float | None = None  # noisy-input mode only

    def __post_init__(self):
        for name in ("signal_std", "lengthscale", "noise_std"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidParameterError(f"{name} must be strictly positive, got {v!r}")
        if self.input_noise_std is not None:
            v = self.input_noise_std
            if not (math.isfinite(v) and v > 0):
                raise InvalidParameterError(
                    f"input_noise_std must be strictly positive, got {v!r}")


def kernel(s, s_prime, hp: GPHyperParams):
    """Exponentiated-quadratic covariance between position sets.

    Returns a matrix for array inputs, a float for scalar inputs;
    k(s, s) equals the signal variance.
    """
    a = np.atleast_1d(np.asarray(s, dtype=float))
    b = np.atleast_1d(np.asarray(s_prime, dtype=float))
    d2 = (a[:, None] - b[None, :]) ** 2
    out = hp.signal_std ** 2 * np.exp(-d2 / (2.0 * hp.lengthscale ** 2))
    if np.isscalar(s) and np.isscalar(s_prime):
        return float(out[0, 0])
    return out


def _cholesky_with_jitter(K: np.ndarray, scale: float
                          ) -> tuple[np.ndarray | None, float]:
    """Lower Cholesky factor with escalating diagonal jitter.

    Returns (factor, jitter_used); factor is None when even the largest
    allowed jitter fails.
    """
    jitter = 0.0
    attempt = K
    while True:
        c, info = dpotrf(attempt, lower=1, clean=0, overwrite_a=0)
        if info == 0:
            return c, jitter
        jitter = JITTER_START * scale if jitter == 0.0 else jitter * 10.0
        if jitter > JITTER_MAX * scale:
            return None, jitter
        attempt = K + jitter * np.eye(K.shape[0])


def _chol_inverse(L: np.ndarray) -> np.ndarray:
    inv, info = dpotri(L, lower=1)
    if info != 0:
        raise NumericalError("triangular inversion failed")
    return np.tril(inv) + np.tril(inv, -1).T


def _nll_and_grad(theta: np.ndarray, D2: np.ndarray, y: np.ndarray,
                  slopes_sq: np.ndarray | None,
                  extra_noise_diag: np.ndarray | None):
    """Negative log marginal likelihood and its gradient in log-parameters.

    theta = log([signal_std, lengthscale, noise_std, (input_noise_std)]);
    the fourth entry is present only when slopes_sq is given.
    """
    n = y.shape[0]
    sf2 = math.exp(2.0 * theta[0])
    l2 = math.exp(2.0 * theta[1])
    sw2 = math.exp(2.0 * theta[2])
    K_se = sf2 * np.exp(-D2 / (2.0 * l2))
    noise = np.full(n, sw2)
    if slopes_sq is not None:
        ss2 = math.exp(2.0 * theta[3])
        noise = noise + ss2 * slopes_sq
    if extra_noise_diag is not None:
        noise = noise + extra_noise_diag
    K = K_se + np.diag(noise)

    L, _ = _cholesky_with_jitter(K, sf2)
    if L is None:
        # Push the optimizer away from the unfactorizable region.
        return 1e25, np.zeros_like(theta)

    alpha = cho_solve((L, True), y)
    nll = 0.5 * float(y @ alpha) + float(np.sum(np.log(np.diag(L)))) + 0.5 * n * _LOG2PI

    M = np.outer(alpha, alpha) - _chol_inverse(L)
    grad = np.empty_like(theta)
    grad[0] = -np.sum(M * K_se)
    grad[1] = -0.5 * np.sum(M * K_se * D2) / l2
    diag_M = np.diag(M)
    grad[2] = -sw2 * float(np.sum(diag_M))
    if slopes_sq is not None:
        grad[3] = -ss2 * float(diag_M @ slopes_sq)
    return nll, grad


def log_marginal_likelihood(hp: GPHyperParams, inputs, targets,
                            slopes: np.ndarray | None = None,
                            extra_noise_diag: np.ndarray | None = None,
                            return_grad: bool = False):
    """Log marginal likelihood of the data under the (noise-inflated) prior.

    With slopes given, the per-point diagonal slope^2 * input_noise_std^2
    is included. The gradient, when requested, is with respect to the log
    hyperparameters in the order (signal_std, lengthscale, noise_std[,
    input_noise_std]).
    """
    s = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    D2 = (s[:, None] - s[None, :]) ** 2
    theta = [math.log(hp.signal_std), math.log(hp.lengthscale), math.log(hp.noise_std)]
    slopes_sq = None
    if slopes is not None:
        if hp.input_noise_std is None:
            raise InvalidParameterError("slopes given but input_noise_std is unset")
        theta.append(math.log(hp.input_noise_std))
        slopes_sq = np.asarray(slopes, dtype=float) ** 2
    nll, grad = _nll_and_grad(np.asarray(theta), D2, y, slopes_sq, extra_noise_diag)
    if return_grad:
        return -nll, -grad
    return -nll


class GPModel:
    """A fitted (or prior) Gaussian process over road positions.

    Immutable after construction apart from a variance-clamp counter;
    prediction is safe to call concurrently.
    """

    def __init__(self, mode: str, hyperparams: GPHyperParams,
                 train_inputs: np.ndarray, train_targets: np.ndarray,
                 slopes: np.ndarray | None = None,
                 extra_noise_diag: np.ndarray | None = None,
                 diagnostics: dict | None = None):
        if mode not in (STANDARD, NOISY_INPUT):
            raise InvalidParameterError(f"unknown GP mode {mode!r}")
        if mode == NOISY_INPUT and hyperparams.input_noise_std is None:
            raise InvalidParameterError("noisy-input mode needs input_noise_std")
        self.mode = mode
        self.hyperparams = hyperparams
        self.train_inputs = np.asarray(train_inputs, dtype=float).ravel()
        self.train_targets = np.asarray(train_targets, dtype=float).ravel()
        if self.train_inputs.shape != self.train_targets.shape:
            raise InvalidParameterError("training inputs/targets length mismatch")
        self.slopes = None if slopes is None else np.asarray(slopes, dtype=float).ravel()
        self.extra_noise_diag = (None if extra_noise_diag is None
                                 else np.asarray(extra_noise_diag, dtype=float).ravel())
        self.diagnostics = dict(diagnostics or {})
        self.variance_clamps = 0
        self._factorize()

    @classmethod
    def prior(cls, hyperparams: GPHyperParams, mode: str = STANDARD) -> "GPModel":
        return cls(mode, hyperparams, np.empty(0), np.empty(0))

    @property
    def n_train(self) -> int:
        return self.train_inputs.shape[0]

    def noise_diagonal(self) -> np.ndarray:
        hp = self.hyperparams
        noise = np.full(self.n_train, hp.noise_std ** 2)
        if self.mode == NOISY_INPUT and self.slopes is not None:
            noise = noise + (hp.input_noise_std ** 2) * self.slopes ** 2
        if self.extra_noise_diag is not None:
            noise = noise + self.extra_noise_diag
        return noise

    def _factorize(self) -> None:
        n = self.n_train
        if n == 0:
            self._chol = None
            self._alpha = None
            return
        K = kernel(self.train_inputs, self.train_inputs, self.hyperparams)
        K = K + np.diag(self.noise_diagonal())
        L, jitter = _cholesky_with_jitter(K, self.hyperparams.signal_std ** 2)
        if L is None:
            raise NumericalError(
                f"kernel matrix not factorizable even with jitter {jitter:.2e}")
        self._chol = L
        self._alpha = cho_solve((L, True), self.train_targets)
        if jitter > 0:
            self.diagnostics.setdefault("jitter", jitter)

    def predict(self, query) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and pointwise variance of the latent road at the
        query positions; the prior (zero mean, signal variance) before any
        data."""
        q = np.atleast_1d(np.asarray(query, dtype=float))
        sf2 = self.hyperparams.signal_std ** 2
        if self.n_train == 0:
            return np.zeros(q.shape), np.full(q.shape, sf2)
        k_star = kernel(q, self.train_inputs, self.hyperparams)
        mean = k_star @ self._alpha
        v = solve_triangular(self._chol, k_star.T, lower=True)
        var = sf2 - np.einsum("ij,ij->j", v, v)
        negative = var < 0
        if np.any(negative):
            self.variance_clamps += int(np.count_nonzero(negative))
            var = np.where(negative, 0.0, var)
        return mean, var

    def posterior_mean_slope(self, query) -> np.ndarray:
        """Analytic derivative of the posterior mean at the query positions."""
        q = np.atleast_1d(np.asarray(query, dtype=float))
        if self.n_train == 0:
            return np.zeros(q.shape)
        hp = self.hyperparams
        diff = q[:, None] - self.train_inputs[None, :]
        k_star = hp.signal_std ** 2 * np.exp(-diff ** 2 / (2.0 * hp.lengthscale ** 2))
        return (-diff / hp.lengthscale ** 2 * k_star) @ self._alpha

    def to_json_dict(self) -> dict:
        return {
            "version": "gpmodel/1",
            "mode": self.mode,
            "hyperparams": {
                "signal_std": self.hyperparams.signal_std,
                "lengthscale": self.hyperparams.lengthscale,
                "noise_std": self.hyperparams.noise_std,
                "input_noise_std": self.hyperparams.input_noise_std,
            },
            "train_inputs": self.train_inputs.tolist(),
            "train_targets": self.train_targets.tolist(),
            "slopes": None if self.slopes is None else self.slopes.tolist(),
            "extra_noise_diag": (None if self.extra_noise_diag is None
                                 else self.extra_noise_diag.tolist()),
            "diagnostics": self.diagnostics,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GPModel":
        if doc.get("version") != "gpmodel/1":
            raise InvalidParameterError(f"unsupported model document {doc.get('version')!r}")
        hp = GPHyperParams(**doc["hyperparams"])
        return cls(doc["mode"], hp,
                   np.asarray(doc["train_inputs"], dtype=float),
                   np.asarray(doc["train_targets"], dtype=float),
                   slopes=None if doc["slopes"] is None else np.asarray(doc["slopes"]),
                   extra_noise_diag=(None if doc.get("extra_noise_diag") is None
                                     else np.asarray(doc["extra_noise_diag"])),
                   diagnostics=doc.get("diagnostics"))

    @classmethod
    def from_json(cls, path) -> "GPModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def predict(model: GPModel, query):
    """Module-level alias of :meth:`GPModel.predict`."""
    return model.predict(query)


def posterior_mean_slope(model: GPModel, query):
    """Module-level alias of :meth:`GPModel.posterior_mean_slope`."""
    return model.posterior_mean_slope(query)


def _default_init(s: np.ndarray, w: np.ndarray, mode: str) -> GPHyperParams:
    span = float(np.ptp(s)) or 1.0
    sf = float(np.std(w))
    if sf <= 0 or not math.isfinite(sf):
        sf = 1e-6
    spacing = span / max(len(s) - 1, 1)
    return GPHyperParams(
        signal_std=sf,
        lengthscale=span / 10.0,
        noise_std=0.1 * sf,
        input_noise_std=(max(spacing, span / 100.0) if mode == NOISY_INPUT else None),
    )


def _bounds_and_restart_box(s, w, init: GPHyperParams, with_input_noise: bool):
    span = float(np.ptp(s)) or 1.0
    sf0 = init.signal_std
    bounds = [
        (math.log(sf0 * 1e-4), math.log(sf0 * 1e4)),
        (math.log(span * 1e-4), math.log(span * 1e3)),
        (math.log(sf0 * 1e-6), math.log(sf0 * 1e3)),
    ]
    box = [
        (math.log(sf0 * 0.3), math.log(sf0 * 3.0)),
        (math.log(span / 50.0), math.log(span)),
        (math.log(sf0 * 0.01), math.log(sf0)),
    ]
    if with_input_noise:
        ss0 = init.input_noise_std or span / 100.0
        bounds.append((math.log(ss0 * 1e-4), math.log(max(span, ss0 * 10))))
        box.append((math.log(ss0 * 0.1), math.log(ss0 * 10.0)))
    return bounds, box


def _optimize(theta0: np.ndarray, D2: np.ndarray, y: np.ndarray,
              slopes_sq: np.ndarray | None, extra_noise_diag,
              bounds, restart_box, restarts: int, rng: np.random.Generator,
              max_iter: int, grad_tol: float):
    """Best-of-restarts L-BFGS minimization of the negative log marginal
    likelihood in log-parameter space."""
    starts = [np.asarray(theta0, dtype=float)]
    lo = np.array([b[0] for b in restart_box])
    hi = np.array([b[1] for b in restart_box])
    for _ in range(restarts):
        starts.append(rng.uniform(lo, hi))

    best = None
    total_iterations = 0
    for start in starts:
        res = minimize(_nll_and_grad, start, args=(D2, y, slopes_sq, extra_noise_diag),
                       method="L-BFGS-B", jac=True, bounds=bounds,
                       options={"maxiter": max_iter, "gtol": grad_tol})
        total_iterations += int(res.nit)
        if best is None or res.fun < best.fun:
            best = res
    return best, total_iterations


def _hp_from_theta(theta: np.ndarray, with_input_noise: bool) -> GPHyperParams:
    return GPHyperParams(
        signal_std=math.exp(theta[0]),
        lengthscale=math.exp(theta[1]),
        noise_std=math.exp(theta[2]),
        input_noise_std=math.exp(theta[3]) if with_input_noise else None,
    )


def fit(inputs, targets, mode: str = STANDARD,
        init: GPHyperParams | None = None, restarts: int = 5,
        seed=None, nigp_iterations: int = 2, max_iter: int = 200,
        grad_tol: float = 1e-6,
        extra_noise_diag: np.ndarray | None = None) -> GPModel:
    """Train a GP by maximum marginal likelihood.

    Standard mode optimizes (signal_std, lengthscale, noise_std). The
    noisy-input mode first obtains a posterior (a standard fit, or the
    warm-start hyperparameters when ``init`` already carries an
    input_noise_std), then alternates ``nigp_iterations`` times between
    computing posterior-mean slopes at the training inputs and
    re-optimizing the likelihood with the slope-corrected noise diagonal
    held fixed.

    Non-convergence within ``max_iter`` returns the best point found with
    a warning flag in the diagnostics.
    """
    s = np.asarray(inputs, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if s.shape != y.shape:
        raise InvalidParameterError("inputs and targets differ in length")
    if s.size < 2:
        raise InvalidParameterError("need at least 2 training points")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y))):
        raise InvalidParameterError("training data must be finite")
    if mode not in (STANDARD, NOISY_INPUT):
        raise InvalidParameterError(f"unknown GP mode {mode!r}")

    rng = np.random.default_rng(seed)
    # A caller-supplied init that already carries an input-noise scale is a
    # warm start; the stage-1 standard fit is skipped in that case.
    warm_nigp = (mode == NOISY_INPUT and init is not None
                 and init.input_noise_std is not None)
    if init is None:
        init = _default_init(s, y, mode)
    D2 = (s[:, None] - s[None, :]) ** 2
    extra = (None if extra_noise_diag is None
             else np.asarray(extra_noise_diag, dtype=float).ravel())

    diagnostics: dict = {"restarts": restarts}
    total_iterations = 0

    theta_std = np.array([math.log(init.signal_std), math.log(init.lengthscale),
                          math.log(init.noise_std)])
    if warm_nigp:
        current = GPModel(NOISY_INPUT, init, s, y,
                          slopes=np.zeros(s.size), extra_noise_diag=extra)
        std_nll = None
    else:
        bounds, box = _bounds_and_restart_box(s, y, init, with_input_noise=False)
        res, nit = _optimize(theta_std, D2, y, None, extra, bounds, box,
                             restarts, rng, max_iter, grad_tol)
        total_iterations += nit
        hp = _hp_from_theta(res.x, with_input_noise=False)
        std_nll = float(res.fun)
        diagnostics["converged"] = bool(res.success)
        if mode == STANDARD:
            diagnostics["log_marginal_likelihood"] = -std_nll
            diagnostics["iterations"] = total_iterations
            if not res.success:
                diagnostics["warning"] = "optimizer stopped before convergence"
            return GPModel(STANDARD, hp, s, y, extra_noise_diag=extra,
                           diagnostics=diagnostics)
        current = GPModel(STANDARD, hp, s, y, extra_noise_diag=extra)

    # Noisy-input alternation: slopes from the current posterior, then a
    # likelihood pass over all four hyperparameters with slopes fixed.
    ss0 = init.input_noise_std or _default_init(s, y, NOISY_INPUT).input_noise_std
    hp = current.hyperparams
    best_nll = math.inf
    converged = True
    for _ in range(max(nigp_iterations, 1)):
        slopes = current.posterior_mean_slope(s)
        theta = np.array([math.log(hp.signal_std), math.log(hp.lengthscale),
                          math.log(hp.noise_std),
                          math.log(hp.input_noise_std or ss0)])
        nigp_init = replace(hp, input_noise_std=hp.input_noise_std or ss0)
        bounds, box = _bounds_and_restart_box(s, y, nigp_init, with_input_noise=True)
        res, nit = _optimize(theta, D2, y, slopes ** 2, extra, bounds, box,
                             restarts, rng, max_iter, grad_tol)
        total_iterations += nit
        converged = converged and bool(res.success)
        hp = _hp_from_theta(res.x, with_input_noise=True)
        best_nll = float(res.fun)
        current = GPModel(NOISY_INPUT, hp, s, y, slopes=slopes,
                          extra_noise_diag=extra)

    diagnostics["log_marginal_likelihood"] = -best_nll
    diagnostics["iterations"] = total_iterations
    diagnostics["converged"] = converged
    if std_nll is not None:
        diagnostics["standard_fit_log_ml"] = -std_nll
    if not converged:
        diagnostics["warning"] = "optimizer stopped before convergence"
    current.diagnostics.update(diagnostics)
    return current
