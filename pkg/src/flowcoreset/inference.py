"""Weighted Bayesian logistic regression and baselines.

The model is slope-only logistic regression with a standard normal prior:

    log p(theta | data) = -||theta||^2 / 2
                          + sum_i w_i * log sigmoid(y_i * theta . x_i) + const

Integer weights replicate samples exactly, which is what lets a small
weighted subset stand in for the full dataset during inference. Sampling
is plain Hamiltonian Monte Carlo with dual-averaging step size adaptation
during burn-in. A Pegasos-style linear SVM provides a non-Bayesian
reference point.
"""

import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .data import Dataset
from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)

# Weights above this trigger a common rescale before sampling; scaling all
# weights together only sharpens the likelihood term uniformly and keeps
# exp() in range.
_WEIGHT_GUARD = 1e6

# Dual averaging constants.
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75

# Divergence watchdog: abort when more than half of this many consecutive
# proposals diverge.
_DIVERGENCE_WINDOW = 100


def log_sigmoid(margins: np.ndarray) -> np.ndarray:
    """log(sigmoid(m)), stable for margins far into either tail."""
    return -np.logaddexp(0.0, -np.asarray(margins, dtype=np.float64))


def sigmoid(margins: np.ndarray) -> np.ndarray:
    """sigmoid(m) computed through its log for stability."""
    return np.exp(log_sigmoid(margins))


@dataclass(frozen=True)
class WeightedBLRModel:
    """Design matrix, labels in {+1, -1}, and per-sample likelihood weights.

    n = 0 is allowed and leaves the standard normal prior as the posterior.
    """

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"design matrix must be 2-d, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DataError("label vector does not match design matrix rows")
        if y.size and not np.all(np.isin(y, (-1.0, 1.0))):
            raise DataError("labels must be +1 or -1")
        if self.weights is None:
            w = np.ones(x.shape[0])
        else:
            w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != y.shape:
            raise DataError("weight vector does not match label vector")
        if w.size and (not np.all(np.isfinite(w)) or np.any(w < 0)):
            raise DataError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(x)):
            raise DataError("design matrix contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weights", w)
        # Caches for the sampler's inner loop.
        yx = y[:, None] * x
        object.__setattr__(self, "_yx", yx)
        object.__setattr__(self, "_wyx_t", np.ascontiguousarray((w[:, None] * yx).T))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def f(self) -> int:
        return self.x.shape[1]

    @staticmethod
    def from_dataset(data: Dataset, weights: np.ndarray | None = None):
        return WeightedBLRModel(data.x, data.y, weights)


def log_posterior(model: WeightedBLRModel, theta: np.ndarray):
    """Unnormalized log posterior and its gradient at theta.

    Returns:
        (value, gradient) where gradient has shape (f,). A non-finite theta
        yields value -inf rather than raising, so the sampler can treat it
        as a divergence.
    """
    theta = np.asarray(theta, dtype=np.float64)
    # Overflowing trajectories surface as -inf values, not warnings; the
    # sampler treats them as divergences.
    with np.errstate(over="ignore", invalid="ignore"):
        margins = model._yx @ theta
        loglik = float(model.weights @ log_sigmoid(margins))
        value = -0.5 * float(theta @ theta) + loglik
        # d/dm of log sigmoid(m) is sigmoid(-m).
        grad = model._wyx_t @ sigmoid(-margins) - theta
    if not math.isfinite(value):
        value = -math.inf
    return value, grad


def fit_map(model: WeightedBLRModel, gtol: float = 1e-8) -> np.ndarray:
    """Posterior mode by deterministic quasi-Newton optimization.

    Raises:
        NumericalError: the optimizer failed to drive the gradient down,
            with iterate diagnostics attached.
    """

    def objective(theta):
        value, grad = log_posterior(model, theta)
        return -value, -grad

    result = minimize(
        objective,
        np.zeros(model.f),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 1000, "gtol": gtol},
    )
    grad_norm = float(np.max(np.abs(result.jac)))
    if not np.all(np.isfinite(result.x)) or grad_norm > 1e-4 * max(1.0, model.n):
        raise NumericalError(
            "MAP optimization did not converge",
            diagnostics={
                "status": int(result.status),
                "message": str(result.message),
                "iterations": int(result.nit),
                "grad_max": grad_norm,
                "objective": float(result.fun),
            },
        )
    return result.x


def laplace_scales(model: WeightedBLRModel, theta_map: np.ndarray) -> np.ndarray:
    """Per-coordinate posterior scales from a diagonal curvature estimate.

    The negative log posterior has diagonal second derivative
    1 + sum_i w_i s_i (1 - s_i) x_if^2 with s_i the fitted probability.
    """
    margins = model._yx @ theta_map
    s = sigmoid(margins)
    curvature = 1.0 + (model.weights * s * (1.0 - s)) @ (model.x**2)
    return 1.0 / np.sqrt(curvature)


@dataclass(frozen=True)
class PosteriorSamples:
    """Retained HMC draws plus the sampler settings that produced them."""

    draws: np.ndarray
    acceptance_rate: float
    step_size: float
    leapfrog_steps: int
    burn_in: int
    thinning: int
    rng_seed: int
    n_divergent: int = 0
    weight_rescale: float = 1.0

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def settings_dict(self) -> dict:
        return {
            "acceptance_rate": self.acceptance_rate,
            "step_size": self.step_size,
            "leapfrog_steps": self.leapfrog_steps,
            "burn_in": self.burn_in,
            "thinning": self.thinning,
            "rng_seed": self.rng_seed,
            "n_divergent": self.n_divergent,
            "weight_rescale": self.weight_rescale,
            "n_draws": int(self.draws.shape[0]),
            "f": int(self.draws.shape[1]),
        }


def _leapfrog(model, theta, grad, p, eps, n_steps):
    with np.errstate(over="ignore", invalid="ignore"):
        theta = theta.copy()
        p = p + 0.5 * eps * grad
        logp = -math.inf
        for step in range(n_steps):
            theta += eps * p
            logp, grad = log_posterior(model, theta)
            if step < n_steps - 1:
                p += eps * grad
        p += 0.5 * eps * grad
    return theta, p, logp, grad


def _find_initial_step(model, theta, logp, grad, rng):
    """Double or halve until one leapfrog step crosses 50% acceptance."""
    eps = 1.0
    p = rng.normal(size=theta.shape[0])
    h0 = -logp + 0.5 * float(p @ p)

    def energy_drop(eps):
        t1, p1, logp1, _ = _leapfrog(model, theta, grad, p, eps, 1)
        h1 = -logp1 + 0.5 * float(p1 @ p1)
        delta = h0 - h1
        return delta if math.isfinite(delta) else -math.inf

    delta = energy_drop(eps)
    direction = 1.0 if delta > math.log(0.5) else -1.0
    for _ in range(100):
        # Loop while exp(delta)^direction > 2^-direction, in log space.
        if not direction * delta > -direction * math.log(2.0):
            break
        eps *= 2.0**direction
        if eps > 1e7 or eps < 1e-10:
            break
        delta = energy_drop(eps)
    return eps


def hmc_sample(
    model: WeightedBLRModel,
    total_samples: int = 10000,
    burn_frac: float = 0.5,
    thin: int = 2,
    target_accept: float = 0.8,
    rng_seed: int = 0,
    leapfrog_steps: int = 20,
    jitter: float = 0.2,
    initial_step_size: float | None = None,
) -> PosteriorSamples:
    """Sample the weighted logistic posterior with HMC.

    Burn-in draws adapt the step size by dual averaging toward
    target_accept and are discarded; the post-burn-in chain runs at the
    frozen averaged step size and is thinned by `thin`. The leapfrog count
    per proposal is jittered uniformly by +-jitter around leapfrog_steps.

    Raises:
        NumericalError: more than half of a recent window of proposals
            diverged (non-finite Hamiltonian).
    """
    if total_samples < 1:
        raise DataError("total_samples must be at least 1")
    if not 0.0 <= burn_frac < 1.0:
        raise DataError("burn_frac must lie in [0, 1)")
    if thin < 1:
        raise DataError("thin must be at least 1")
    if not 0.0 < target_accept < 1.0:
        raise DataError("target_accept must lie in (0, 1)")
    if leapfrog_steps < 1:
        raise DataError("leapfrog_steps must be at least 1")
    if not 0.0 <= jitter < 1.0:
        raise DataError("jitter must lie in [0, 1)")

    rescale = 1.0
    w_max = float(model.weights.max()) if model.n else 0.0
    if w_max > _WEIGHT_GUARD:
        rescale = w_max
        logger.warning("weights rescaled by %.3g before sampling", rescale)
        model = WeightedBLRModel(model.x, model.y, model.weights / rescale)

    rng = np.random.default_rng(rng_seed)
    theta = np.zeros(model.f)
    logp, grad = log_posterior(model, theta)

    eps = initial_step_size or _find_initial_step(model, theta, logp, grad, rng)
    n_burn = int(round(total_samples * burn_frac))
    if total_samples - n_burn < 1:
        raise DataError("burn_frac leaves no retained draws")

    mu = math.log(10.0 * eps)
    log_eps = math.log(eps)
    log_eps_bar = 0.0
    h_bar = 0.0
    eps_final = eps

    kept = []
    recent = deque(maxlen=_DIVERGENCE_WINDOW)
    n_divergent = 0
    post_accepted = 0
    post_total = 0

    for t in range(1, total_samples + 1):
        adapting = t <= n_burn
        eps = math.exp(log_eps) if adapting else eps_final
        spread = rng.uniform(1.0 - jitter, 1.0 + jitter)
        n_steps = max(1, int(round(leapfrog_steps * spread)))
        p0 = rng.normal(size=model.f)
        h0 = -logp + 0.5 * float(p0 @ p0)
        theta1, p1, logp1, grad1 = _leapfrog(model, theta, grad, p0, eps, n_steps)
        with np.errstate(over="ignore", invalid="ignore"):
            h1 = -logp1 + 0.5 * float(p1 @ p1)
        delta = h0 - h1 if math.isfinite(h1) else -math.inf
        divergent = not math.isfinite(delta)
        alpha = 0.0 if divergent else min(1.0, math.exp(min(delta, 0.0)))
        accepted = False
        if divergent:
            n_divergent += 1
        elif rng.uniform() < alpha:
            theta, logp, grad = theta1, logp1, grad1
            accepted = True

        recent.append(divergent)
        if len(recent) == _DIVERGENCE_WINDOW and sum(recent) > _DIVERGENCE_WINDOW // 2:
            raise NumericalError(
                "HMC aborted: persistent divergences",
                diagnostics={
                    "iteration": t,
                    "step_size": eps,
                    "recent_divergent": int(sum(recent)),
                    "window": _DIVERGENCE_WINDOW,
                    "n_divergent_total": n_divergent,
                    "theta_norm": float(np.linalg.norm(theta)),
                },
            )

        if adapting:
            frac = 1.0 / (t + _DA_T0)
            h_bar = (1.0 - frac) * h_bar + frac * (target_accept - alpha)
            log_eps = mu - math.sqrt(t) / _DA_GAMMA * h_bar
            weight = t**-_DA_KAPPA
            log_eps_bar = weight * log_eps + (1.0 - weight) * log_eps_bar
            if t == n_burn:
                eps_final = math.exp(log_eps_bar)
        else:
            post_total += 1
            post_accepted += int(accepted)
            if (t - n_burn - 1) % thin == 0:
                kept.append(theta.copy())

    draws = np.vstack(kept)
    acceptance = post_accepted / post_total if post_total else 0.0
    return PosteriorSamples(
        draws=draws,
        acceptance_rate=acceptance,
        step_size=eps_final,
        leapfrog_steps=leapfrog_steps,
        burn_in=n_burn,
        thinning=thin,
        rng_seed=rng_seed,
        n_divergent=n_divergent,
        weight_rescale=rescale,
    )


def predict_batch(
    posterior: PosteriorSamples, x: np.ndarray, n_draws: int = 1000
) -> np.ndarray:
    """Posterior predictive P(y=+1 | x) for each row of x.

    Averages sigmoid(theta . x) over the last n_draws retained draws.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if n_draws < 1:
        raise DataError("n_draws must be at least 1")
    if n_draws > posterior.n_draws:
        raise DataError(
            f"requested {n_draws} draws, posterior holds {posterior.n_draws}"
        )
    draws = posterior.draws[-n_draws:]
    return sigmoid(x @ draws.T).mean(axis=1)


def predict(posterior: PosteriorSamples, x: np.ndarray, n_draws: int = 1000) -> float:
    """Posterior predictive probability for a single feature vector."""
    return float(predict_batch(posterior, np.atleast_2d(x), n_draws)[0])


def classify(probabilities: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Map predictive probabilities to labels: +1 strictly above threshold."""
    return np.where(np.asarray(probabilities) > threshold, 1.0, -1.0)


def accuracy(
    posterior: PosteriorSamples, data: Dataset, n_draws: int = 1000
) -> float:
    probs = predict_batch(posterior, data.x, n_draws)
    return float(np.mean(classify(probs) == data.y))


def svm_train(
    data: Dataset, epochs: int = 5, reg: float = 1e-3, rng_seed: int = 0
) -> np.ndarray:
    """Train a slope-only linear SVM with the Pegasos update.

    One step per draw: pick a sample uniformly, shrink theta by the
    regularizer, add the hinge subgradient when the margin is violated,
    then project onto the ball of radius 1/sqrt(reg).

    Returns:
        theta of shape (f,); predict with sign(theta . x).
    """
    if data.n < 1:
        raise DataError("cannot train on an empty dataset")
    if epochs < 1:
        raise DataError("epochs must be at least 1")
    if reg <= 0:
        raise DataError("reg must be positive")
    rng = np.random.default_rng(rng_seed)
    theta = np.zeros(data.f)
    radius = 1.0 / math.sqrt(reg)
    t = 0
    for _ in range(epochs):
        order = rng.integers(0, data.n, size=data.n)
        for i in order:
            t += 1
            eta = 1.0 / (reg * t)
            margin = data.y[i] * float(theta @ data.x[i])
            theta *= 1.0 - eta * reg
            if margin < 1.0:
                theta += eta * data.y[i] * data.x[i]
            norm = float(np.linalg.norm(theta))
            if norm > radius:
                theta *= radius / norm
    return theta


def svm_predict(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Labels from the linear score; nonpositive scores go to -1."""
    scores = np.atleast_2d(np.asarray(x, dtype=np.float64)) @ theta
    return np.where(scores > 0.0, 1.0, -1.0)


def svm_accuracy(theta: np.ndarray, data: Dataset) -> float:
    return float(np.mean(svm_predict(theta, data.x) == data.y))


def save_posterior(posterior: PosteriorSamples, stem: str | Path):
    """Persist draws as <stem>.npy and settings as <stem>.json."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    np.save(stem.with_suffix(".npy"), posterior.draws)
    stem.with_suffix(".json").write_text(
        json.dumps(posterior.settings_dict()) + "\n"
    )


def load_posterior(stem: str | Path) -> PosteriorSamples:
    stem = Path(stem)
    npy = stem.with_suffix(".npy")
    meta_path = stem.with_suffix(".json")
    if not npy.is_file() or not meta_path.is_file():
        raise DataError(f"{stem}: posterior artifacts missing")
    draws = np.load(npy)
    meta = json.loads(meta_path.read_text())
    return PosteriorSamples(
        draws=draws,
        acceptance_rate=meta["acceptance_rate"],
        step_size=meta["step_size"],
        leapfrog_steps=meta["leapfrog_steps"],
        burn_in=meta["burn_in"],
        thinning=meta["thinning"],
        rng_seed=meta["rng_seed"],
        n_divergent=meta["n_divergent"],
        weight_rescale=meta["weight_rescale"],
    )
