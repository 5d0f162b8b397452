"""Conditional DDPM/DDIM machinery on images scaled to [-1, 1].

Steps are 1-based: ``t in 1..T``. ``NoiseSchedule.gamma_at(0)`` is 1 so the
last DDIM hop lands exactly on the clean-image estimate.

Models are any callable ``model(cond, x_t, gamma_t) -> eps_hat`` where ``cond``
and ``x_t`` are ``(H, W, C)`` or ``(N, H, W, C)`` arrays and ``gamma_t`` is a
float or a length-N array. Objects that also expose ``forward``/``backward``
(see :mod:`hazediff.toynet`) get gradients from :func:`training_loss`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .imaging import DTYPE

EpsPredictor = Callable[[np.ndarray, np.ndarray, "float | np.ndarray"], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    alpha: np.ndarray  # float64, alpha[t-1] for t = 1..T
    gamma: np.ndarray  # cumulative product of alpha

    @property
    def T(self) -> int:
        return len(self.alpha)

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside 1..{self.T}")

    def alpha_at(self, t: int) -> float:
        self._check(t)
        return float(self.alpha[t - 1])

    def gamma_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.gamma[t - 1])


def make_schedule(T: int = 2000, beta_start: float = 1e-6, beta_end: float = 1e-2, kind: str = "linear") -> NoiseSchedule:
    if kind != "linear":
        raise ValueError(f"unsupported schedule kind {kind!r}")
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - betas
    return NoiseSchedule(alpha=alpha, gamma=np.cumprod(alpha))


def to_model_range(img: np.ndarray) -> np.ndarray:
    """[0,1] -> [-1,1], clamping first."""
    return (np.clip(img, 0.0, 1.0) * 2.0 - 1.0).astype(DTYPE)


def from_model_range(x: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(x) + 1.0) / 2.0, 0.0, 1.0).astype(DTYPE)


def forward_diffuse(J0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    J0, eps = np.asarray(J0), np.asarray(eps)
    if J0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} != image shape {J0.shape}")
    g = sched.gamma_at(t)
    return (np.sqrt(g) * J0 + np.sqrt(1.0 - g) * eps).astype(J0.dtype)


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, gamma_t: float) -> np.ndarray:
    """Invert the forward process given a noise estimate."""
    return (x_t - np.sqrt(1.0 - gamma_t) * eps_hat) / np.sqrt(gamma_t)


class EpsOracle:
    """Predicts the exact noise that produced ``x_t`` from a known clean ``J0``."""

    def __init__(self, J0: np.ndarray):
        self.J0 = np.asarray(J0, dtype=np.float64)

    def __call__(self, cond, x_t, gamma_t):
        x = np.asarray(x_t, dtype=np.float64)
        g = _gamma_channel(gamma_t, x) if np.ndim(gamma_t) else float(gamma_t)
        return (x - np.sqrt(g) * self.J0) / np.sqrt(1.0 - g)


def _gamma_channel(gammas: np.ndarray, like: np.ndarray) -> np.ndarray:
    return np.asarray(gammas, dtype=like.dtype).reshape((-1,) + (1,) * (like.ndim - 1))


def training_loss(model, I: np.ndarray, J0: np.ndarray, rng: np.random.Generator, sched: NoiseSchedule):
    """Mean-absolute epsilon-prediction loss for one (batched) draw of ``(t, eps)``.

    ``I`` and ``J0`` are model-range arrays, ``(H, W, C)`` or ``(N, H, W, C)``.
    One step is drawn per batch element. Returns ``(loss, grads)``; ``grads``
    is None when the model has no ``backward``.
    """
    I, J0 = np.asarray(I), np.asarray(J0)
    if I.shape[:-1] != J0.shape[:-1]:
        raise ValueError(f"condition {I.shape} and target {J0.shape} differ in size")
    batched = J0.ndim == 4
    if not batched:
        I, J0 = I[None], J0[None]
    n = J0.shape[0]
    ts = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(J0.shape).astype(J0.dtype)
    gammas = sched.gamma[ts - 1]
    g = _gamma_channel(gammas, J0)
    x_t = (np.sqrt(g) * J0 + np.sqrt(1.0 - g) * eps).astype(J0.dtype)

    if hasattr(model, "forward") and hasattr(model, "backward"):
        eps_hat, cache = model.forward(I, x_t, gammas)
    else:
        eps_hat, cache = np.asarray(model(I, x_t, gammas)), None
    diff = eps_hat - eps
    loss = float(np.mean(np.abs(diff), dtype=np.float64))
    grads = None
    if cache is not None:
        grad = (np.sign(diff) / diff.size).astype(eps_hat.dtype)
        grads = model.backward(cache, grad)
    return loss, grads


def ddpm_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One ancestral reverse step x_t -> x_{t-1}; the t == 1 step adds no noise."""
    a = sched.alpha_at(t)
    g = sched.gamma_at(t)
    coef = 0.0 if a == 1.0 else (1.0 - a) / np.sqrt(1.0 - g)
    mean = (x_t - coef * eps_hat) / np.sqrt(a)
    if t > 1 and a < 1.0:
        if rng is None:
            raise ValueError("ddpm_step needs an rng for t > 1")
        mean = mean + np.sqrt(1.0 - a) * rng.standard_normal(np.shape(x_t))
    return np.asarray(mean, dtype=np.asarray(x_t).dtype)


def ddim_timesteps(T: int, n_steps: int) -> np.ndarray:
    """``n_steps`` distinct steps evenly spaced over 1..T, in descending order."""
    if not 1 <= n_steps <= T:
        raise ValueError(f"n_steps must lie in 1..{T}, got {n_steps}")
    ts = np.unique(np.round(np.linspace(1, T, n_steps)).astype(int))
    return ts[::-1]


def ddim_chain(
    model: EpsPredictor,
    cond: np.ndarray,
    x_T: np.ndarray,
    sched: NoiseSchedule,
    n_steps: int,
    clip_x0: bool = True,
) -> np.ndarray:
    """Deterministic (eta = 0) DDIM from ``x_T`` down to a clean estimate, model range."""
    ts = ddim_timesteps(sched.T, n_steps)
    x = np.asarray(x_T, dtype=np.float64)
    for i, t in enumerate(ts):
        g = sched.gamma_at(int(t))
        g_next = sched.gamma_at(int(ts[i + 1])) if i + 1 < len(ts) else 1.0
        eps_hat = np.asarray(model(cond, x, g), dtype=np.float64)
        x0 = predict_x0(x, eps_hat, g)
        if clip_x0:
            x0 = np.clip(x0, -1.0, 1.0)
        x = np.sqrt(g_next) * x0 + np.sqrt(1.0 - g_next) * eps_hat
    return x


def ddim_sample(
    model: EpsPredictor,
    I: np.ndarray,
    sched: NoiseSchedule,
    n_steps: int = 20,
    rng: np.random.Generator | None = None,
    n_avg: int = 5,
) -> np.ndarray:
    """Dehaze ``I`` (a [0,1] image) by averaging ``n_avg`` DDIM chains; returns [0,1]."""
    if n_steps > sched.T:
        raise ValueError(f"n_steps={n_steps} exceeds T={sched.T}")
    if n_avg < 1:
        raise ValueError("n_avg must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    cond = to_model_range(I)
    acc = np.zeros(cond.shape, dtype=np.float64)
    for _ in range(n_avg):
        x_T = rng.standard_normal(cond.shape)
        acc += ddim_chain(model, cond, x_T, sched, n_steps)
    return from_model_range(acc / n_avg)
