"""Noise schedule, v-objective and samplers.

Continuous time t in [0,1] with the fixed cosine schedule
alpha = cos(pi*t/2), sigma = sin(pi*t/2), so alpha^2 + sigma^2 = 1.
The network predicts v = alpha*noise - sigma*x0; signal and noise are
recovered as x0 = alpha*x_t - sigma*v and eps = sigma*x_t + alpha*v.

DDIM walks a descending uniform time grid deterministically (eta = 0);
the ancestral sampler is the same walk with the eta = 1 variance term.
"""

from __future__ import annotations

import numpy as np

from .errors import DimMismatch, TOutOfRange
from .nn import tensor as T
from .nn.tensor import Tensor, no_grad


def alpha_sigma(t):
    """Schedule coefficients for scalar or array t in [0, 1]."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise TOutOfRange(f"diffusion time must lie in [0, 1], got {t}")
    return np.cos(0.5 * np.pi * t), np.sin(0.5 * np.pi * t)


def _per_batch(coef: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Broadcast per-element schedule values over trailing axes."""
    coef = np.atleast_1d(coef)
    return coef.reshape((-1,) + (1,) * (like.ndim - 1)).astype(like.dtype)


def q_sample(x0: np.ndarray, noise: np.ndarray, t) -> np.ndarray:
    """Noised sample x_t = alpha*x0 + sigma*noise."""
    if x0.shape != noise.shape:
        raise DimMismatch(f"x0 {x0.shape} vs noise {noise.shape}")
    alpha, sigma = alpha_sigma(t)
    if np.ndim(t) == 0:
        return alpha * x0 + sigma * noise
    return _per_batch(alpha, x0) * x0 + _per_batch(sigma, x0) * noise


def v_target(x0: np.ndarray, noise: np.ndarray, t) -> np.ndarray:
    """Regression target v = alpha*noise - sigma*x0."""
    if x0.shape != noise.shape:
        raise DimMismatch(f"x0 {x0.shape} vs noise {noise.shape}")
    alpha, sigma = alpha_sigma(t)
    if np.ndim(t) == 0:
        return alpha * noise - sigma * x0
    return _per_batch(alpha, x0) * noise - _per_batch(sigma, x0) * x0


def loss_v(model, x0: np.ndarray, cond: Tensor, rng: np.random.Generator) -> Tensor:
    """Mean-squared v-prediction error over a batch.

    x0: [B, 1, L]. Per element, t ~ U(0,1) and noise ~ N(0,1).
    """
    batch = x0.shape[0]
    t = rng.uniform(0.0, 1.0, size=batch)
    noise = rng.standard_normal(x0.shape).astype(x0.dtype)
    x_t = q_sample(x0, noise, t)
    target = v_target(x0, noise, t)
    v_hat = model(Tensor(x_t), t, cond)
    diff = v_hat - Tensor(target)
    return T.tmean(diff * diff)


def _sample(model, cond: Tensor, steps: int, seed: int, eta: float,
            input_length: int) -> np.ndarray:
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    batch = cond.shape[0]
    x = rng.standard_normal((batch, 1, input_length)).astype(np.float32)

    grid = np.linspace(1.0, 0.0, steps + 1)
    with no_grad():
        for k in range(steps):
            t_now, t_next = grid[k], grid[k + 1]
            a_t, s_t = alpha_sigma(t_now)
            a_s, s_s = alpha_sigma(t_next)
            v_hat = model(Tensor(x), np.full(batch, t_now), cond).data
            x0_hat = a_t * x - s_t * v_hat
            eps_hat = s_t * x + a_t * v_hat
            if eta > 0.0 and s_t > 0.0 and a_s > 0.0:
                ratio = min(1.0, (a_t / a_s) ** 2)
                noise_scale = eta * (s_s / s_t) * np.sqrt(max(0.0, 1.0 - ratio))
            else:
                noise_scale = 0.0
            keep = np.sqrt(max(0.0, s_s * s_s - noise_scale * noise_scale))
            x = a_s * x0_hat + keep * eps_hat
            if noise_scale > 0.0:
                x = x + noise_scale * rng.standard_normal(x.shape).astype(np.float32)
            x = x.astype(np.float32)
    return x


def ddim_sample(model, cond: Tensor, steps: int, seed: int,
                input_length: int | None = None) -> np.ndarray:
    """Deterministic sampler; identical (weights, cond, steps, seed) give
    bit-identical output."""
    length = input_length if input_length is not None else model.config.input_length
    return _sample(model, cond, steps, seed, eta=0.0, input_length=length)


def ddpm_sample(model, cond: Tensor, steps: int, seed: int,
                input_length: int | None = None, eta: float = 1.0) -> np.ndarray:
    """Ancestral sampler (seeded); eta = 0 degenerates to ddim_sample."""
    length = input_length if input_length is not None else model.config.input_length
    return _sample(model, cond, steps, seed, eta=eta, input_length=length)
