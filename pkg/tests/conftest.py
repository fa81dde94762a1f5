import numpy as np
import pytest

from pianodiff.audio import AudioClip


def sine_clip(freq_hz: float, seconds: float, sample_rate: int,
              amplitude: float = 0.5) -> AudioClip:
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    samples = (amplitude * np.sin(2.0 * np.pi * freq_hz * t)).astype(np.float32)
    return AudioClip(samples=samples, sample_rate=sample_rate)


def silence_clip(seconds: float, sample_rate: int) -> AudioClip:
    n = int(round(seconds * sample_rate))
    return AudioClip(samples=np.zeros(n, dtype=np.float32), sample_rate=sample_rate)


def max_rel_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference, relative to the gradient scale."""
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def finite_diff_sampled(loss_fn, param, coords, h: float):
    """Central differences of loss_fn at the given flat coordinates of param."""
    flat = param.data.reshape(-1)
    grads = np.empty(len(coords))
    for i, c in enumerate(coords):
        orig = flat[c]
        flat[c] = orig + h
        f_plus = loss_fn()
        flat[c] = orig - h
        f_minus = loss_fn()
        flat[c] = orig
        grads[i] = (f_plus - f_minus) / (2.0 * h)
    return grads


def check_gradients(make_loss, params, h: float = 1e-5, max_coords: int = 8,
                    seed: int = 0):
    """Return the worst relative gradient error across all params.

    make_loss() must rebuild the graph and return the scalar loss Tensor.
    Gradients are checked on up to max_coords sampled coordinates per
    parameter against central finite differences.
    """
    loss = make_loss()
    for p in params:
        p.grad = None
    loss.backward()
    analytic = {id(p): p.grad.copy() for p in params}
    rng = np.random.default_rng(seed)

    def loss_value():
        return make_loss().item()

    worst = 0.0
    for p in params:
        size = p.data.size
        coords = (np.arange(size) if size <= max_coords
                  else rng.choice(size, size=max_coords, replace=False))
        numeric = finite_diff_sampled(loss_value, p, coords, h)
        ad = analytic[id(p)].reshape(-1)[coords]
        worst = max(worst, max_rel_grad_error(ad, numeric))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
