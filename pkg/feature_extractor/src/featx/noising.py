"""Forward-process noising of latent images.

The noisy latent at step t is built directly from the clean latent:

    z_t = sqrt(abar_t) * z0 + (1 - abar_t) * eps

with abar_t the cumulative product of (1 - beta) over the schedule and
eps a standard normal draw. The linear (1 - abar_t) noise coefficient
is the default deliberately, for fidelity with the registration recipe
this implements; the conventional closed form scales the noise by
sqrt(1 - abar_t) instead, selected with ``coefficient="sqrt"``. At
t = 1 the two are numerically almost identical because abar_1 is close
to 1.
"""

from __future__ import annotations

import numpy as np

NOISE_COEFFICIENTS = ("linear", "sqrt")


def linear_alpha_bars(steps: int = 1000, beta_start: float = 8.5e-4,
                      beta_end: float = 1.2e-2) -> np.ndarray:
    """Cumulative alpha products for a linear beta schedule.

    Index i holds abar_{i+1} (the product over the first i+1 steps), so
    alpha_bars[t - 1] is the coefficient source for time step t >= 1.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    return np.cumprod(1.0 - betas)


def noisy_latent(z0: np.ndarray, alpha_bar: float, eps: np.ndarray,
                 coefficient: str = "linear") -> np.ndarray:
    """Apply the forward noising formula at one step."""
    if not 0.0 < alpha_bar <= 1.0:
        raise ValueError(f"alpha_bar must lie in (0, 1], got {alpha_bar}")
    if coefficient not in NOISE_COEFFICIENTS:
        raise ValueError(f"coefficient must be one of {NOISE_COEFFICIENTS}")
    if eps.shape != z0.shape:
        raise ValueError("noise must match the latent shape")
    scale = (1.0 - alpha_bar) if coefficient == "linear" \
        else float(np.sqrt(1.0 - alpha_bar))
    return np.sqrt(alpha_bar) * z0 + scale * eps
