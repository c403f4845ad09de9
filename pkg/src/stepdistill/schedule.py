"""Discrete DDPM noise schedules and the closed-form forward marginal.

Timesteps are 1-based: ``betas[t - 1]`` is beta_t, and ``alpha_bar(0) == 1``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    kind: str = "linear"
    beta_min: float = 0.0
    beta_max: float = 0.0
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.shape != (self.T,):
            raise ValidationError(f"expected {self.T} betas, got shape {betas.shape}")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValidationError("all betas must lie in the open interval (0, 1)")
        betas = betas.copy()
        betas.flags.writeable = False
        alphas = 1.0 - betas
        alphas.flags.writeable = False
        alpha_bars = np.cumprod(alphas)
        alpha_bars.flags.writeable = False
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    def alpha_bar(self, t):
        """alpha_bar_t with the convention alpha_bar_0 = 1 (vectorised over t)."""
        t = np.asarray(t)
        padded = np.concatenate([[1.0], self.alpha_bars])
        return padded[t]

    def posterior_variance(self, clip_first=True):
        """beta_tilde_t = beta_t (1 - abar_{t-1}) / (1 - abar_t) for t = 1..T.

        beta_tilde_1 is exactly zero; with ``clip_first`` it is replaced by
        beta_tilde_2 so every reverse step has a proper density.
        """
        abar_prev = self.alpha_bar(np.arange(0, self.T))
        var = self.betas * (1.0 - abar_prev) / (1.0 - self.alpha_bars)
        if clip_first and self.T > 1:
            var = var.copy()
            var[0] = var[1]
        return var

    def posterior_coefficients(self):
        """Coefficients (c_x0, c_xt) of the posterior mean of q(x_{t-1} | x_t, x_0)."""
        abar_prev = self.alpha_bar(np.arange(0, self.T))
        denom = 1.0 - self.alpha_bars
        c_x0 = np.sqrt(abar_prev) * self.betas / denom
        c_xt = np.sqrt(self.alphas) * (1.0 - abar_prev) / denom
        return c_x0, c_xt

    def descriptor(self):
        return {
            "kind": self.kind,
            "T": int(self.T),
            "beta_min": float(self.beta_min),
            "beta_max": float(self.beta_max),
        }


def _cosine_betas(T, beta_max, s=0.008):
    steps = np.arange(T + 1, dtype=np.float64) / T
    f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
    abar = f / f[0]
    betas = 1.0 - abar[1:] / abar[:-1]
    return np.clip(betas, 1e-8, beta_max)


def build_schedule(kind="linear", T=50, beta_min=1e-3, beta_max=0.25):
    """Build a noise schedule.

    ``linear`` spaces beta_t affinely from ``beta_min`` to ``beta_max``.
    ``cosine`` uses the squared-cosine alpha_bar curve, with betas clipped
    to ``[beta_min, beta_max]``.
    """
    if int(T) != T or T < 2:
        raise ValidationError(f"T must be an integer >= 2, got {T}")
    T = int(T)
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValidationError(
            f"need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
        )
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, T)
    elif kind == "cosine":
        betas = np.clip(_cosine_betas(T, beta_max), beta_min, beta_max)
    else:
        raise ValidationError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(T=T, betas=betas, kind=kind, beta_min=float(beta_min), beta_max=float(beta_max))


def schedule_from_descriptor(desc):
    return build_schedule(desc["kind"], desc["T"], desc["beta_min"], desc["beta_max"])


def forward_marginal(schedule, x0, t, noise):
    """Sample x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.

    ``t`` may be a scalar or an integer array broadcastable against the
    leading axis of ``x0``.
    """
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.T):
        raise ValidationError(f"timestep out of range [1, {schedule.T}]: {t}")
    abar = schedule.alpha_bar(t_arr)
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if abar.ndim > 0:
        abar = abar.reshape(abar.shape + (1,) * (x0.ndim - abar.ndim))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def forward_step(schedule, x_prev, t, noise):
    """One forward transition x_t ~ N(sqrt(alpha_t) x_{t-1}, beta_t I)."""
    if not 1 <= t <= schedule.T:
        raise ValidationError(f"timestep out of range [1, {schedule.T}]: {t}")
    return np.sqrt(schedule.alphas[t - 1]) * x_prev + np.sqrt(schedule.betas[t - 1]) * noise
