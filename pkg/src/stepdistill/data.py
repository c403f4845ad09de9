"""Synthetic low-dimensional target distributions."""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError


@dataclass(frozen=True)
class DataSpec:
    kind: str
    dim: int
    mode_count: int
    mode_means: np.ndarray
    mode_std: float
    radius: float = 4.0
    square: float = 0.0  # checkerboard cell side, 0 for mixtures

    def __post_init__(self):
        means = np.asarray(self.mode_means, dtype=np.float64)
        if means.shape != (self.mode_count, self.dim):
            raise ValidationError(f"mode_means shape {means.shape} != ({self.mode_count}, {self.dim})")
        d = np.linalg.norm(means[:, None] - means[None], axis=-1)
        if np.any(d[np.triu_indices(self.mode_count, 1)] <= 0):
            raise ValidationError("mode means must be pairwise distinct")
        if self.mode_std <= 0:
            raise ValidationError("mode_std must be positive")
        object.__setattr__(self, "mode_means", means)

    @property
    def weights(self):
        return np.full(self.mode_count, 1.0 / self.mode_count)

    def sample(self, n, rng, labels=None):
        """Draw ``n`` points; returns (x, labels)."""
        if labels is None:
            labels = rng.integers(0, self.mode_count, size=n)
        labels = np.asarray(labels)
        if self.kind == "checkerboard":
            offs = rng.uniform(-0.5, 0.5, size=(n, self.dim)) * self.square
        else:
            offs = rng.normal(0.0, self.mode_std, size=(n, self.dim))
        return self.mode_means[labels] + offs, labels

    def log_density(self, x):
        """Log density of the mixture (Gaussian surrogate for checkerboard cells)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d2 = ((x[:, None, :] - self.mode_means[None]) ** 2).sum(-1)
        s2 = self.mode_std ** 2
        comp = -0.5 * d2 / s2 - 0.5 * self.dim * np.log(2 * np.pi * s2)
        return logsumexp(comp + np.log(self.weights), axis=1)

    def nearest_mode(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d2 = ((x[:, None, :] - self.mode_means[None]) ** 2).sum(-1)
        return d2.argmin(axis=1)

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "mode_count": self.mode_count,
                "mode_std": self.mode_std, "radius": self.radius}


def gmm_ring(mode_count=8, radius=4.0, mode_std=0.15):
    ang = 2 * np.pi * np.arange(mode_count) / mode_count
    means = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return DataSpec("gmm-ring", 2, mode_count, means, float(mode_std), radius=float(radius))


def checkerboard(square=2.0):
    """8 filled cells of a 4x4 board spanning [-2s, 2s]^2."""
    centers = []
    for i in range(4):
        for j in range(4):
            if (i + j) % 2 == 0:
                centers.append(((i - 1.5) * square, (j - 1.5) * square))
    means = np.array(centers)
    return DataSpec("checkerboard", 2, len(centers), means, square / np.sqrt(12.0),
                    radius=float(2 * square), square=float(square))


def make_data(kind="gmm-ring", mode_count=8, radius=4.0, mode_std=0.15, square=2.0):
    if kind == "gmm-ring":
        return gmm_ring(mode_count, radius, mode_std)
    if kind == "checkerboard":
        return checkerboard(square)
    raise ValidationError(f"unknown data kind {kind!r}")
