"""Sample-quality metrics: PRDC, Frechet distance, mode coverage, and a
reward/FID decorrelation monitor."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ValidationError


@dataclass(frozen=True)
class PRDCResult:
    precision: float
    recall: float
    density: float
    coverage: float

    def as_dict(self):
        return {"precision": self.precision, "recall": self.recall,
                "density": self.density, "coverage": self.coverage}


def knn_radii(points, k):
    """Distance from each point to its k-th nearest other point."""
    d = cdist(points, points)
    return np.sort(d, axis=1)[:, k]


def prdc(real, fake, k=5):
    """Precision, recall, density and coverage from k-NN balls.

    A point is inside a ball when its distance is strictly smaller than the
    ball radius. Density is not capped at 1.
    """
    real = np.asarray(real, dtype=np.float64).reshape(len(real), -1)
    fake = np.asarray(fake, dtype=np.float64).reshape(len(fake), -1)
    if len(real) < k + 1 or len(fake) < k + 1:
        raise ValidationError(f"prdc needs at least k+1={k + 1} points in each set")
    r_real = knn_radii(real, k)
    r_fake = knn_radii(fake, k)
    d_rf = cdist(real, fake)
    inside_real = d_rf < r_real[:, None]
    precision = inside_real.any(axis=0).mean()
    recall = (d_rf < r_fake[None, :]).any(axis=1).mean()
    density = int(inside_real.sum()) / (k * len(fake))
    coverage = (d_rf.min(axis=1) < r_real).mean()
    return PRDCResult(float(precision), float(recall), float(density), float(coverage))


def _sqrtm_psd(m):
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.min() < -1e-8 * max(1.0, abs(w).max()):
        raise ValidationError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(real, fake):
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)) between Gaussian fits.

    The cross term is evaluated as Tr((S1^(1/2) S2 S1^(1/2))^(1/2)), which is
    symmetric PSD and so needs only eigendecompositions.
    """
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if real.ndim == 1:
        real, fake = real[:, None], fake.reshape(-1, 1)
    d = real.shape[1]
    if len(real) < d + 1 or len(fake) < d + 1:
        raise ValidationError("each set needs at least dim + 1 points")
    mu1, mu2 = real.mean(0), fake.mean(0)
    s1 = np.atleast_2d(np.cov(real, rowvar=False))
    s2 = np.atleast_2d(np.cov(fake, rowvar=False))
    if not (np.all(np.isfinite(s1)) and np.all(np.isfinite(s2))):
        raise ValidationError("covariance is not finite")
    r1 = _sqrtm_psd(s1)
    cross = _sqrtm_psd(r1 @ s2 @ r1)
    val = ((mu1 - mu2) ** 2).sum() + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(cross)
    return float(max(val, 0.0))


def mode_metrics(samples, data, threshold=0.02):
    """Per-mode mass under nearest-mode assignment and the covered-mode count."""
    samples = np.atleast_2d(samples)
    if len(samples) == 0:
        raise ValidationError("no samples")
    labels = data.nearest_mode(samples)
    mass = np.bincount(labels, minlength=data.mode_count) / len(samples)
    return {"mass": mass, "covered": int((mass >= threshold).sum())}


def _trailing_slopes(y, window):
    """Least-squares slope of y over each trailing window; NaN before it fills."""
    y = np.asarray(y, dtype=np.float64)
    out = np.full(len(y), np.nan)
    x = np.arange(window) - (window - 1) / 2.0
    denom = (x * x).sum()
    for e in range(window - 1, len(y)):
        seg = y[e - window + 1:e + 1]
        out[e] = (x * (seg - seg.mean())).sum() / denom
    return out


def overopt_monitor(reward_curve, fid_curve, window=5, tol=1e-12):
    """First epoch of a run of ``window`` consecutive epochs in which the
    trailing reward trend and the trailing FID trend are both positive.

    Returns (flagged, epoch) with epoch None when nothing is flagged.
    """
    if len(reward_curve) != len(fid_curve):
        raise ValidationError("reward and FID curves must have the same length")
    if len(reward_curve) < 2 * window:
        raise ValidationError(f"curves need at least {2 * window} epochs")
    rs = _trailing_slopes(reward_curve, window)
    fs = _trailing_slopes(fid_curve, window)
    bad = (rs > tol) & (fs > tol)
    run = 0
    for e, b in enumerate(bad):
        run = run + 1 if b else 0
        if run == window:
            return True, e - window + 1
    return False, None


class SampleEvaluator:
    """Scores sample sets against a fixed reference draw from the data.

    Toy-FID is the Frechet distance between embeddings from the frozen
    encoder with seed 0; PRDC is computed on the raw 2-d samples.
    """

    def __init__(self, data, n_samples=2048, seed=12345, k=5, encoder_seed=0):
        from .rewards import Encoder

        self.data = data
        self.n = int(n_samples)
        self.k = k
        self.seed = seed
        self.encoder = Encoder(data.dim, encoder_seed)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EA1]))
        labels = np.arange(self.n) % data.mode_count
        self.real, _ = data.sample(self.n, rng, labels=labels)
        self.real_emb = self.encoder(self.real)

    def conditions(self):
        return np.arange(self.n) % self.data.mode_count

    def evaluate_samples(self, samples):
        samples = np.asarray(samples, dtype=np.float64)
        pr = prdc(self.real, samples, self.k)
        out = {"fid": frechet_distance(self.real_emb, self.encoder(samples))}
        out.update(pr.as_dict())
        out["covered_modes"] = mode_metrics(samples, self.data)["covered"]
        return out

    def __call__(self, policy):
        from .student import rollout_batch

        ro = rollout_batch(policy, self.conditions(), seed=self.seed + 1)
        return self.evaluate_samples(ro.finals)
