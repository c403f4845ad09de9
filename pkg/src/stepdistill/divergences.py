"""f-divergences and Renyi divergence between diagonal Gaussians.

kl, chi2 and renyi use closed forms. js and power are integrated on a
trapezoid grid spanning +-10 pooled standard deviations around the midpoint
of the two means; :func:`divergence` refines that grid until it converges.

:func:`divergence_and_grad` is the batched path used during training; it
also returns derivatives with respect to the first argument's mean and std.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import DomainError, ValidationError

KINDS = ("kl", "js", "chi2", "power", "renyi")


@dataclass(frozen=True)
class DivergenceSpec:
    kind: str = "kl"
    alpha: float = 0.5  # renyi order
    lam: float = 1.0  # Cressie-Read power index

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown divergence kind {self.kind!r}")
        if self.kind == "renyi" and (self.alpha <= 0 or self.alpha == 1):
            raise ValidationError("renyi order must satisfy alpha > 0, alpha != 1")
        if self.kind == "power" and self.lam in (0, -1):
            raise ValidationError("power index must differ from 0 and -1")

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "renyi":
            out["alpha"] = self.alpha
        if self.kind == "power":
            out["lambda"] = self.lam
        return out

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"kind", "alpha", "lambda"}
        if extra:
            raise ValidationError(f"unknown divergence keys {sorted(extra)}")
        return cls(kind=d["kind"], alpha=float(d.get("alpha", 0.5)), lam=float(d.get("lambda", 1.0)))


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.broadcast_to(np.asarray(self.std, dtype=np.float64), mean.shape).copy()
        if np.any(std <= 0) or not np.all(np.isfinite(std)):
            raise ValidationError("std must be positive and finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self):
        return self.mean.size


# ---- closed forms (per dimension, arrays of shape (..., d)) ----------------

def _kl(pm, ps, qm, qs):
    dm = pm - qm
    val = np.log(qs / ps) + (ps ** 2 + dm ** 2) / (2 * qs ** 2) - 0.5
    return val, dm / qs ** 2, -1.0 / ps + ps / qs ** 2


def _check_positive(arr, what):
    bad = np.argwhere(~(arr > 0))
    if bad.size:
        dim = int(bad[0][-1])
        raise DomainError(f"{what} must be positive; violated in dimension {dim}")


def _renyi(alpha, pm, ps, qm, qs):
    dm = pm - qm
    V = (1 - alpha) * ps ** 2 + alpha * qs ** 2
    _check_positive(V, "renyi mixture variance (1-alpha) sp^2 + alpha sq^2")
    val = np.log(qs / ps) + (np.log(qs ** 2) - np.log(V)) / (2 * (alpha - 1)) + alpha * dm ** 2 / (2 * V)
    g_m = alpha * dm / V
    g_s = -1.0 / ps + ps / V - alpha * (1 - alpha) * dm ** 2 * ps / V ** 2
    return val, g_m, g_s


def _chi2_log_ratio(pm, ps, qm, qs):
    """log(1 + chi2) per dimension, with its gradient."""
    dm = pm - qm
    W = 2 * qs ** 2 - ps ** 2
    _check_positive(W, "chi2 condition 2 sq^2 - sp^2")
    val = 2 * np.log(qs) - np.log(ps) - 0.5 * np.log(W) + dm ** 2 / W
    return val, 2 * dm / W, -1.0 / ps + ps / W + 2 * ps * dm ** 2 / W ** 2


# ---- quadrature ------------------------------------------------------------

def _grid_1d(pm, ps, qm, qs, n):
    """Grid nodes (..., n) and trapezoid weights for each row."""
    center = 0.5 * (pm + qm)
    half = 0.5 * np.abs(pm - qm) + 10.0 * np.sqrt(0.5 * (ps ** 2 + qs ** 2))
    u = np.linspace(-1.0, 1.0, n)
    x = center[..., None] + half[..., None] * u
    w = np.full(n, 2.0 / (n - 1))
    w[0] = w[-1] = 1.0 / (n - 1)
    return x, half[..., None] * w


def _logn(x, m, s):
    z = (x - m) / s
    return -0.5 * z * z - np.log(s) - 0.5 * np.log(2 * np.pi)


def _power_moment(lam, pm, ps, qm, qs, n):
    """M = int p^(lam+1) q^(-lam) per dimension, with dM/dpm and dM/dps."""
    prec = (lam + 1) / ps ** 2 - lam / qs ** 2
    _check_positive(prec, "power condition (lam+1)/sp^2 - lam/sq^2")
    x, w = _grid_1d(pm, ps, qm, qs, n)
    pm_, ps_ = pm[..., None], ps[..., None]
    lp = _logn(x, pm_, ps_)
    lq = _logn(x, qm[..., None], qs[..., None])
    f = np.exp((lam + 1) * lp - lam * lq) * w
    M = f.sum(-1)
    z = (x - pm_) / ps_
    dM_m = (lam + 1) * (f * z / ps_).sum(-1)
    dM_s = (lam + 1) * (f * (z * z - 1) / ps_).sum(-1)
    return M, dM_m, dM_s


def _js_1d(pm, ps, qm, qs, n):
    x, w = _grid_1d(pm, ps, qm, qs, n)
    lp = _logn(x, pm, ps)
    lq = _logn(x, qm, qs)
    lmix = np.logaddexp(lp, lq) - np.log(2.0)
    p, q = np.exp(lp), np.exp(lq)
    val = 0.5 * (w * (p * (lp - lmix) + q * (lq - lmix))).sum(-1)
    z = (x - pm) / ps
    g = 0.5 * w * p * (lp - lmix)
    return val, (g * z / ps).sum(-1), (g * (z * z - 1) / ps).sum(-1)


def _js_2d(pm, ps, qm, qs, n, chunk=64):
    """Tensor-grid JS for rows of 2-d diagonal Gaussians, shapes (B, 2)."""
    B = pm.shape[0]
    val = np.empty(B)
    gm = np.empty((B, 2))
    gs = np.empty((B, 2))
    for lo in range(0, B, chunk):
        sl = slice(lo, lo + chunk)
        x, w = _grid_1d(pm[sl], ps[sl], qm[sl], qs[sl], n)  # (b, 2, n)
        lp = _logn(x, pm[sl, :, None], ps[sl, :, None])
        lq = _logn(x, qm[sl, :, None], qs[sl, :, None])
        LP = lp[:, 0, :, None] + lp[:, 1, None, :]
        LQ = lq[:, 0, :, None] + lq[:, 1, None, :]
        W = w[:, 0, :, None] * w[:, 1, None, :]
        lmix = np.logaddexp(LP, LQ) - np.log(2.0)
        P, Q = np.exp(LP), np.exp(LQ)
        val[sl] = 0.5 * (W * (P * (LP - lmix) + Q * (LQ - lmix))).sum((-1, -2))
        G = 0.5 * W * P * (LP - lmix)
        z = (x - pm[sl, :, None]) / ps[sl, :, None]
        s_ = ps[sl, :, None]
        gx = G.sum(-1)  # marginal over dim-1 axis, indexed by dim-0 node
        gy = G.sum(-2)
        gm[sl, 0] = (gx * z[:, 0] / s_[:, 0]).sum(-1)
        gm[sl, 1] = (gy * z[:, 1] / s_[:, 1]).sum(-1)
        gs[sl, 0] = (gx * (z[:, 0] ** 2 - 1) / s_[:, 0]).sum(-1)
        gs[sl, 1] = (gy * (z[:, 1] ** 2 - 1) / s_[:, 1]).sum(-1)
    return val, gm, gs


def _batched(spec, pm, ps, qm, qs, n1d, n2d):
    """Divergence per row plus gradients in (pm, ps). Inputs are (B, d)."""
    if spec.kind == "kl":
        v, gm, gs = _kl(pm, ps, qm, qs)
        return v.sum(-1), gm, gs
    if spec.kind == "renyi":
        v, gm, gs = _renyi(spec.alpha, pm, ps, qm, qs)
        return v.sum(-1), gm, gs
    if spec.kind == "chi2":
        lr, gm, gs = _chi2_log_ratio(pm, ps, qm, qs)
        tot = np.exp(lr.sum(-1))
        return tot - 1.0, tot[:, None] * gm, tot[:, None] * gs
    if spec.kind == "power":
        lam = spec.lam
        M, dMm, dMs = _power_moment(lam, pm, ps, qm, qs, n1d)
        prod = M.prod(-1)
        c = 1.0 / (lam * (lam + 1))
        return c * (prod - 1.0), c * prod[:, None] * dMm / M, c * prod[:, None] * dMs / M
    # js
    d = pm.shape[-1]
    if d == 1:
        v, gm, gs = _js_1d(pm[:, 0], ps[:, 0], qm[:, 0], qs[:, 0], n1d)
        return v, gm[:, None], gs[:, None]
    if d == 2:
        return _js_2d(pm, ps, qm, qs, n2d)
    raise ValidationError("js divergence is implemented for 1- and 2-dimensional Gaussians only")


def _row_std(std):
    s = np.asarray(std, dtype=np.float64)
    return s[:, None] if s.ndim == 1 else s


def divergence_and_grad(spec, p_mean, p_std, q_mean, q_std, n1d=2049, n2d=161):
    """Row-wise D(p || q) for means shaped (B, d).

    A 1-d std array is read as one isotropic std per row; scalars and
    (B, d) arrays broadcast as usual.

    Returns (values (B,), d/dp_mean (B, d), d/dp_std (B, d)).
    """
    pm = np.atleast_2d(np.asarray(p_mean, dtype=np.float64))
    qm = np.atleast_2d(np.asarray(q_mean, dtype=np.float64))
    ps = np.broadcast_to(_row_std(p_std), pm.shape)
    qs = np.broadcast_to(_row_std(q_std), qm.shape)
    if np.any(ps <= 0) or np.any(qs <= 0):
        raise DomainError("standard deviations must be positive")
    return _batched(spec, pm, np.array(ps), qm, np.array(qs), n1d, n2d)


def divergence(spec, p, q, tol=1e-13):
    """D(p || q) for two :class:`GaussianParams` of equal dimension."""
    if p.dim != q.dim:
        raise ValidationError("Gaussians must have the same dimension")
    args = (p.mean[None], p.std[None], q.mean[None], q.std[None])
    if spec.kind in ("kl", "renyi", "chi2"):
        val = float(_batched(spec, *args, 0, 0)[0][0])
    else:
        n1, n2 = 1025, 129
        prev = float(_batched(spec, *args, n1, n2)[0][0])
        while True:
            n1, n2 = 2 * n1 - 1, 2 * n2 - 1
            val = float(_batched(spec, *args, n1, n2)[0][0])
            if abs(val - prev) <= tol * max(1.0, abs(val)) or n1 > 2 ** 16 or n2 > 1025:
                break
            prev = val
    if val < -1e-12:
        raise DomainError(f"negative divergence {val}")
    return max(val, 0.0)


def quadrature_oracle(spec, p, q, grid_points=4096):
    """Trapezoid integral of q f(p/q) on a uniform grid (1-d Gaussians only).

    Independent of the closed forms above: densities come from scipy and
    the divergence from its generator function f.
    """
    if grid_points < 1024:
        raise ValidationError("grid_points must be at least 1024")
    pm, ps = float(np.ravel(p.mean)[0]), float(np.ravel(p.std)[0])
    qm, qs = float(np.ravel(q.mean)[0]), float(np.ravel(q.std)[0])
    if p.dim != 1 or q.dim != 1:
        raise ValidationError("the quadrature oracle handles 1-d Gaussians; use per-dimension checks")
    half = 0.5 * abs(pm - qm) + 10.0 * np.sqrt(0.5 * (ps ** 2 + qs ** 2))
    x = np.linspace(0.5 * (pm + qm) - half, 0.5 * (pm + qm) + half, grid_points)
    pd = norm.pdf(x, pm, ps)
    qd = norm.pdf(x, qm, qs)
    with np.errstate(all="ignore"):
        u = pd / qd
        if spec.kind == "kl":
            integrand = qd * u * np.log(u)
        elif spec.kind == "js":
            integrand = 0.5 * qd * (u * np.log(u) - (1 + u) * np.log((1 + u) / 2))
        elif spec.kind == "chi2":
            integrand = qd * (u - 1) ** 2
        elif spec.kind == "power":
            lam = spec.lam
            integrand = qd * (u ** (lam + 1) - u) / (lam * (lam + 1))
        else:
            integrand = qd * u ** spec.alpha
    if not np.all(np.isfinite(integrand)):
        raise DomainError("quadrature integrand is non-finite; parameters outside the divergence domain")
    val = np.trapezoid(integrand, x)
    if spec.kind == "renyi":
        return float(np.log(val) / (spec.alpha - 1))
    return float(val)
