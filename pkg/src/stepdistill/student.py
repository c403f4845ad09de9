"""Few-step Gaussian student policy over a coarse timestep schedule."""

from dataclasses import dataclass

import numpy as np

from .diffusion import Rollouts, Trajectory, gaussian_logpdf, noise_table
from .errors import DivergenceError, ValidationError
from .nets import Denoiser

LOG_STD_MIN = np.log(1e-4)
LOG_STD_MAX = np.log(10.0)


@dataclass(frozen=True)
class CoarseSchedule:
    """Student timesteps in sampling order: ``taus[0] == T`` down to ``taus[-1] == 0``."""

    T: int
    K: int
    taus: tuple
    strategy: str = "uniform"

    def __post_init__(self):
        taus = np.asarray(self.taus)
        if len(taus) != self.K + 1 or taus[0] != self.T or taus[-1] != 0 or np.any(np.diff(taus) >= 0):
            raise ValidationError(f"invalid coarse schedule {self.taus}")

    def intervals(self):
        return list(zip(self.taus[:-1], self.taus[1:]))

    def descriptor(self):
        return {"T": self.T, "K": self.K, "taus": list(map(int, self.taus)), "strategy": self.strategy}


def build_coarse_schedule(T, K, strategy="uniform"):
    if not (1 <= K < T):
        raise ValidationError(f"need 1 <= K < T, got K={K}, T={T}")
    frac = np.linspace(1.0, 0.0, K + 1)
    if strategy == "uniform":
        taus = np.round(T * frac)
    elif strategy == "quadratic":
        taus = np.round(T * frac ** 2)
    else:
        raise ValidationError(f"unknown coarse strategy {strategy!r}")
    taus = taus.astype(int)
    if len(np.unique(taus)) != len(taus):
        raise ValidationError(f"coarse schedule has duplicate timesteps after rounding: {taus.tolist()}")
    return CoarseSchedule(T=int(T), K=int(K), taus=tuple(int(t) for t in taus), strategy=strategy)


def identity_schedule(T):
    """Coarse schedule with K = T, i.e. one student step per teacher step."""
    return CoarseSchedule(T=T, K=T, taus=tuple(range(T, -1, -1)), strategy="uniform")


def interval_coefficients(schedule, t, s):
    """Compose teacher posterior steps t -> s with the x0 estimate held fixed.

    Returns (A, B, var) such that the composed mean is A x_t + B x0 and the
    composed variance is ``var`` (per dimension).
    """
    c_x0, c_xt = schedule.posterior_coefficients()
    post_var = schedule.posterior_variance()
    A, B, var = 1.0, 0.0, 0.0
    for u in range(t, s, -1):
        A, B = c_xt[u - 1] * A, c_xt[u - 1] * B + c_x0[u - 1]
        var = c_xt[u - 1] ** 2 * var + post_var[u - 1]
    return A, B, var


@dataclass
class TransitionDistribution:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.std) <= 0):
            raise ValidationError("transition std must be positive")


def log_prob(dist, x_next):
    """Diagonal Gaussian log density of ``x_next`` under ``dist``."""
    x_next = np.asarray(x_next, dtype=np.float64)
    if np.shape(x_next)[-1] != np.shape(dist.mean)[-1]:
        raise ValidationError("dimension mismatch between sample and distribution")
    if np.any(np.asarray(dist.std) <= 0):
        raise ValidationError("std must be positive")
    return gaussian_logpdf(x_next, dist.mean, dist.std)


class StudentPolicy:
    """pi(x_{tau_{k-1}} | x_{tau_k}) = N(a_k x + c_k eps_net(x, tau_k, c), exp(2 log_std_k) I).

    ``a_k`` and ``c_k`` come from composing the teacher's posterior means
    across the interval with a frozen x0 estimate. A zero final layer
    therefore gives the pure skip path ``a_k x``, and copying teacher weights
    reproduces one aggregated teacher step.
    """

    def __init__(self, net, schedule, coarse, log_stds=None, freeze_log_std=False):
        if coarse.T != schedule.T:
            raise ValidationError("coarse schedule and noise schedule disagree on T")
        self.net = net
        self.schedule = schedule
        self.coarse = coarse
        self.freeze_log_std = freeze_log_std
        a, c, var = [], [], []
        for t, s in coarse.intervals():
            A, B, v = interval_coefficients(schedule, t, s)
            abar = schedule.alpha_bar(t)
            a.append(A + B / np.sqrt(abar))
            c.append(-B * np.sqrt(1.0 - abar) / np.sqrt(abar))
            var.append(v)
        self.skip = np.array(a)
        self.eps_coef = np.array(c)
        self.aggregated_var = np.array(var)
        if log_stds is None:
            log_stds = 0.5 * np.log(self.aggregated_var)
        self.log_stds = np.clip(np.asarray(log_stds, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
        if self.log_stds.shape != (coarse.K,) or not np.all(np.isfinite(self.log_stds)):
            raise ValidationError("log_stds must be K finite values")

    @property
    def K(self):
        return self.coarse.K

    @property
    def taus(self):
        return np.asarray(self.coarse.taus)

    @property
    def n_params(self):
        return self.net.params.size + self.K

    def get_flat(self):
        return np.concatenate([self.net.params, self.log_stds])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        n = self.net.params.size
        self.net.params = theta[:n]
        self.log_stds = np.clip(theta[n:], LOG_STD_MIN, LOG_STD_MAX)

    def copy(self):
        return StudentPolicy(self.net.copy(), self.schedule, self.coarse, self.log_stds.copy(),
                             self.freeze_log_std)

    def stds(self):
        return np.exp(self.log_stds)

    def means(self, x, steps, cond=None, params=None):
        """Vectorised transition means for rows ``x`` at step indices ``steps``.

        Returns (means, cache) where cache feeds :meth:`mean_backward`.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        steps = np.broadcast_to(np.asarray(steps, dtype=np.int64), (x.shape[0],))
        if np.any(steps < 0) or np.any(steps >= self.K):
            raise ValidationError(f"step index out of range [0, {self.K})")
        eps, cache = self.net.forward(x, self.taus[steps], cond, params)
        mean = self.skip[steps, None] * x + self.eps_coef[steps, None] * eps
        return mean, (cache, steps)

    def mean_backward(self, cache, grad_mean):
        """Gradient of sum(grad_mean * means) with respect to the net params."""
        net_cache, steps = cache
        return self.net.backward(net_cache, grad_mean * self.eps_coef[steps, None])


def transition(policy, x, step_index, condition=None):
    x = np.asarray(x, dtype=np.float64)
    mean, _ = policy.means(x.reshape(1, -1) if x.ndim == 1 else x, step_index, condition)
    if not np.all(np.isfinite(mean)):
        raise DivergenceError(f"non-finite policy mean at step {step_index}", step=step_index)
    if x.ndim == 1:
        mean = mean[0]
    return TransitionDistribution(mean=mean, std=np.exp(policy.log_stds[step_index]))


def rollout_batch(policy, conditions, seed=0, offset=0):
    """Roll out ``len(conditions)`` trajectories; trajectory i uses stream (seed, offset + i)."""
    conds = np.asarray(conditions, dtype=np.int64).reshape(-1)
    n, d, K = conds.size, policy.net.data_dim, policy.K
    x, noises = noise_table(seed, n, K, d, offset)
    stds = policy.stds()
    states, means, logps = [x], [], []
    for k in range(K):
        mean, _ = policy.means(x, k, conds)
        x = mean + stds[k] * noises[:, k]
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite student state at step {k}", step=k)
        means.append(mean)
        logps.append(gaussian_logpdf(x, mean, stds[k]))
        states.append(x)
    return Rollouts(
        states=np.stack(states, axis=1), timesteps=policy.taus.copy(), step_logprobs=np.stack(logps, axis=1),
        conditions=conds, seed=seed, offset=offset, means=np.stack(means, axis=1),
        stds=np.broadcast_to(stds, (n, K)).copy(), noises=noises,
    )


def rollout(policy, condition=None, seed=0, index=0):
    cond = -1 if condition is None else condition
    return rollout_batch(policy, [cond], seed=seed, offset=index)[0]


def init_from_teacher(teacher, schedule, coarse, freeze_log_std=False):
    """Behaviour-cloned student: copy the teacher weights, set per-step stds from
    the aggregated posterior variance of each coarse interval."""
    if not isinstance(teacher, Denoiser) or teacher.T_ref != schedule.T:
        raise ValidationError("teacher must be a Denoiser trained on this schedule")
    return StudentPolicy(teacher.copy(), schedule, coarse, freeze_log_std=freeze_log_std)


def random_student(teacher, schedule, coarse, seed=0, zero_last=False):
    """Student with the teacher's architecture but freshly initialised weights."""
    net = Denoiser(teacher.data_dim, tuple(teacher.layer_widths[1:-1]), teacher.time_dim, teacher.cond_dim,
                   teacher.T_ref, teacher.activation, seed=seed)
    if zero_last:
        p = net.params.copy()
        p[net.mlp.last_layer_slice()] = 0.0
        net.params = p
    return StudentPolicy(net, schedule, coarse)
