"""Teacher training by noise prediction and ancestral reverse sampling."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DivergenceError, ValidationError
from .nets import Adam
from .schedule import forward_marginal

LOG_2PI = np.log(2.0 * np.pi)


def gaussian_logpdf(x, mean, std):
    """Diagonal Gaussian log density summed over the last axis.

    ``std`` may be a scalar, broadcast per row, or per dimension.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    d = x.shape[-1]
    if std.ndim < x.ndim and std.ndim > 0:
        std = std[..., None]
    std = np.broadcast_to(std, x.shape)
    z = (x - mean) / std
    return -0.5 * (z * z).sum(-1) - np.log(std).sum(-1) - 0.5 * d * LOG_2PI


def trajectory_rng(seed, index):
    """Independent RNG stream for trajectory ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def noise_table(seed, n, n_steps, dim, offset=0):
    """Per-trajectory initial states and step noises.

    Row ``i`` depends only on ``(seed, offset + i)``, so a teacher and a
    student drawing from the same seed start from the same x_T.
    """
    init = np.empty((n, dim))
    steps = np.empty((n, n_steps, dim))
    for i in range(n):
        g = trajectory_rng(seed, offset + i)
        init[i] = g.standard_normal(dim)
        steps[i] = g.standard_normal((n_steps, dim))
    return init, steps


@dataclass
class Trajectory:
    """One recorded denoising episode."""

    states: np.ndarray
    timesteps: np.ndarray
    step_logprobs: np.ndarray
    condition: Optional[int] = None
    seed: tuple = ()
    means: Optional[np.ndarray] = None
    stds: Optional[np.ndarray] = None
    noises: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (len(self.states) == len(self.timesteps) == len(self.step_logprobs) + 1):
            raise ValidationError("trajectory length contract violated")
        ts = np.asarray(self.timesteps)
        if ts[-1] != 0 or np.any(np.diff(ts) >= 0):
            raise ValidationError("timesteps must be strictly decreasing and end at 0")

    @property
    def final(self):
        return self.states[-1]


@dataclass
class Rollouts:
    """A batch of trajectories stored as stacked arrays.

    ``states`` has shape (n, L, d); ``step_logprobs`` (n, L-1); ``stds`` is
    (n, L-1) (isotropic per step).
    """

    states: np.ndarray
    timesteps: np.ndarray
    step_logprobs: np.ndarray
    conditions: np.ndarray
    seed: int = 0
    offset: int = 0
    means: Optional[np.ndarray] = None
    stds: Optional[np.ndarray] = None
    noises: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i):
        pick = lambda a: None if a is None else a[i]
        cond = int(self.conditions[i])
        return Trajectory(
            states=self.states[i], timesteps=self.timesteps, step_logprobs=self.step_logprobs[i],
            condition=None if cond < 0 else cond, seed=(self.seed, self.offset + i),
            means=pick(self.means), stds=pick(self.stds), noises=pick(self.noises),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def finals(self):
        return self.states[:, -1]


def _check_finite(x, what, step=None):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite {what}" + ("" if step is None else f" at step {step}"), step=step)


def teacher_mean(net, schedule, x, t, cond=None):
    """Mean of p(x_{t-1} | x_t) for an epsilon-predicting network."""
    return _step_mean(schedule, x, t, net(x, t, cond))


def _step_mean(schedule, x, t, eps):
    beta = schedule.betas[t - 1]
    return (x - beta / np.sqrt(1.0 - schedule.alpha_bars[t - 1]) * eps) / np.sqrt(schedule.alphas[t - 1])


def teacher_mean_jacobian(net, schedule, x, t, cond=None):
    """Teacher step mean and its Jacobian in x, shapes (B, d) and (B, d, d)."""
    eps, jac = net.jacobian_x(x, t, cond)
    beta = schedule.betas[t - 1]
    ca = 1.0 / np.sqrt(schedule.alphas[t - 1])
    ce = ca * beta / np.sqrt(1.0 - schedule.alpha_bars[t - 1])
    d = x.shape[1]
    mean = _step_mean(schedule, x, t, eps)
    return mean, ca * np.eye(d)[None] - ce * jac


def train_teacher(data, schedule, net, steps=20000, lr=2e-3, seed=0, batch_size=256,
                  cond_drop=0.2, log_every=0):
    """Fit ``net`` to predict the forward noise, minimising E||eps - eps_hat(x_t, t)||^2.

    Returns a new Denoiser; the input network is left untouched. The
    per-step loss is attached as ``loss_history``. The learning rate follows
    a cosine decay to ``lr / 10``. When the network is conditional, labels
    are replaced by the null condition with probability ``cond_drop``.
    """
    if net.data_dim != data.dim:
        raise ValidationError(f"network data dim {net.data_dim} != data dim {data.dim}")
    if net.cond_dim not in (0, data.mode_count):
        raise ValidationError("network condition width must be 0 or the mode count")
    net = net.copy()
    rng = np.random.default_rng(seed)
    opt = Adam(net.params.size, lr=lr)
    params = net.params.copy()
    losses = np.empty(steps)
    for step in range(steps):
        opt.lr = lr * (0.1 + 0.9 * 0.5 * (1 + np.cos(np.pi * step / max(steps, 1))))
        x0, labels = data.sample(batch_size, rng)
        t = rng.integers(1, schedule.T + 1, size=batch_size)
        noise = rng.standard_normal(x0.shape)
        xt = forward_marginal(schedule, x0, t, noise)
        cond = None
        if net.cond_dim:
            cond = np.where(rng.random(batch_size) < cond_drop, -1, labels)
        out, cache = net.mlp.forward(net.inputs(xt, t, cond), params)
        resid = out - noise
        loss = float(np.mean(resid * resid))
        if not np.isfinite(loss):
            raise DivergenceError(f"teacher loss became non-finite at step {step}", step=step)
        losses[step] = loss
        grad = net.mlp.backward(cache, 2.0 * resid / resid.size)
        params = opt.step(params, grad)
        if log_every and step % log_every == 0:
            print(f"step {step:6d}  loss {loss:.4f}")
    net.params = params
    net.loss_history = losses
    return net


def sample_reverse(net, schedule, n, record=True, seed=0, cond=None, offset=0):
    """Ancestral sampling from x_T ~ N(0, I) with Gaussian reverse steps.

    Step variance is the DDPM posterior variance (first entry clipped). With
    ``record`` the returned :class:`Rollouts` stores every state, the step
    means, stds, noises and transition log-densities; otherwise only the
    final states are kept.
    """
    if n <= 0:
        raise ValidationError("n must be positive")
    T = schedule.T
    d = net.data_dim
    conds = np.broadcast_to(np.asarray(-1 if cond is None else cond, dtype=np.int64), (n,)).copy()
    x, noises = noise_table(seed, n, T, d, offset)
    var = schedule.posterior_variance()
    stds = np.sqrt(var[::-1])  # stds in sampling order t = T..1
    states = [x]
    means, logps = [], []
    for j, t in enumerate(range(T, 0, -1)):
        mean = teacher_mean(net, schedule, x, t, conds)
        x = mean + stds[j] * noises[:, j]
        _check_finite(x, "state", step=t)
        if record:
            means.append(mean)
            logps.append(gaussian_logpdf(x, mean, stds[j]))
            states.append(x)
    if not record:
        return Rollouts(states=x[:, None], timesteps=np.array([0]), step_logprobs=np.zeros((n, 0)),
                        conditions=conds, seed=seed, offset=offset)
    return Rollouts(
        states=np.stack(states, axis=1), timesteps=np.arange(T, -1, -1),
        step_logprobs=np.stack(logps, axis=1), conditions=conds, seed=seed, offset=offset,
        means=np.stack(means, axis=1), stds=np.broadcast_to(stds, (n, T)).copy(), noises=noises,
    )
