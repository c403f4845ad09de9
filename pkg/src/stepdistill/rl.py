"""Policy-gradient distillation of a teacher into a few-step student.

One epoch collects grouped rollouts, turns terminal rewards into
advantages (batch-normalised for PPO, group-relative for GRPO and DR-GRPO),
then takes ``inner_epochs`` gradient steps on

    L = mean_{i,k}[ -min(r A, clip(r) A) + beta * k3 ] + lambda_div * mean_{i,k} D(pi || ref)

where r is the per-step likelihood ratio against the collection-time policy.
Advantages and old log-probs are constants; gradients reach the
parameters only through the new log-probs and the student step
distributions inside D.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .diffusion import teacher_mean_jacobian
from .divergences import DivergenceSpec, divergence_and_grad
from .errors import DivergenceError, ValidationError
from .nets import Adam
from .student import LOG_STD_MAX, LOG_STD_MIN, rollout_batch

ALGORITHMS = ("ppo", "grpo", "dr_grpo")


@dataclass(frozen=True)
class RLConfig:
    algorithm: str = "grpo"
    clip_eps: float = 0.2
    lr: float = 1e-4
    inner_epochs: int = 4
    group_size: int = 8
    n_prompts: int = 8
    kl_beta: float = 0.05
    div_lambda: float = 0.1
    divergence: Optional[DivergenceSpec] = field(default_factory=DivergenceSpec)
    clip_enabled: bool = True
    reference: str = "teacher"  # or "init_student"
    max_grad_norm: float = 1.0
    freeze_log_std: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algorithm!r}")
        if not 0 < self.clip_eps < 1:
            raise ValidationError("clip_eps must lie in (0, 1)")
        if self.group_size < 1 or (self.algorithm != "ppo" and self.group_size < 2):
            raise ValidationError("group estimators need group_size >= 2")
        if self.kl_beta < 0 or self.div_lambda < 0:
            raise ValidationError("kl_beta and div_lambda must be non-negative")
        if self.inner_epochs < 0 or self.n_prompts < 1:
            raise ValidationError("inner_epochs must be >= 0 and n_prompts >= 1")
        if self.reference not in ("teacher", "init_student"):
            raise ValidationError(f"unknown reference {self.reference!r}")

    @property
    def uses_divergence(self):
        return self.divergence is not None and self.div_lambda > 0


@dataclass
class RolloutBuffer:
    rollouts: object
    old_logprobs: np.ndarray
    rewards: object
    conditions: np.ndarray
    group_size: int
    seed: int = 0

    def __len__(self):
        return len(self.rollouts)


@dataclass(frozen=True)
class AdvantageEstimate:
    values: np.ndarray
    estimator: str

    def per_step(self, K):
        return np.repeat(self.values[:, None], K, axis=1)


@dataclass
class AlignedReference:
    means: np.ndarray  # (N, K, d)
    stds: np.ndarray  # (N, K, d)


def collect_rollouts(policy, rewarder, n_prompts, G, seed=0, prompts=None, step_reward=None):
    """Roll out ``n_prompts * G`` trajectories, G consecutive ones per prompt.

    Prompts are condition ids drawn from ``seed`` unless given. Every
    trajectory has its own noise stream. ``step_reward(states, k, conds)``,
    if given, adds a per-step term to each trajectory's return.
    """
    if G < 1 or n_prompts < 1:
        raise ValidationError("need n_prompts >= 1 and G >= 1")
    if prompts is None:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9A0]))
        prompts = rng.integers(0, rewarder.data.mode_count, size=n_prompts)
    conds = np.repeat(np.asarray(prompts, dtype=np.int64), G)
    ro = rollout_batch(policy, conds, seed=seed)
    try:
        batch = rewarder(ro.finals, conds, seed)
    except Exception as exc:
        bad = _first_bad_index(rewarder, ro.finals, conds, seed)
        raise type(exc)(f"reward computation failed (trajectory {bad}): {exc}") from exc
    if step_reward is not None:
        extra = sum(np.asarray(step_reward(ro.states[:, k + 1], k, conds)) for k in range(policy.K))
        batch.rewards = batch.rewards + extra
        batch.raw_total = batch.raw_total + extra
    old = ro.step_logprobs.copy()
    old.flags.writeable = False
    return RolloutBuffer(rollouts=ro, old_logprobs=old, rewards=batch, conditions=conds, group_size=G, seed=seed)


def _first_bad_index(rewarder, finals, conds, seed):
    for i in range(len(finals)):
        try:
            rewarder.components(finals[i:i + 1], conds[i:i + 1],
                                rewarder.teacher_finals(conds[i:i + 1], seed, i) if rewarder.needs_teacher else None)
        except Exception:
            return i
    return None


def advantages_ppo(rewards):
    """(r - mean) / (population std + 1e-8) over the whole batch."""
    r = np.asarray(getattr(rewards, "rewards", rewards), dtype=np.float64)
    if r.size < 2:
        raise ValidationError("PPO advantages need at least two rewards")
    if np.ptp(r) == 0:
        # the mean of equal floats can miss them by an ulp
        return AdvantageEstimate(np.zeros_like(r), "ppo_batch")
    return AdvantageEstimate((r - r.mean()) / (r.std() + 1e-8), "ppo_batch")


def advantages_group(rewards, group_size=None, normalize=True):
    """Group-relative advantages; ``rewards`` is (n_groups, G) or flat with ``group_size``.

    normalize=True divides each group by its population std, floored at
    1e-8 (GRPO);
    normalize=False keeps plain mean-centring (DR-GRPO).
    """
    r = np.asarray(getattr(rewards, "rewards", rewards), dtype=np.float64)
    if r.ndim == 1:
        if group_size is None or r.size % group_size:
            raise ValidationError("flat rewards must split into equal groups")
        r = r.reshape(-1, group_size)
    elif r.ndim != 2:
        raise ValidationError("ragged or malformed reward groups")
    if r.shape[1] < 2:
        raise ValidationError("group advantages need at least two members per group")
    adv = r - r.mean(axis=1, keepdims=True)
    adv[np.ptp(r, axis=1) == 0] = 0.0
    if normalize:
        adv = adv / np.maximum(r.std(axis=1, keepdims=True), 1e-8)
    return AdvantageEstimate(adv.ravel(), "grpo" if normalize else "dr_grpo")


def estimate_advantages(buffer, config):
    if config.algorithm == "ppo":
        return advantages_ppo(buffer.rewards)
    if buffer.group_size < 2:
        raise ValidationError("group estimators cannot use a buffer with group_size 1")
    return advantages_group(buffer.rewards, buffer.group_size, normalize=config.algorithm == "grpo")


def clipped_surrogate(new_logprob, old_logprob, A, eps=0.2, clip_enabled=True):
    """-min(r A, clip(r, 1-eps, 1+eps) A) with r = exp(new - old); -r A without clipping."""
    r = np.exp(np.asarray(new_logprob, dtype=np.float64) - old_logprob)
    if not clip_enabled:
        return -r * A
    return -np.minimum(r * A, np.clip(r, 1 - eps, 1 + eps) * A)


def _surrogate_grad(r, A, eps, clip_enabled):
    """d surrogate / d new_logprob."""
    if not clip_enabled:
        return -A * r
    active = r * A <= np.clip(r, 1 - eps, 1 + eps) * A
    return np.where(active, -A * r, 0.0)


def kl_penalty_k3(old_logprob, new_logprob):
    """exp(D) - D - 1 with D = old - new."""
    delta = np.asarray(old_logprob, dtype=np.float64) - new_logprob
    return np.expm1(delta) - delta


def align_reference(teacher, schedule, coarse, rollouts, conditions=None):
    """Teacher reference Gaussian for every student transition.

    From each student state x_{tau_k} the teacher's reverse steps down to
    tau_{k-1} are composed: the mean follows the teacher step mean (so the
    x0 estimate is refreshed every inner step) and the covariance is pushed
    through the step Jacobian, Sigma <- J Sigma J^T + beta_tilde I. Stds are
    the square roots of the covariance diagonal.
    """
    states = np.asarray(getattr(rollouts, "states", rollouts))
    if states.ndim == 2:
        states = states[None]
    if states.shape[1] != coarse.K + 1 or coarse.T != schedule.T:
        raise ValidationError("rollouts do not match the coarse schedule")
    if conditions is None:
        conditions = getattr(rollouts, "conditions", None)
    N, _, d = states.shape
    post_var = schedule.posterior_variance()
    means = np.empty((N, coarse.K, d))
    stds = np.empty((N, coarse.K, d))
    eye = np.eye(d)
    for k, (t, s) in enumerate(coarse.intervals()):
        m = states[:, k].copy()
        cov = np.zeros((N, d, d))
        for u in range(t, s, -1):
            m, J = teacher_mean_jacobian(teacher, schedule, m, u, conditions)
            cov = J @ cov @ np.transpose(J, (0, 2, 1)) + post_var[u - 1] * eye
        means[:, k] = m
        stds[:, k] = np.sqrt(np.diagonal(cov, axis1=1, axis2=2))
    return AlignedReference(means, stds)


def init_student_reference(init_policy, rollouts):
    """Reference taken from a frozen copy of the behaviour-cloned student."""
    states = rollouts.states
    N, L, d = states.shape
    K = L - 1
    steps = np.tile(np.arange(K), N)
    conds = np.repeat(rollouts.conditions, K)
    mean, _ = init_policy.means(states[:, :-1].reshape(-1, d), steps, conds)
    std = np.broadcast_to(np.exp(init_policy.log_stds)[None, :, None], (N, K, d)).copy()
    return AlignedReference(mean.reshape(N, K, d), std)


def divergence_penalty(student_means, student_stds, reference, spec):
    """Mean over all (trajectory, step) pairs of D(student step || reference step)."""
    m = np.asarray(student_means, dtype=np.float64)
    N, K, d = m.shape
    s = np.broadcast_to(np.asarray(student_stds, dtype=np.float64).reshape(
        (1, K, 1) if np.ndim(student_stds) == 1 else np.shape(student_stds) + (1,) * (3 - np.ndim(student_stds))),
        (N, K, d))
    vals, _, _ = divergence_and_grad(spec, m.reshape(-1, d), s.reshape(-1, d),
                                     reference.means.reshape(-1, d), reference.stds.reshape(-1, d))
    return float(vals.mean())


def rl_loss_and_grad(policy, theta, buffer, advantages, config, reference=None):
    """Combined loss at flat parameters ``theta`` and its exact gradient."""
    ro = buffer.rollouts
    N, L, d = ro.states.shape
    K = L - 1
    n_net = policy.net.params.size
    net_params = theta[:n_net]
    raw_ls = theta[n_net:]
    ls = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
    ls_inside = (raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)

    X = ro.states[:, :-1].reshape(-1, d)
    Y = ro.states[:, 1:].reshape(-1, d)
    steps = np.tile(np.arange(K), N)
    conds = np.repeat(buffer.conditions, K)
    mean, cache = policy.means(X, steps, conds, params=net_params)
    row_ls = ls[steps]
    sigma = np.exp(row_ls)
    resid = Y - mean
    z2 = (resid * resid).sum(1) / sigma ** 2
    new_lp = -0.5 * z2 - d * row_ls - 0.5 * d * np.log(2 * np.pi)
    old_lp = buffer.old_logprobs.reshape(-1)
    A = advantages.per_step(K).reshape(-1)
    R = N * K

    r = np.exp(new_lp - old_lp)
    surr = clipped_surrogate(new_lp, old_lp, A, config.clip_eps, config.clip_enabled)
    k3 = kl_penalty_k3(old_lp, new_lp)
    g_lp = (_surrogate_grad(r, A, config.clip_eps, config.clip_enabled) - config.kl_beta * np.expm1(old_lp - new_lp)) / R
    loss = surr.mean() + config.kl_beta * k3.mean()

    g_mean = g_lp[:, None] * resid / sigma[:, None] ** 2
    g_rowls = g_lp * (z2 - d)
    div_val = 0.0
    if config.uses_divergence and reference is not None:
        s_rows = np.broadcast_to(sigma[:, None], (R, d))
        dv, dgm, dgs = divergence_and_grad(config.divergence, mean, s_rows,
                                           reference.means.reshape(-1, d), reference.stds.reshape(-1, d))
        div_val = float(dv.mean())
        loss = loss + config.div_lambda * div_val
        g_mean = g_mean + config.div_lambda * dgm / R
        g_rowls = g_rowls + config.div_lambda * (dgs * sigma[:, None]).sum(1) / R

    g_net = policy.mean_backward(cache, g_mean)
    g_ls = np.bincount(steps, weights=g_rowls, minlength=K) * ls_inside
    if config.freeze_log_std or policy.freeze_log_std:
        g_ls = np.zeros(K)
    diag = {
        "loss": float(loss),
        "ratio_mean": float(r.mean()),
        "clip_frac": float((np.abs(r - 1.0) > config.clip_eps).mean()),
        "kl_k3": float(k3.mean()),
        "div_penalty": div_val,
    }
    return float(loss), np.concatenate([g_net, g_ls]), diag


def update(policy, buffer, advantages, config, reference=None, optimizer=None):
    """Run ``inner_epochs`` full-batch gradient steps; returns (new policy, diagnostics).

    Diagnostics are averaged over the passes. The input policy is not modified.
    """
    policy = policy.copy()
    diags = []
    if config.inner_epochs == 0:
        return policy, {"loss": 0.0, "ratio_mean": 1.0, "clip_frac": 0.0, "kl_k3": 0.0, "div_penalty": 0.0,
                        "reward_mean": float(np.mean(buffer.rewards.raw_total))}
    opt = optimizer or Adam(policy.n_params, lr=config.lr)
    theta = policy.get_flat()
    for step in range(config.inner_epochs):
        loss, grad, diag = rl_loss_and_grad(policy, theta, buffer, advantages, config, reference)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise DivergenceError(f"non-finite RL loss at inner step {step}", step=step, diagnostics=diag)
        gn = np.linalg.norm(grad)
        if config.max_grad_norm and gn > config.max_grad_norm:
            grad = grad * (config.max_grad_norm / gn)
        theta = opt.step(theta, grad)
        theta[policy.net.params.size:] = np.clip(theta[policy.net.params.size:], LOG_STD_MIN, LOG_STD_MAX)
        diags.append(diag)
    policy.set_flat(theta)
    out = {k: float(np.mean([dg[k] for dg in diags])) for k in diags[0]}
    out["reward_mean"] = float(np.mean(buffer.rewards.raw_total))
    return policy, out


def epoch_seed(seed, epoch):
    return int(np.random.SeedSequence([int(seed), int(epoch)]).generate_state(1)[0])


@dataclass
class DistillResult:
    student: object
    rows: list
    best_student: object
    best_fid: float
    best_epoch: int


def distill(teacher, student, rewarder, config, epochs, evaluator=None, seed=0, log=None):
    """Run the distillation loop for ``epochs`` epochs.

    Each row of the returned log carries the epoch's reward statistics,
    update diagnostics and (with an ``evaluator``) FID and PRDC of the
    updated student. The best-FID student is kept alongside the final one.
    """
    init = student.copy()
    policy = student.copy()
    opt = Adam(policy.n_params, lr=config.lr)
    rows = []
    best, best_fid, best_epoch = policy.copy(), np.inf, -1
    n_prompts = config.n_prompts * (config.group_size if config.algorithm == "ppo" else 1)
    G = 1 if config.algorithm == "ppo" else config.group_size
    for epoch in range(epochs):
        try:
            es = epoch_seed(seed, epoch)
            buf = collect_rollouts(policy, rewarder, n_prompts, G, seed=es)
            adv = estimate_advantages(buf, config)
            ref = None
            if config.uses_divergence:
                if config.reference == "teacher":
                    ref = align_reference(teacher, rewarder.schedule, policy.coarse, buf.rollouts)
                else:
                    ref = init_student_reference(init, buf.rollouts)
            policy, diag = update(policy, buf, adv, config, ref, opt)
        except (DivergenceError, ValidationError) as exc:
            raise type(exc)(f"epoch {epoch}: {exc}") from exc
        row = {"epoch": epoch, "reward_mean": diag["reward_mean"],
               "reward_std": float(np.std(buf.rewards.raw_total))}
        if evaluator is not None:
            row.update(evaluator(policy))
        row.update({k: diag[k] for k in ("kl_k3", "div_penalty", "clip_frac", "ratio_mean")})
        rows.append(row)
        if evaluator is not None and row["fid"] < best_fid:
            best, best_fid, best_epoch = policy.copy(), row["fid"], epoch
        if log:
            log(row)
    if epochs == 0:
        policy = student
    return DistillResult(policy, rows, best, float(best_fid), best_epoch)
