"""Reward functions for scoring student samples.

Frozen random-feature encoders stand in for pretrained image encoders; two
seeds give two unrelated embedding spaces.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax

from .diffusion import sample_reverse
from .errors import ValidationError

REWARD_KINDS = ("teacher_cosine", "mmd", "align", "energy")


class Encoder:
    """x -> normalize(W2 tanh(W1 x + b1)), 32-d unit vectors, never trained."""

    def __init__(self, data_dim=2, seed=0, hidden=64, out_dim=32, input_scale=0.5):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE1C0DE]))
        self.data_dim = data_dim
        self.seed = int(seed)
        self.W1 = rng.normal(0.0, input_scale, size=(data_dim, hidden))
        self.b1 = rng.normal(0.0, 1.0, size=hidden)
        self.W2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, out_dim))
        for a in (self.W1, self.b1, self.W2):
            a.flags.writeable = False
        # tanh is 1-Lipschitz, so the raw features are Lipschitz with this constant
        self.raw_lipschitz = float(np.linalg.norm(self.W1, 2) * np.linalg.norm(self.W2, 2))

    def raw(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.data_dim:
            raise ValidationError(f"encoder expects dim {self.data_dim}, got {x.shape[1]}")
        return np.tanh(x @ self.W1 + self.b1) @ self.W2

    def lipschitz_bound(self, x):
        """Local bound on ||embed(x) - embed(y)|| / ||x - y|| for y near x."""
        return 2.0 * self.raw_lipschitz / np.linalg.norm(self.raw(x), axis=1)

    def __call__(self, x):
        return embed(self, x)


def embed(enc, x):
    u = enc.raw(x)
    out = u / np.linalg.norm(u, axis=1, keepdims=True)
    return out[0] if np.ndim(x) == 1 else out


def cosine_reward(enc, x_student, x_teacher):
    """Row-wise cosine similarity of embeddings, clipped to [-1, 1]."""
    a = np.atleast_2d(embed(enc, np.atleast_2d(x_student)))
    b = np.atleast_2d(embed(enc, np.atleast_2d(x_teacher)))
    out = np.clip((a * b).sum(-1), -1.0, 1.0)
    return float(out[0]) if np.ndim(x_student) == 1 else out


def _gauss_kernel(a, b, bandwidth):
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * bandwidth ** 2))


def mmd_reward(enc, student_batch, teacher_batch, bandwidth=0.5, unbiased=True):
    """Negated squared MMD between embedded batches (Gaussian kernel)."""
    if bandwidth <= 0:
        raise ValidationError("bandwidth must be positive")
    s = embed(enc, np.atleast_2d(student_batch))
    t = embed(enc, np.atleast_2d(teacher_batch))
    m, n = len(s), len(t)
    if m < 2 or n < 2:
        raise ValidationError("mmd needs at least two samples per batch")
    kss, ktt, kst = _gauss_kernel(s, s, bandwidth), _gauss_kernel(t, t, bandwidth), _gauss_kernel(s, t, bandwidth)
    if unbiased:
        xx = (kss.sum() - np.trace(kss)) / (m * (m - 1))
        yy = (ktt.sum() - np.trace(ktt)) / (n * (n - 1))
    else:
        xx, yy = kss.mean(), ktt.mean()
    return float(-(xx + yy - 2.0 * kst.mean()))


def mmd_witness(enc, student_batch, teacher_batch, bandwidth=0.5):
    """Per-sample reward: mean kernel to teacher samples minus mean kernel to
    the other student samples (the empirical MMD witness at each point)."""
    s = embed(enc, np.atleast_2d(student_batch))
    t = embed(enc, np.atleast_2d(teacher_batch))
    m = len(s)
    kss = _gauss_kernel(s, s, bandwidth)
    to_self = (kss.sum(1) - 1.0) / max(m - 1, 1)
    return _gauss_kernel(s, t, bandwidth).mean(1) - to_self


def align_reward(x, condition, data):
    """Softmax over -||x - mu_m||^2 / (2 (4 mode_std)^2), read at the conditioned mode."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cond = np.broadcast_to(np.asarray(condition), (x.shape[0],))
    if np.any(cond < 0) or np.any(cond >= data.mode_count):
        raise ValidationError(f"condition must be a mode id in [0, {data.mode_count})")
    scale = 4.0 * data.mode_std
    d2 = ((x[:, None, :] - data.mode_means[None]) ** 2).sum(-1)
    p = softmax(-d2 / (2 * scale ** 2), axis=1)
    out = p[np.arange(x.shape[0]), cond]
    return float(out[0]) if np.ndim(condition) == 0 and out.size == 1 else out


def energy_reward(x, data):
    """Mixture log-density mapped so a mode centre scores 1 and the origin 0."""
    hi = data.log_density(data.mode_means[:1])[0]
    lo = data.log_density(np.zeros((1, data.dim)))[0]
    out = (data.log_density(x) - lo) / (hi - lo)
    return float(out[0]) if np.ndim(x) == 1 else out


@dataclass(frozen=True)
class RewardComponent:
    kind: str
    weight: float = 1.0
    encoder: int = 0  # encoder seed for teacher_cosine / mmd

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ValidationError(f"unknown reward kind {self.kind!r}")
        if not np.isfinite(self.weight):
            raise ValidationError("reward weights must be finite")

    @property
    def label(self):
        return f"{self.kind}@{self.encoder}" if self.kind in ("teacher_cosine", "mmd") else self.kind


@dataclass(frozen=True)
class RewardSpec:
    components: tuple
    normalize: str = "none"

    def __post_init__(self):
        if not self.components:
            raise ValidationError("reward spec needs at least one component")
        if self.normalize not in ("none", "running_zscore"):
            raise ValidationError(f"unknown normalisation {self.normalize!r}")

    def to_list(self):
        return [{"kind": c.kind, "weight": c.weight, "encoder": c.encoder} for c in self.components]


@dataclass
class RunningZScore:
    """Per-component running mean/variance, merged batch by batch."""

    floor: float = 1e-6
    stats: dict = field(default_factory=dict)

    def update(self, label, values):
        values = np.asarray(values, dtype=np.float64)
        n0, m0, s0 = self.stats.get(label, (0, 0.0, 0.0))
        n1, m1 = values.size, float(values.mean())
        s1 = float(((values - m1) ** 2).sum())
        n = n0 + n1
        delta = m1 - m0
        self.stats[label] = (n, m0 + delta * n1 / n, s0 + s1 + delta ** 2 * n0 * n1 / n)

    def standardize(self, label, values):
        n, m, s = self.stats[label]
        std = max(np.sqrt(s / n), self.floor)
        return (np.asarray(values) - m) / std


@dataclass
class RewardBatch:
    """Per-trajectory rewards (possibly z-scored) plus the raw weighted sum."""

    rewards: np.ndarray
    components: dict
    raw_total: np.ndarray = None

    def __len__(self):
        return len(self.rewards)


def combine(spec, components, zscore=None):
    """Weighted sum of per-trajectory component arrays keyed by label."""
    missing = [c.label for c in spec.components if c.label not in components]
    if missing:
        raise ValidationError(f"missing reward components: {missing}")
    total = raw = None
    for c in spec.components:
        vals = np.asarray(components[c.label], dtype=np.float64)
        raw = c.weight * vals if raw is None else raw + c.weight * vals
        if spec.normalize == "running_zscore":
            if zscore is None:
                raise ValidationError("running_zscore needs a RunningZScore state")
            zscore.update(c.label, vals)
            vals = zscore.standardize(c.label, vals)
        total = c.weight * vals if total is None else total + c.weight * vals
    if not np.all(np.isfinite(total)):
        raise ValidationError("non-finite combined reward")
    return RewardBatch(rewards=total, components={k: np.asarray(v) for k, v in components.items()},
                       raw_total=raw)


class Rewarder:
    """Scores student final states, sampling paired teacher outputs when needed.

    Teacher samples reuse the student's (seed, index) noise streams, so each
    student trajectory is compared with the teacher sample that started from
    the same x_T under the same condition.
    """

    def __init__(self, spec, teacher, schedule, data, mmd_bandwidth=0.5):
        self.spec = spec
        self.teacher = teacher
        self.schedule = schedule
        self.data = data
        self.mmd_bandwidth = mmd_bandwidth
        self.encoders = {}
        self.zscore = RunningZScore()

    def encoder(self, seed):
        if seed not in self.encoders:
            self.encoders[seed] = Encoder(self.data.dim, seed)
        return self.encoders[seed]

    @property
    def needs_teacher(self):
        return any(c.kind in ("teacher_cosine", "mmd") for c in self.spec.components)

    def components(self, finals, conditions, teacher_finals=None):
        comps = {}
        for c in self.spec.components:
            if c.label in comps:
                continue
            if c.kind == "teacher_cosine":
                comps[c.label] = cosine_reward(self.encoder(c.encoder), finals, teacher_finals)
            elif c.kind == "mmd":
                vals = np.empty(len(finals))
                for cond in np.unique(conditions):
                    idx = np.nonzero(conditions == cond)[0]
                    vals[idx] = mmd_witness(self.encoder(c.encoder), finals[idx], teacher_finals[idx],
                                            self.mmd_bandwidth)
                comps[c.label] = vals
            elif c.kind == "align":
                comps[c.label] = align_reward(finals, conditions, self.data)
            else:
                comps[c.label] = energy_reward(finals, self.data)
        return comps

    def teacher_finals(self, conditions, seed, offset=0):
        return sample_reverse(self.teacher, self.schedule, len(conditions), record=False, seed=seed,
                              cond=conditions, offset=offset).finals

    def __call__(self, finals, conditions, seed, offset=0):
        teacher = self.teacher_finals(conditions, seed, offset) if self.needs_teacher else None
        comps = self.components(finals, np.asarray(conditions), teacher)
        batch = combine(self.spec, comps, self.zscore)
        batch.teacher_finals = teacher
        return batch
