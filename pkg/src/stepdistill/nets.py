"""Small fully connected networks with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector so optimizers, checkpoints and
finite-difference checks can treat every network the same way.
"""

import numpy as np

from .errors import ValidationError

ACTIVATIONS = ("tanh", "smooth-relu")


def _act(name, z):
    if name == "tanh":
        h = np.tanh(z)
        return h, 1.0 - h * h
    # softplus, written to stay finite for large |z|
    h = np.logaddexp(0.0, z)
    return h, 0.5 * (1.0 + np.tanh(0.5 * z))


def param_count(layer_widths):
    return sum(a * b + b for a, b in zip(layer_widths[:-1], layer_widths[1:]))


class MLP:
    """Dense network ``widths[0] -> ... -> widths[-1]``, linear output layer."""

    def __init__(self, layer_widths, activation="tanh", params=None, seed=0):
        if activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {activation!r}")
        self.layer_widths = [int(w) for w in layer_widths]
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise ValidationError(f"bad layer widths {layer_widths}")
        self.activation = activation
        n = param_count(self.layer_widths)
        if params is None:
            params = self.init_params(seed)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ValidationError(f"expected {n} parameters, got {params.shape}")
        self.params = params.copy()

    @property
    def n_params(self):
        return self.params.size

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        chunks = []
        for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            chunks.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)).ravel())
            chunks.append(np.zeros(fan_out))
        return np.concatenate(chunks)

    def layers(self, params=None):
        """Yield (W, b) views into the flat vector."""
        p = self.params if params is None else params
        out, i = [], 0
        for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            W = p[i:i + fan_in * fan_out].reshape(fan_in, fan_out)
            i += fan_in * fan_out
            b = p[i:i + fan_out]
            i += fan_out
            out.append((W, b))
        return out

    def last_layer_slice(self):
        fan_in, fan_out = self.layer_widths[-2:]
        n = fan_in * fan_out + fan_out
        return slice(self.n_params - n, self.n_params)

    def forward(self, inputs, params=None):
        """Return (output, cache) for a batch of shape (B, widths[0])."""
        h = np.asarray(inputs, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.layer_widths[0]:
            raise ValidationError(f"input shape {h.shape} does not match width {self.layer_widths[0]}")
        layers = self.layers(params)
        hs, dacts = [h], []
        for W, b in layers[:-1]:
            h, d = _act(self.activation, h @ W + b)
            hs.append(h)
            dacts.append(d)
        W, b = layers[-1]
        out = h @ W + b
        return out, (hs, dacts, layers)

    def __call__(self, inputs, params=None):
        return self.forward(inputs, params)[0]

    def backward(self, cache, grad_out):
        """Gradient of sum(grad_out * output) with respect to the flat params."""
        hs, dacts, layers = cache
        grads = []
        g = np.asarray(grad_out, dtype=np.float64)
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            grads.append(g.sum(axis=0))
            grads.append((hs[li].T @ g).ravel())
            if li > 0:
                g = (g @ W.T) * dacts[li - 1]
        return np.concatenate(grads[::-1])

    def input_jacobian(self, cache, n_cols):
        """d output / d inputs[:, :n_cols], shape (B, out_dim, n_cols)."""
        hs, dacts, layers = cache
        W0, _ = layers[0]
        # forward-mode tangents, one per selected input column
        tang = np.broadcast_to(W0[:n_cols][None], (hs[0].shape[0],) + W0[:n_cols].shape)
        for li in range(1, len(layers)):
            tang = tang * dacts[li - 1][:, None, :]
            tang = tang @ layers[li][0]
        return np.transpose(tang, (0, 2, 1))


def time_features(t, T_ref, n_features):
    """Sinusoidal features of t / T_ref at frequencies pi * 2^k."""
    if n_features % 2:
        raise ValidationError("time feature count must be even")
    s = np.asarray(t, dtype=np.float64).reshape(-1, 1) / float(T_ref)
    freqs = np.pi * 2.0 ** np.arange(n_features // 2)
    ang = s * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def condition_features(cond, n, cond_dim):
    """One-hot rows for condition ids; id -1 (or None) gives a zero row."""
    if cond_dim == 0:
        return np.zeros((n, 0))
    if cond is None:
        cond = -1
    cond = np.broadcast_to(np.asarray(cond, dtype=np.int64), (n,))
    if np.any(cond >= cond_dim) or np.any(cond < -1):
        raise ValidationError(f"condition ids must lie in [-1, {cond_dim - 1}]")
    out = np.zeros((n, cond_dim))
    valid = cond >= 0
    out[np.nonzero(valid)[0], cond[valid]] = 1.0
    return out


class Denoiser:
    """Noise predictor eps_hat(x_t, t, c) built on an :class:`MLP`.

    Input layout is ``[x (data_dim), time features, one-hot condition]``.
    """

    def __init__(self, data_dim=2, hidden=(64, 64, 64), time_dim=8, cond_dim=0,
                 T_ref=50, activation="tanh", params=None, seed=0):
        self.data_dim = int(data_dim)
        self.time_dim = int(time_dim)
        self.cond_dim = int(cond_dim)
        self.T_ref = int(T_ref)
        widths = [self.data_dim + self.time_dim + self.cond_dim, *hidden, self.data_dim]
        self.mlp = MLP(widths, activation=activation, params=params, seed=seed)
        self.seed = seed

    @property
    def params(self):
        return self.mlp.params

    @params.setter
    def params(self, value):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.mlp.params.shape:
            raise ValidationError("parameter vector has the wrong size")
        self.mlp.params = value.copy()

    @property
    def layer_widths(self):
        return self.mlp.layer_widths

    @property
    def activation(self):
        return self.mlp.activation

    def copy(self):
        return Denoiser(self.data_dim, tuple(self.layer_widths[1:-1]), self.time_dim, self.cond_dim,
                        self.T_ref, self.activation, params=self.params, seed=self.seed)

    def inputs(self, x, t, cond=None):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.data_dim:
            raise ValidationError(f"expected data dim {self.data_dim}, got {x.shape[1]}")
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        return np.concatenate(
            [x, time_features(t, self.T_ref, self.time_dim), condition_features(cond, n, self.cond_dim)],
            axis=1,
        )

    def forward(self, x, t, cond=None, params=None):
        return self.mlp.forward(self.inputs(x, t, cond), params)

    def __call__(self, x, t, cond=None, params=None):
        return self.forward(x, t, cond, params)[0]

    def backward(self, cache, grad_out):
        return self.mlp.backward(cache, grad_out)

    def jacobian_x(self, x, t, cond=None):
        """Returns (eps, d eps / d x) with the Jacobian shaped (B, d, d)."""
        out, cache = self.forward(x, t, cond)
        return out, self.mlp.input_jacobian(cache, self.data_dim)


class LinearDenoiser:
    """eps_hat(x, t) = W x + b, independent of t and c.

    Used as an analytically tractable teacher: every reverse transition is
    affine-Gaussian, so chains of them compose in closed form.
    """

    def __init__(self, W, b=None):
        self.W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        self.data_dim = self.W.shape[0]
        self.b = np.zeros(self.data_dim) if b is None else np.asarray(b, dtype=np.float64)
        self.cond_dim = 0

    def __call__(self, x, t, cond=None, params=None):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return x @ self.W.T + self.b

    def jacobian_x(self, x, t, cond=None):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self(x, t), np.broadcast_to(self.W, (x.shape[0],) + self.W.shape)


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
