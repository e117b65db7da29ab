"""Small dense-network engine with hand-written backprop.

Everything is float64 numpy. Networks are stateless between calls: ``forward``
returns a cache object that the matching ``backward`` consumes, so the same
network can be evaluated several times per step (the encoder is applied to
``x``, ``x_r`` and ``x_Tr``) and each pass differentiated independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class InvalidDimensionError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class RngStream:
    """Seeded counter-based random stream (Philox).

    Normal draws use Box-Muller on the stream's uniforms so the sequence only
    depends on the Philox bit generator, not on numpy's normal sampler.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence([self.seed, *self.key])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, *key: int) -> "RngStream":
        """Independent substream identified by ``key`` (does not advance self)."""
        return RngStream(self.seed, self.key + tuple(key))

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, high: int, size) -> np.ndarray:
        return self._gen.integers(0, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def standard_normal(self, rows: int, cols: int) -> np.ndarray:
        n = rows * cols
        half = (n + 1) // 2
        # 1 - U lies in (0, 1], keeps log finite
        u1 = 1.0 - self._gen.random(half)
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(rows, cols)


def sample_standard_normal(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    if rows < 0 or cols < 0:
        raise InvalidDimensionError(f"bad shape ({rows}, {cols})")
    return rng.standard_normal(rows, cols)


def kaiming_uniform_init(fan_in: int, fan_out: int, rng: RngStream) -> np.ndarray:
    """Weights of shape (fan_in, fan_out) drawn from U(-b, b), b = sqrt(6 / fan_in)."""
    if fan_in < 1 or fan_out < 1:
        raise InvalidDimensionError(f"fan_in={fan_in}, fan_out={fan_out}")
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out))


@dataclass
class Parameter:
    value: np.ndarray
    name: str = ""
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


ACTIVATIONS = ("relu", "sigmoid", "identity")


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        # split by sign to avoid overflow in exp
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(kind: str, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return g * (z > 0)
    if kind == "sigmoid":
        return g * a * (1.0 - a)
    return g


class Dense:
    """Affine layer ``a = act(x @ W + b)`` with W of shape (in, out)."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, activation: str = "identity", name: str = ""):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        weight = np.asarray(weight, dtype=DTYPE)
        bias = np.asarray(bias, dtype=DTYPE).reshape(-1)
        if weight.ndim != 2 or bias.shape[0] != weight.shape[1]:
            raise InvalidDimensionError(f"weight {weight.shape} vs bias {bias.shape}")
        self.W = Parameter(weight, f"{name}.W")
        self.b = Parameter(bias, f"{name}.b")
        self.activation = activation

    @classmethod
    def init(cls, fan_in, fan_out, activation, rng, name=""):
        W = kaiming_uniform_init(fan_in, fan_out, rng)
        # bias: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
        bound = 1.0 / np.sqrt(fan_in)
        b = rng.uniform(-bound, bound, fan_out)
        return cls(W, b, activation, name)

    @property
    def in_dim(self):
        return self.W.value.shape[0]

    @property
    def out_dim(self):
        return self.W.value.shape[1]

    def parameters(self):
        return [self.W, self.b]

    def forward(self, x):
        z = x @ self.W.value + self.b.value
        a = _activate(self.activation, z)
        return a, (x, z, a)

    def backward(self, cache, g, param_grads=True):
        x, z, a = cache
        gz = _activation_grad(self.activation, z, a, g)
        if param_grads:
            self.W.grad += x.T @ gz
            self.b.grad += gz.sum(axis=0)
        return gz @ self.W.value.T


@dataclass
class Cache:
    hidden: list
    heads: list


class DenseNet:
    """Stack of hidden Dense layers followed by one or more parallel output heads.

    With a single head ``forward`` returns one matrix; with several it returns a
    tuple (the encoder and transformer use a mean head and a log-variance head).
    """

    def __init__(self, hidden: list[Dense], heads: list[Dense], name: str = ""):
        if not heads:
            raise InvalidDimensionError("network needs at least one output head")
        dims = [layer.in_dim for layer in hidden] + [heads[0].in_dim]
        for prev, layer in zip(hidden, hidden[1:] + [heads[0]]):
            if prev.out_dim != layer.in_dim:
                raise InvalidDimensionError(f"layer chain broken: {prev.out_dim} -> {layer.in_dim}")
        if any(h.in_dim != heads[0].in_dim for h in heads):
            raise InvalidDimensionError("heads must share their input width")
        self.hidden = hidden
        self.heads = heads
        self.input_dim = dims[0]
        self.name = name

    @classmethod
    def build(cls, input_dim, hidden_widths, head_dims, head_activation, rng, name=""):
        hidden = []
        d = input_dim
        for i, w in enumerate(hidden_widths):
            hidden.append(Dense.init(d, w, "relu", rng, f"{name}.h{i}"))
            d = w
        heads = [Dense.init(d, k, head_activation, rng, f"{name}.out{j}") for j, k in enumerate(head_dims)]
        return cls(hidden, heads, name)

    def parameters(self) -> list[Parameter]:
        params = []
        for layer in self.hidden + self.heads:
            params.extend(layer.parameters())
        return params

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise InvalidDimensionError(f"{self.name}: expected (*, {self.input_dim}) input, got {x.shape}")
        hidden_caches = []
        h = x
        for layer in self.hidden:
            h, c = layer.forward(h)
            hidden_caches.append(c)
        outs, head_caches = [], []
        for layer in self.heads:
            o, c = layer.forward(h)
            outs.append(o)
            head_caches.append(c)
        cache = Cache(hidden_caches, head_caches)
        if len(outs) == 1:
            return outs[0], cache
        return tuple(outs), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, upstream, param_grads=True):
        """Accumulate parameter grads (unless ``param_grads`` is False) and return d/d(input).

        ``upstream`` is a matrix for single-head nets, a sequence of matrices
        (None allowed for an unused head) otherwise.
        """
        if cache is None:
            raise StateError(f"{self.name}: backward called without a forward cache")
        if len(self.heads) == 1 and not isinstance(upstream, (tuple, list)):
            upstream = (upstream,)
        if len(upstream) != len(self.heads):
            raise InvalidDimensionError("one upstream gradient per head expected")
        g = None
        for layer, c, up in zip(self.heads, cache.heads, upstream):
            if up is None:
                continue
            gh = layer.backward(c, up, param_grads)
            g = gh if g is None else g + gh
        if g is None:
            g = np.zeros_like(cache.heads[0][0])
        for layer, c in zip(reversed(self.hidden), reversed(cache.hidden)):
            g = layer.backward(c, g, param_grads)
        return g


class Adam:
    """Adam with bias correction. One instance per disjoint parameter group."""

    def __init__(self, params: list[Parameter], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p, m in zip(self.params, self.m):
            if p.value.shape != m.shape:
                raise StateError(f"{p.name}: shape {p.value.shape} drifted from optimizer state {m.shape}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, state: Adam):
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise StateError("parameter list does not match optimizer state")
    state.step()


def grad_check(params: list[Parameter], loss_and_grad, n_coords=40, step=1e-5, rng=None, tol=1e-4, floor=1e-6):
    """Compare analytic gradients against central differences.

    ``loss_and_grad()`` must zero the grads, compute the loss, run backward and
    return the scalar loss. Coordinates are sampled from every parameter.
    Returns ``(max_rel_err, passed)`` with relative error
    ``|a - n| / max(|n|, floor)``; the floor keeps exact-zero grads from
    dividing by zero.
    """
    rng = rng or RngStream(0)
    loss_and_grad()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        k = min(n_coords, flat.size)
        idx = rng.permutation(flat.size)[:k]
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            up = loss_and_grad()
            flat[i] = old - step
            down = loss_and_grad()
            flat[i] = old
            num = (up - down) / (2 * step)
            a = ga.reshape(-1)[i]
            err = abs(a - num) / max(abs(num), floor)
            worst = max(worst, err)
    loss_and_grad()
    return worst, worst <= tol
