"""Small fully connected regressor trained with L1 loss.

Hidden layers are ReLU, the output layer is linear.  Inputs and targets are
standardized per column with statistics frozen at training time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

FORMAT = "walkbo-mlp"
FORMAT_VERSION = 1


class TrainingError(FloatingPointError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass
class MLP:
    sizes: list
    weights: list
    biases: list
    x_shift: np.ndarray
    x_scale: np.ndarray
    y_shift: np.ndarray
    y_scale: np.ndarray
    history: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} has shape {w.shape}/{b.shape}, sizes say "
                                 f"{self.sizes[i]}->{self.sizes[i + 1]}")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, x_stats=None, y_stats=None) -> "MLP":
        sizes = [int(s) for s in sizes]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            a = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        # zero output layer: with mostly-constant targets a random one drives
        # the ReLUs onto the L1 median plateau before any structure is learned
        weights[-1][:] = 0.0
        xs, xc = x_stats if x_stats is not None else (np.zeros(sizes[0]), np.ones(sizes[0]))
        ys, yc = y_stats if y_stats is not None else (np.zeros(sizes[-1]), np.ones(sizes[-1]))
        return cls(sizes, weights, biases, np.asarray(xs, float), np.asarray(xc, float),
                   np.asarray(ys, float), np.asarray(yc, float))

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.n_in}")
        return x

    def forward_normalized(self, z: np.ndarray, cache: list | None = None) -> np.ndarray:
        h = z
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w + b
            if cache is not None:
                cache.append((h, a))
            h = a if i == last else np.maximum(a, 0.0)
        return h

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)

    def forward(self, x) -> np.ndarray:
        x = self._check(x)
        single = x.ndim == 1
        z = (np.atleast_2d(x) - self.x_shift) / self.x_scale
        y = self.forward_normalized(z) * self.y_scale + self.y_shift
        return y[0] if single else y

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        return MLP(list(self.sizes), [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.x_shift.copy(), self.x_scale.copy(), self.y_shift.copy(), self.y_scale.copy(),
                   list(self.history))

    # -- serialization -------------------------------------------------------

    def to_text(self) -> str:
        body = {
            "sizes": self.sizes,
            "x_shift": self.x_shift.tolist(), "x_scale": self.x_scale.tolist(),
            "y_shift": self.y_shift.tolist(), "y_scale": self.y_scale.tolist(),
            "weights": [w.ravel(order="C").tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        payload = json.dumps(body, separators=(",", ":"))
        digest = hashlib.sha256(payload.encode()).hexdigest()
        return f"{FORMAT} {FORMAT_VERSION} sha256={digest}\n{payload}\n"

    @classmethod
    def from_text(cls, text: str) -> "MLP":
        head, _, payload = text.partition("\n")
        parts = head.split()
        if len(parts) != 3 or parts[0] != FORMAT or not parts[2].startswith("sha256="):
            raise ModelFormatError("not a walkbo model file")
        if int(parts[1]) != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model version {parts[1]}")
        payload = payload.rstrip("\n")
        if hashlib.sha256(payload.encode()).hexdigest() != parts[2][len("sha256="):]:
            raise ModelFormatError("model checksum mismatch")
        body = json.loads(payload)
        sizes = body["sizes"]
        weights = [np.array(w, dtype=float).reshape(sizes[i], sizes[i + 1])
                   for i, w in enumerate(body["weights"])]
        biases = [np.array(b, dtype=float) for b in body["biases"]]
        return cls(sizes, weights, biases, np.array(body["x_shift"]), np.array(body["x_scale"]),
                   np.array(body["y_shift"]), np.array(body["y_scale"]))

    def save(self, path) -> str:
        text = self.to_text()
        with open(path, "w") as f:
            f.write(text)
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def load(cls, path) -> "MLP":
        with open(path) as f:
            return cls.from_text(f.read())


def loss_and_grads(net: MLP, z: np.ndarray, t: np.ndarray, loss: str = "l1"):
    """Loss on normalized inputs/targets and its gradient for every parameter.

    L1 uses the sign subgradient, 0 at exact ties.  ``"l2"`` is half the mean
    squared error, used for gradient checking.
    """
    cache: list = []
    out = net.forward_normalized(z, cache)
    r = out - t
    m = r.size
    if loss == "l1":
        value = np.abs(r).sum() / m
        delta = np.sign(r) / m
    elif loss == "l2":
        value = 0.5 * (r * r).sum() / m
        delta = r / m
    else:
        raise ValueError(f"unknown loss {loss!r}")
    grads = [None] * (2 * len(net.weights))
    last = len(net.weights) - 1
    for i in range(last, -1, -1):
        h, a = cache[i]
        if i != last:
            delta = delta * (a > 0.0)
        grads[2 * i] = h.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[i].T
    return value, grads


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "l1"
    batch_size: int = 32
    epochs: int = 100
    lr: float = 1e-2
    lr_decay: float = 0.5
    decay_every: int = 30
    momentum: float = 0.9
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction <= 0.5:
            raise ValueError("validation fraction must lie in (0, 0.5]")
        if self.loss != "l1":
            raise ValueError("only L1 training is supported")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.decay_every)


def _stats(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = a.mean(axis=0)
    # exact shift for constant columns, else the L1 sign never settles on an ulp residual
    mu = np.where(np.all(a == a[:1], axis=0), a[0], mu)
    sd = a.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return mu, sd


def l1(net: MLP, x: np.ndarray, y: np.ndarray) -> float:
    """Mean absolute error in target units."""
    return float(np.mean(np.abs(net.forward(x) - y)))


def train(x, y, hidden, cfg: TrainConfig = TrainConfig()) -> MLP:
    """Fit an MLP to (x, y) by seeded minibatch SGD with momentum on the L1 loss.

    ``hidden`` lists the hidden layer widths.  ``net.history`` receives one
    (train_l1, val_l1) pair per epoch, both in normalized target units; the
    trained net also carries ``split`` (train, validation row indices).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise ValueError("dataset is empty or x/y row counts differ")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain non-finite values")

    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n))) if n > 1 else 0
    val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    if tr_idx.size == 0:
        tr_idx = val_idx

    x_stats = _stats(x[tr_idx])
    y_stats = _stats(y[tr_idx])
    net = MLP.init([x.shape[1], *hidden, y.shape[1]], rng, x_stats, y_stats)
    z = (x - net.x_shift) / net.x_scale
    t = (y - net.y_shift) / net.y_scale

    params = net.parameters()
    velocity = [np.zeros_like(p) for p in params]
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = tr_idx[rng.permutation(tr_idx.size)]
        total = 0.0
        for start in range(0, order.size, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            value, grads = loss_and_grads(net, z[b], t[b])
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            total += value * b.size
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= lr * g
                p += v
        train_loss = total / order.size
        val_loss = float(np.mean(np.abs(net.forward_normalized(z[val_idx]) - t[val_idx]))) \
            if val_idx.size else float("nan")
        if not np.isfinite(train_loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        net.history.append((float(train_loss), val_loss))
    net.split = (tr_idx, val_idx)
    return net


def gradient_check(net: MLP, x, y, epsilon: float = 1e-6, loss: str = "l1") -> float:
    """Largest relative error between backprop and central differences.

    Works in normalized space with the net's own scalings.  Parameters whose
    perturbation moves a residual or a ReLU pre-activation across zero are
    skipped, since the loss has a kink there.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-7, 1e-4]")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(x.shape[0], -1)
    z = (x - net.x_shift) / net.x_scale
    t = (y - net.y_shift) / net.y_scale
    net = net.copy()
    _, grads = loss_and_grads(net, z, t, loss)

    def pattern():
        cache: list = []
        out = net.forward_normalized(z, cache)
        masks = [a > 0 for _, a in cache[:-1]]
        return np.sign(out - t), masks

    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            lp, _ = loss_and_grads(net, z, t, loss)
            sp, mp = pattern()
            flat[j] = orig - epsilon
            lm, _ = loss_and_grads(net, z, t, loss)
            sm, mm = pattern()
            flat[j] = orig
            if loss == "l1" and (np.any(sp != sm) or np.any(sp == 0)):
                continue
            if any(np.any(a != b) for a, b in zip(mp, mm)):
                continue
            num = (lp - lm) / (2.0 * epsilon)
            ana = gflat[j]
            denom = max(abs(num), abs(ana))
            if denom < 1e-8:
                continue
            worst = max(worst, abs(num - ana) / denom)
    return worst
