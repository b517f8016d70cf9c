"""Zero-mean GP regression with SE-form kernels on raw or learned features."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import ndtr

from walkbo.nnet import MLP

KERNELS = ("SE", "asymNN", "trajNN")
TRAJ_DIM = 8

JITTER_START = 1e-10
JITTER_MAX = 1e-4

SIGNAL_BOUNDS = (1e-4, 1e4)
LENGTH_BOUNDS = (1e-3, 1e2)
NOISE_BOUNDS = (1e-8, 1.0)


class FactorizationError(np.linalg.LinAlgError):
    pass


def canonical_kind(kind: str) -> str:
    for k in KERNELS:
        if k.lower() == kind.lower():
            return k
    raise ValueError(f"unknown kernel {kind!r}; choose from {', '.join(KERNELS)}")


@dataclass
class KernelHyperparams:
    signal_var: float
    lengthscales: np.ndarray
    noise_var: float

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if self.signal_var <= 0 or self.noise_var <= 0 or np.any(self.lengthscales <= 0):
            raise ValueError("kernel hyperparameters must be strictly positive")

    def to_log(self) -> np.ndarray:
        return np.log(np.concatenate([[self.signal_var], self.lengthscales, [self.noise_var]]))

    @classmethod
    def from_log(cls, theta) -> "KernelHyperparams":
        e = np.exp(np.asarray(theta, dtype=float))
        return cls(float(e[0]), e[1:-1], float(e[-1]))


def se_gram(f1: np.ndarray, f2: np.ndarray, signal_var: float, lengthscales) -> np.ndarray:
    a = np.atleast_2d(f1) / lengthscales
    b = np.atleast_2d(f2) / lengthscales
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return signal_var * np.exp(-0.5 * sq)


@dataclass
class KernelSpec:
    """SE, or SE on the outputs of a feature network (asymNN: scalar score, trajNN: 8 summaries)."""

    kind: str
    hyper: KernelHyperparams | None = None
    net: MLP | None = None
    feature_range: np.ndarray | None = None

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        if self.kind != "SE":
            if self.net is None:
                raise ValueError(f"{self.kind} kernel needs a feature network")
            want = 1 if self.kind == "asymNN" else TRAJ_DIM
            if self.net.n_out != want:
                raise ValueError(f"{self.kind} expects a network with {want} outputs, got {self.net.n_out}")

    def features(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "SE":
            return x
        return np.atleast_2d(self.net.forward(x)).reshape(x.shape[0], -1)

    def feature_dim(self, d: int) -> int:
        return {"SE": d, "asymNN": 1, "trajNN": TRAJ_DIM}[self.kind]

    def with_range(self, bounds, n_ref: int = 4096) -> "KernelSpec":
        """Attach per-feature ranges, estimated on a fixed uniform sample of ``bounds``."""
        if self.kind == "SE":
            rng_ = bounds.hi - bounds.lo
        else:
            ref = bounds.uniform(np.random.default_rng(12345), n_ref)
            f = self.features(ref)
            rng_ = f.max(0) - f.min(0)
        rng_ = np.where(rng_ > 1e-12, rng_, 1.0)
        return replace(self, feature_range=rng_)

    def default_hyper(self, d: int, y_var: float = 1.0) -> KernelHyperparams:
        r = self.feature_range if self.feature_range is not None else np.ones(self.feature_dim(d))
        v = y_var if y_var > 0 else 1.0
        return KernelHyperparams(v, 0.2 * r, 1e-3 * v)

    def gram(self, f1, f2, hyper: KernelHyperparams | None = None) -> np.ndarray:
        h = hyper or self.hyper
        return se_gram(f1, f2, h.signal_var, h.lengthscales)


def kernel_eval(spec: KernelSpec, xi, xj) -> float:
    fi = spec.features(xi)
    fj = spec.features(xj)
    return float(spec.gram(fi, fj)[0, 0])


def cholesky_jitter(a: np.ndarray, scale: float = 1.0) -> tuple[np.ndarray, float]:
    """Cholesky of ``a + j I`` for the first j in 1e-10, 1e-9, ... 1e-4 (times ``scale``) that works."""
    jitter = JITTER_START
    eye = np.eye(a.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(a + jitter * scale * eye), jitter * scale
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError("covariance not positive definite even with maximum jitter")


@dataclass
class PosteriorPrediction:
    mean: float
    var: float

    @property
    def std(self) -> float:
        return float(np.sqrt(self.var))


@dataclass
class GPState:
    """Observations plus kernel, with a cached factorization of K + noise I.

    With ``center=True`` the median of ``y`` is subtracted before
    conditioning and added back to predictions.
    """

    X: np.ndarray
    y: np.ndarray
    kernel: KernelSpec
    center: bool = False
    offset: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[None, :] if self.y.size == 1 else self.X.reshape(self.y.size, -1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y lengths differ")
        if self.kernel.hyper is None:
            self.kernel = replace(self.kernel, hyper=self.kernel.default_hyper(self.X.shape[1], self.y_var))
        self.offset = float(np.median(self.y)) if (self.center and self.y.size) else 0.0
        self._feat = self.kernel.features(self.X) if self.y.size else None
        self._factor()

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def yc(self) -> np.ndarray:
        return self.y - self.offset

    @property
    def y_var(self) -> float:
        return float(np.var(self.y)) if self.y.size else 0.0

    def _factor(self):
        if self.n == 0:
            self.L = None
            self.alpha = None
            self.jitter = 0.0
            return
        h = self.kernel.hyper
        k = self.kernel.gram(self._feat, self._feat) + h.noise_var * np.eye(self.n)
        self.L, self.jitter = cholesky_jitter(k)
        self.alpha = cho_solve((self.L, True), self.yc)

    def set_hyper(self, hyper: KernelHyperparams):
        self.kernel = replace(self.kernel, hyper=hyper)
        self._factor()

    def predict(self, xs) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at each row of ``xs``."""
        fs = self.kernel.features(xs)
        prior = np.full(fs.shape[0], self.kernel.hyper.signal_var)
        if self.n == 0:
            return np.full(fs.shape[0], self.offset), prior
        ks = self.kernel.gram(self._feat, fs)
        mu = ks.T @ self.alpha + self.offset
        v = solve_triangular(self.L, ks, lower=True)
        var = prior - (v * v).sum(0)
        return mu, np.maximum(var, 0.0)

    def log_marginal_likelihood(self, theta=None, grad: bool = False):
        """LML at log-hyperparameters ``theta`` (current ones by default)."""
        h = self.kernel.hyper if theta is None else KernelHyperparams.from_log(theta)
        f = self._feat
        n = self.n
        kse = se_gram(f, f, h.signal_var, h.lengthscales)
        L, _ = cholesky_jitter(kse + h.noise_var * np.eye(n))
        yc = self.yc
        alpha = cho_solve((L, True), yc)
        lml = -0.5 * yc @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)
        if not grad:
            return float(lml)
        kinv = cho_solve((L, True), np.eye(n))
        w = np.outer(alpha, alpha) - kinv
        g = np.empty(2 + f.shape[1])
        g[0] = 0.5 * np.sum(w * kse)
        for j in range(f.shape[1]):
            diff = (f[:, j][:, None] - f[:, j][None, :]) / h.lengthscales[j]
            g[1 + j] = 0.5 * np.sum(w * kse * diff * diff)
        g[-1] = 0.5 * h.noise_var * np.trace(w)
        return float(lml), g


def gp_posterior(gp: GPState, x) -> PosteriorPrediction:
    mu, var = gp.predict(np.atleast_2d(x))
    return PosteriorPrediction(float(mu[0]), float(var[0]))


def hyper_bounds(kernel: KernelSpec, d: int, y_var: float) -> np.ndarray:
    """Box in log-hyperparameter space, one (low, high) row per hyperparameter."""
    v = y_var if y_var > 0 else 1.0
    r = kernel.feature_range if kernel.feature_range is not None else np.ones(kernel.feature_dim(d))
    rows = [np.log(np.array(SIGNAL_BOUNDS) * v)]
    rows += [np.log(np.array(LENGTH_BOUNDS) * ri) for ri in r]
    rows.append(np.log(np.array(NOISE_BOUNDS) * v))
    return np.array(rows)


@dataclass
class HyperFit:
    hyper: KernelHyperparams
    lml: float
    ok: bool


def fit_hyperparams(gp: GPState, bounds: np.ndarray | None = None, seed: int = 0,
                    n_starts: int = 4, maxiter: int = 200, min_obs: int = 3) -> HyperFit:
    """Type-II maximum likelihood by multi-start L-BFGS-B in log space.

    Starts are the current hyperparameters (clipped into the box) plus
    uniform draws from the box.  With fewer than ``min_obs`` observations the
    current hyperparameters come back unchanged.
    """
    current = gp.kernel.hyper
    if gp.n < min_obs:
        return HyperFit(current, float("nan"), True)
    box = hyper_bounds(gp.kernel, gp.X.shape[1], gp.y_var) if bounds is None else np.asarray(bounds)
    rng = np.random.default_rng(seed)
    starts = [np.clip(current.to_log(), box[:, 0], box[:, 1])]
    for _ in range(n_starts - 1):
        starts.append(box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random(box.shape[0]))

    def objective(theta):
        try:
            lml, g = gp.log_marginal_likelihood(theta, grad=True)
        except FactorizationError:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(theta)
        return -lml, -g

    best_theta, best_val = None, np.inf
    for x0 in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=box,
                           options={"maxiter": maxiter})
        if np.isfinite(res.fun) and res.fun < 1e24 and res.fun < best_val:
            best_val, best_theta = float(res.fun), res.x
    if best_theta is None:
        warnings.warn("hyperparameter fit failed for every start; keeping previous values")
        return HyperFit(current, float("nan"), False)
    hyper = KernelHyperparams.from_log(best_theta)
    return HyperFit(hyper, -best_val, True)


def expected_improvement(mean, var, best: float):
    """EI for minimization, elementwise; zero-variance points get max(0, best - mean)."""
    scalar = np.ndim(mean) == 0 and np.ndim(var) == 0
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sigma = np.sqrt(np.maximum(np.atleast_1d(np.asarray(var, dtype=float)), 0.0))
    mean, sigma = np.broadcast_arrays(mean, sigma)
    imp = best - mean
    out = np.maximum(imp, 0.0)
    pos = sigma > 0
    z = imp[pos] / sigma[pos]
    ei = imp[pos] * ndtr(z) + sigma[pos] * np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    out[pos] = np.maximum(ei, 0.0)
    return float(out[0]) if scalar else out
