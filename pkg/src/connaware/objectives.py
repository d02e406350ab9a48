"""Synthetic strongly convex federated objectives with exactly known optima.

Clients hold quadratics ``f_i(x) = 1/2 (x - b_i)^T Q_i (x - b_i)`` with
``mu I <= Q_i <= beta I``; the global optimum is a dense linear solve. Stochastic
gradients are exact gradients plus isotropic Gaussian noise of total variance
``noise_var``. An L2-regularised logistic task with label-skewed clients is
available for a less idealised curvature profile.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .rng import Domain, stream
from .spectral import jacobi_eigh


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class QuadraticTask:
    Q: np.ndarray  # (n, p, p)
    b: np.ndarray  # (n, p), local minimisers
    mu: float
    beta: float
    noise_var: float = 0.0

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def p(self) -> int:
        return self.b.shape[1]

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.Q[i] @ (x - self.b[i])

    def grads(self, X: np.ndarray) -> np.ndarray:
        """Row ``i`` is ``grad f_i(X[i])``."""
        return np.einsum("ijk,ik->ij", self.Q, X - self.b)

    def local_loss(self, i: int, x: np.ndarray) -> float:
        d = x - self.b[i]
        return 0.5 * float(d @ self.Q[i] @ d)

    def loss(self, x: np.ndarray) -> float:
        d = x[None, :] - self.b
        return 0.5 * float(np.einsum("ij,ijk,ik->", d, self.Q, d)) / self.n

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        return self.grads(np.broadcast_to(x, self.b.shape)).mean(axis=0)

    def local_minimizers(self) -> np.ndarray:
        return self.b

    def local_minima(self) -> np.ndarray:
        return np.zeros(self.n)

    def optimum(self) -> np.ndarray:
        H = self.Q.sum(axis=0)
        return np.linalg.solve(H, np.einsum("ijk,ik->j", self.Q, self.b))


@dataclass(frozen=True)
class HeterogeneityProfile:
    delta: float
    gamma: float
    x_star: np.ndarray
    spread: float


def heterogeneity(task, spread: float = float("nan")) -> HeterogeneityProfile:
    x_star = task.optimum()
    delta = task.beta * float(np.max(np.linalg.norm(task.local_minimizers() - x_star, axis=1)))
    gamma = task.loss(x_star) - float(np.mean(task.local_minima()))
    return HeterogeneityProfile(delta=delta, gamma=max(gamma, 0.0), x_star=x_star, spread=spread)


def _random_rotation(rng: np.random.Generator, p: int) -> np.ndarray:
    Z = rng.standard_normal((p, p))
    Qm, R = np.linalg.qr(Z)
    return Qm * np.sign(np.diag(R))


def build_quadratic_suite(
    n: int,
    p: int,
    mu: float,
    beta: float,
    spread: float,
    seed: int,
    noise_var: float = 0.0,
) -> tuple[QuadraticTask, HeterogeneityProfile]:
    """Random quadratic clients; each ``Q_i`` spans exactly ``[mu, beta]`` when ``p >= 2``."""
    if not 0 < mu <= beta:
        raise ValueError(f"need 0 < mu <= beta, got mu={mu}, beta={beta}")
    if p < 1 or n < 1:
        raise ValueError("need n >= 1 and p >= 1")
    if spread < 0 or noise_var < 0:
        raise ValueError("spread and noise_var must be non-negative")
    Q = np.empty((n, p, p))
    b = np.empty((n, p))
    for i in range(n):
        rng = stream(seed, Domain.SUITE, i)
        lam = rng.uniform(mu, beta, size=p)
        if p >= 2:
            lam[0], lam[1] = mu, beta
        R = _random_rotation(rng, p)
        Qi = (R * lam) @ R.T
        Q[i] = 0.5 * (Qi + Qi.T)
        direction = rng.standard_normal(p)
        direction /= np.linalg.norm(direction)
        b[i] = spread * rng.uniform() ** (1.0 / p) * direction
    task = QuadraticTask(Q, b, float(mu), float(beta), float(noise_var))
    return task, heterogeneity(task, spread)


def check_curvature(task: QuadraticTask, atol: float = 1e-9) -> tuple[float, float]:
    """Extreme eigenvalues over all ``Q_i`` (Jacobi); raises if any leaves ``[mu, beta]``."""
    lo, hi = np.inf, -np.inf
    for i, Qi in enumerate(task.Q):
        w, _ = jacobi_eigh(Qi)
        lo, hi = min(lo, w[-1]), max(hi, w[0])
        if w[-1] < task.mu - atol or w[0] > task.beta + atol:
            raise ValueError(f"client {i} spectrum [{w[-1]}, {w[0]}] leaves [{task.mu}, {task.beta}]")
    return float(lo), float(hi)


def client_noise(task, seed: int, round: int, client: int, steps: int) -> np.ndarray:
    """``(steps, p)`` gradient-noise block for one client in one round."""
    if task.noise_var == 0.0:
        return np.zeros((steps, task.p))
    z = stream(seed, Domain.NOISE, round, client).standard_normal((steps, task.p))
    return z * np.sqrt(task.noise_var / task.p)


def noise_block(task, seed: int, round: int, steps: int) -> np.ndarray:
    """``(n, steps, p)`` noise for every client; row ``i`` equals :func:`client_noise` for ``i``."""
    if task.noise_var == 0.0:
        return np.zeros((task.n, steps, task.p))
    return np.stack([client_noise(task, seed, round, i, steps) for i in range(task.n)])


def stochastic_gradient(task, client_i: int, x: np.ndarray, batch_seed: int) -> np.ndarray:
    """Exact local gradient plus zero-mean isotropic noise with ``E|z|^2 = noise_var``."""
    g = task.grad(client_i, np.asarray(x, dtype=float))
    if task.noise_var == 0.0:
        return g
    z = stream(batch_seed, Domain.NOISE, client_i).standard_normal(task.p)
    return g + z * np.sqrt(task.noise_var / task.p)


@dataclass(frozen=True)
class DiversityReport:
    n_points: int
    min_slack: float
    max_slack: float
    violations: list[tuple[int, int, float]]  # (point index, client, slack)


def gradient_diversity_check(task, profile: HeterogeneityProfile, sample_points: Iterable[np.ndarray]) -> DiversityReport:
    """Check ``|grad f_i(x) - grad f(x)| <= delta + 2 beta |x - x*|`` for every client."""
    slacks = []
    violations = []
    for k, x in enumerate(sample_points):
        x = np.asarray(x, dtype=float)
        G = task.grads(np.broadcast_to(x, (task.n, task.p)))
        lhs = np.linalg.norm(G - G.mean(axis=0), axis=1)
        rhs = profile.delta + 2.0 * task.beta * np.linalg.norm(x - profile.x_star)
        s = rhs - lhs
        slacks.append(s)
        # tiny tolerance for rounding in the x = x*, delta = 0 corner
        for i in np.flatnonzero(s < -1e-12 * max(1.0, rhs)):
            violations.append((k, int(i), float(s[i])))
    allslack = np.concatenate(slacks) if slacks else np.zeros(0)
    return DiversityReport(
        n_points=len(slacks),
        min_slack=float(allslack.min()) if allslack.size else float("nan"),
        max_slack=float(allslack.max()) if allslack.size else float("nan"),
        violations=violations,
    )


# --- logistic task ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LogisticTask:
    """Binary L2-regularised logistic regression; client ``i`` holds ``(U[i], y[i])``."""

    U: np.ndarray  # (n, s, p) features
    y: np.ndarray  # (n, s) labels in {-1, +1}
    reg: float
    mu: float
    beta: float
    noise_var: float = 0.0
    x_star_cache: np.ndarray | None = None
    local_min_cache: np.ndarray | None = None  # (n, p)

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def p(self) -> int:
        return self.U.shape[2]

    def _margins(self, X: np.ndarray) -> np.ndarray:
        return self.y * np.einsum("isp,ip->is", self.U, X)

    def grads(self, X: np.ndarray) -> np.ndarray:
        z = self._margins(X)
        w = -self.y * _sigmoid(-z)
        return np.einsum("is,isp->ip", w, self.U) / self.U.shape[1] + self.reg * X

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        X = np.zeros((self.n, self.p))
        X[i] = x
        return self.grads(X)[i]

    def local_losses(self, X: np.ndarray) -> np.ndarray:
        z = self._margins(X)
        return np.logaddexp(0.0, -z).mean(axis=1) + 0.5 * self.reg * np.sum(X * X, axis=1)

    def loss(self, x: np.ndarray) -> float:
        return float(self.local_losses(np.broadcast_to(x, (self.n, self.p))).mean())

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        return self.grads(np.broadcast_to(x, (self.n, self.p))).mean(axis=0)

    def _hessians(self, X: np.ndarray) -> np.ndarray:
        z = self._margins(X)
        s = _sigmoid(z) * _sigmoid(-z)
        H = np.einsum("is,isp,isq->ipq", s, self.U, self.U) / self.U.shape[1]
        return H + self.reg * np.eye(self.p)

    def local_minimizers(self) -> np.ndarray:
        return self.local_min_cache

    def local_minima(self) -> np.ndarray:
        return self.local_losses(self.local_min_cache)

    def optimum(self) -> np.ndarray:
        return self.x_star_cache


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _newton(grad_fn, hess_fn, x0: np.ndarray, tol: float = 1e-13, max_iter: int = 100) -> np.ndarray:
    x = x0.copy()
    for _ in range(max_iter):
        g = grad_fn(x)
        if np.max(np.abs(g)) <= tol:
            return x
        x = x - np.linalg.solve(hess_fn(x), g)
    if np.max(np.abs(grad_fn(x))) > 1e-10:
        raise ArithmeticError("Newton solve for the logistic optimum did not converge")
    return x


def build_logistic_suite(
    n: int,
    p: int,
    samples_per_client: int,
    reg: float,
    seed: int,
    n_classes: int = 10,
    noise_var: float = 0.0,
) -> tuple[LogisticTask, HeterogeneityProfile]:
    """Label-skewed logistic clients.

    Samples from ``n_classes`` Gaussian blobs are sorted by class, cut into
    ``2n`` equal chunks and each client receives two chunks, so most clients
    see only two classes. The binary label is the class parity.
    """
    if reg <= 0:
        raise ValueError("reg must be positive for strong convexity")
    rng = stream(seed, Domain.SUITE, 0)
    total = n * samples_per_client
    centers = rng.standard_normal((n_classes, p)) * 2.0
    cls = np.sort(rng.integers(0, n_classes, size=total))
    feats = centers[cls] + rng.standard_normal((total, p))
    feats /= np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1.0)
    chunk = samples_per_client // 2
    order = rng.permutation(2 * n)
    U = np.empty((n, 2 * chunk, p))
    y = np.empty((n, 2 * chunk))
    for i in range(n):
        parts = [slice(c * chunk, (c + 1) * chunk) for c in order[2 * i : 2 * i + 2]]
        U[i] = np.concatenate([feats[s] for s in parts])
        y[i] = np.concatenate([np.where(cls[s] % 2 == 0, 1.0, -1.0) for s in parts])
    # |u| <= 1 so each sample's logistic Hessian is at most 1/4
    smooth = max(float(np.linalg.eigvalsh(U[i].T @ U[i]).max()) / (4 * U.shape[1]) for i in range(n))
    task = LogisticTask(U, y, reg, mu=reg, beta=reg + smooth, noise_var=noise_var)

    def g(x):
        return task.full_grad(x)

    def h(x):
        return task._hessians(np.broadcast_to(x, (n, p))).mean(axis=0)

    x_star = _newton(g, h, np.zeros(p))
    local = np.empty((n, p))
    for i in range(n):
        def gi(x, i=i):
            return task.grad(i, x)

        def hi(x, i=i):
            X = np.zeros((n, p))
            X[i] = x
            return task._hessians(X)[i]

        local[i] = _newton(gi, hi, x_star)
    task = LogisticTask(U, y, reg, task.mu, task.beta, noise_var, x_star, local)
    return task, heterogeneity(task)


# --- serialisation ---------------------------------------------------------

_MAGIC = "connaware-quadratic-suite v1"


def save_suite(task: QuadraticTask, fh: IO[str]) -> None:
    """Plain-text dump: header, scalars, then ``Q_i`` rows and ``b_i`` for each client."""
    fh.write(f"{_MAGIC}\n")
    fh.write(f"n {task.n}\np {task.p}\nmu {task.mu!r}\nbeta {task.beta!r}\nnoise_var {task.noise_var!r}\n")
    for i in range(task.n):
        fh.write(f"client {i}\n")
        for row in task.Q[i]:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write(" ".join(repr(float(v)) for v in task.b[i]) + "\n")


def load_suite(lines: Sequence[str] | IO[str]) -> QuadraticTask:
    it = (ln.rstrip("\n") for ln in lines)
    if next(it, None) != _MAGIC:
        raise ValueError("not a quadratic suite file")
    head = {}
    for key in ("n", "p", "mu", "beta", "noise_var"):
        k, v = next(it).split()
        if k != key:
            raise ValueError(f"expected {key!r}, got {k!r}")
        head[key] = v
    n, p = int(head["n"]), int(head["p"])
    Q = np.empty((n, p, p))
    b = np.empty((n, p))
    for i in range(n):
        if next(it) != f"client {i}":
            raise ValueError(f"expected block for client {i}")
        for r in range(p):
            Q[i, r] = [float(v) for v in next(it).split()]
        b[i] = [float(v) for v in next(it).split()]
    return QuadraticTask(Q, b, float(head["mu"]), float(head["beta"]), float(head["noise_var"]))
