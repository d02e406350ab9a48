"""Connectivity-aware semi-decentralized training loop and its baselines.

Each round: every client runs ``T`` local SGD steps from the global model,
clients mix their cumulative updates over their cluster's digraph with
equal-neighbor weights, the server samples clients stratified by cluster and
averages their mixed updates. The sample size for the next round is the
smallest one whose degree-based connectivity bound stays under ``phi_max``.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import spectral
from .objectives import DivergenceError, client_noise, noise_block
from .rng import Domain, stream
from .spectral import BoundChoice
from .topology import (
    ClusterDigraph,
    ConfigError,
    Network,
    TopologyConfig,
    assemble_network,
    delete_edges,
    generate_regular_cluster,
)


class Algorithm(enum.Enum):
    CONN_AWARE = "connaware"
    FEDAVG = "fedavg"
    COLREL = "colrel"


class SamplingMode(enum.Enum):
    CEIL = "ceil"
    APPORTIONED = "apportioned"


@dataclass(frozen=True)
class LRSchedule:
    kind: str = "theorem"  # theorem | geometric | constant
    a: float = 0.02
    r: float = 0.1

    def __post_init__(self):
        if self.kind not in ("theorem", "geometric", "constant"):
            raise ConfigError(f"unknown lr schedule {self.kind!r}")


@dataclass(frozen=True)
class FederationConfig:
    T_local: int = 5
    t_max: int = 30
    phi_max: float = 0.06
    m0: int | None = None  # None: pick m(0) with the sampling rule on round-0 degrees
    lr_schedule: LRSchedule = LRSchedule()
    bound_choice: BoundChoice = BoundChoice()
    algorithm: Algorithm = Algorithm.CONN_AWARE
    fixed_m: int | None = None
    energy_ratio: float = 0.1
    sampling_mode: SamplingMode = SamplingMode.CEIL
    seed: int = 0
    track_exact: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.T_local < 1:
            raise ConfigError("T_local must be >= 1")
        if self.t_max < 0:
            raise ConfigError("t_max must be >= 0")
        if self.phi_max < 0:
            raise ConfigError("phi_max must be >= 0")
        if self.lr_schedule.kind == "theorem" and math.isinf(self.phi_max):
            raise ConfigError("the theorem schedule needs a finite phi_max")
        if self.energy_ratio < 0:
            raise ConfigError("energy_ratio must be >= 0")
        if self.algorithm is not Algorithm.CONN_AWARE and self.fixed_m is None:
            raise ConfigError(f"{self.algorithm.value} needs fixed_m")


@dataclass
class RoundRecord:
    t: int
    m_requested: int
    m_effective: int
    sampled: tuple[int, ...]
    global_model: np.ndarray
    bar_model: np.ndarray
    gap: float
    d2d_transmissions: int
    d2s_transmissions: int
    phi_exact: float
    psi_bound: float
    eta: float = float("nan")
    bound_sources: tuple[str, ...] = ()
    deletion_shortfall: int = 0
    strongly_connected: int = 0
    downlink_transmissions: int = 0
    n: int = field(default=0, repr=False)

    @property
    def tau(self) -> np.ndarray:
        v = np.zeros(self.n, dtype=np.int64)
        v[list(self.sampled)] = 1
        return v


# --- schedule ---------------------------------------------------------------


def theorem_t1(mu: float, beta: float, T_local: int, phi_max: float) -> int:
    return math.floor(4.0 * (1.0 - 1.0 / T_local) + (16.0 * T_local + 8.0 * phi_max) * (beta / mu) ** 2 + 1.0)


def theorem_lr_schedule(mu: float, beta: float, T_local: int, phi_max: float, t: int) -> float:
    """``4 / (T mu (t + t1))``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    return 4.0 / (T_local * mu * (t + theorem_t1(mu, beta, T_local, phi_max)))


def learning_rate(cfg: FederationConfig, mu: float, beta: float, t: int) -> float:
    s = cfg.lr_schedule
    if s.kind == "theorem":
        return theorem_lr_schedule(mu, beta, cfg.T_local, cfg.phi_max, t)
    if s.kind == "geometric":
        return s.a * s.r**t
    return s.a


# --- per-round building blocks ----------------------------------------------


def local_sgd(task, client_i: int, x_global: np.ndarray, T_local: int, eta_t: float, seed: int, round: int) -> np.ndarray:
    """Cumulative update ``x_i^(t,T) - x^(t)`` of one client."""
    if eta_t <= 0:
        raise ValueError("eta_t must be positive")
    noise = client_noise(task, seed, round, client_i, T_local)
    x = np.array(x_global, dtype=float)
    for k in range(T_local):
        x = x - eta_t * (task.grad(client_i, x) + noise[k])
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"client {client_i} diverged at local step {k}")
    return x - x_global


def local_updates(task, x_global: np.ndarray, T_local: int, eta_t: float, seed: int, round: int) -> np.ndarray:
    """All clients' cumulative updates at once; row ``i`` matches :func:`local_sgd`."""
    if eta_t <= 0:
        raise ValueError("eta_t must be positive")
    noise = noise_block(task, seed, round, T_local)
    X = np.tile(np.asarray(x_global, dtype=float), (task.n, 1))
    for k in range(T_local):
        X -= eta_t * (task.grads(X) + noise[:, k])
        if not np.all(np.isfinite(X)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
            raise DivergenceError(f"client {bad} diverged at local step {k}")
    return X - x_global


def intra_cluster_aggregate(cluster: ClusterDigraph, updates: np.ndarray) -> np.ndarray:
    """``Delta_i = sum_{j -> i} u_j / d_j^+``, edge by edge.

    ``updates`` rows follow ``cluster.vertices``; so do the returned rows.
    """
    updates = np.asarray(updates, dtype=float)
    if updates.shape[0] != cluster.n:
        raise ValueError(f"expected {cluster.n} update rows, got {updates.shape[0]}")
    cluster.validate()
    e = cluster.local_edges
    src, dst = e[:, 0], e[:, 1]
    out = np.zeros_like(updates)
    np.add.at(out, dst, updates[src] / cluster.out_degrees[src][:, None])
    return out


def aggregate_network(net: Network, updates: np.ndarray) -> np.ndarray:
    deltas = np.empty_like(updates)
    for g in net.clusters:
        idx = list(g.vertices)
        deltas[idx] = intra_cluster_aggregate(g, updates[idx])
    return deltas


def cluster_quotas(m: int, cluster_sizes: Sequence[int], mode: SamplingMode = SamplingMode.CEIL) -> list[int]:
    n = sum(cluster_sizes)
    if not 1 <= m <= n:
        raise ValueError(f"sample size {m} outside [1, {n}]")
    if mode is SamplingMode.CEIL:
        quotas = [-(-m * s // n) for s in cluster_sizes]
    else:
        floors = [m * s // n for s in cluster_sizes]
        rema = [m * s % n for s in cluster_sizes]
        short = m - sum(floors)
        # largest remainder, earlier cluster wins ties
        for ell in sorted(range(len(cluster_sizes)), key=lambda k: (-rema[k], k))[:short]:
            floors[ell] += 1
        quotas = floors
    assert all(q <= s for q, s in zip(quotas, cluster_sizes))
    return quotas


def stratified_sample(
    m: int,
    cluster_sizes: Sequence[int],
    rng: np.random.Generator,
    mode: SamplingMode = SamplingMode.CEIL,
) -> tuple[tuple[int, ...], list[int]]:
    """Sampled global client ids (sorted) and per-cluster counts."""
    quotas = cluster_quotas(m, cluster_sizes, mode)
    chosen = []
    off = 0
    for size, q in zip(cluster_sizes, quotas):
        chosen.extend(off + int(v) for v in rng.choice(size, size=q, replace=False))
        off += size
    return tuple(sorted(chosen)), quotas


def uniform_sample(m: int, n: int, rng: np.random.Generator) -> tuple[int, ...]:
    if not 1 <= m <= n:
        raise ValueError(f"sample size {m} outside [1, {n}]")
    return tuple(sorted(int(v) for v in rng.choice(n, size=m, replace=False)))


def global_aggregate(x_t: np.ndarray, deltas: np.ndarray, sampled: Sequence[int], m_effective: int) -> np.ndarray:
    if len(sampled) == 0 or m_effective <= 0:
        raise ValueError("global aggregation needs at least one sampled client")
    return x_t + deltas[list(sampled)].sum(axis=0) / m_effective


# --- driver -----------------------------------------------------------------


def _network(topo: TopologyConfig, t: int, threads: int) -> Network:
    if threads <= 1:
        return assemble_network(topo, t)
    lo, hi = topo.k_range

    def build(ell: int) -> ClusterDigraph:
        k = int(stream(topo.seed, Domain.TOPOLOGY, t, ell, 0).integers(lo, hi + 1))
        g = generate_regular_cluster(topo, ell, t, k)
        return delete_edges(g, topo.p_fail, stream(topo.seed, Domain.TOPOLOGY, t, ell, 2), topo.balanced_mode)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return Network(t, tuple(pool.map(build, range(topo.c))))


def simulate(
    cfg: FederationConfig,
    topo: TopologyConfig | None,
    task,
    x0: np.ndarray | None = None,
    x_star: np.ndarray | None = None,
) -> list[RoundRecord]:
    """Run ``cfg.t_max`` rounds of ``cfg.algorithm`` and return one record per round.

    ``topo`` may be ``None`` only for FedAvg, which never touches the D2D graphs.
    """
    use_d2d = cfg.algorithm is not Algorithm.FEDAVG
    if topo is None and use_d2d:
        raise ConfigError(f"{cfg.algorithm.value} needs a topology")
    n = task.n if topo is None else topo.n
    if task.n != n:
        raise ConfigError(f"task has {task.n} clients but topology has {n}")
    if cfg.fixed_m is not None and not 1 <= cfg.fixed_m <= n:
        raise ConfigError(f"fixed_m={cfg.fixed_m} outside [1, {n}]")
    if cfg.m0 is not None and not 1 <= cfg.m0 <= n:
        raise ConfigError(f"m0={cfg.m0} outside [1, {n}]")
    x = np.zeros(task.p) if x0 is None else np.array(x0, dtype=float)
    x_star = task.optimum() if x_star is None else x_star
    sizes = topo.cluster_sizes if topo is not None else (n,)
    records = []
    for t in range(cfg.t_max):
        eta = learning_rate(cfg, task.mu, task.beta, t)
        net = reports = None
        S_psi, sources = float("nan"), ()
        if use_d2d:
            net = _network(topo, t, cfg.threads)
            reports = spectral.analyze_clusters(net.clusters)
            S_psi, sources = spectral.bound_terms(reports, cfg.bound_choice)
        if cfg.algorithm is Algorithm.CONN_AWARE:
            if t == 0 and cfg.m0 is not None:
                m_t = cfg.m0
            else:
                m_t = spectral.min_sample_size(n, S_psi, cfg.phi_max)
        else:
            m_t = cfg.fixed_m

        U = local_updates(task, x, cfg.T_local, eta, cfg.seed, t)
        rng = stream(cfg.seed, Domain.SAMPLING, t)
        if use_d2d:
            deltas = aggregate_network(net, U)
            sampled, _ = stratified_sample(m_t, sizes, rng, cfg.sampling_mode)
            d2d = net.n_edges
            psi = spectral.sampling_factor(m_t, n) * S_psi
            phi = spectral.sampling_factor(m_t, n) * spectral.exact_sum(reports) if cfg.track_exact else float("nan")
        else:
            deltas = U
            sampled = uniform_sample(m_t, n, rng)
            d2d = 0
            psi = float("nan")
            # no mixing: every block is the identity, sigma1 = sigma2 = 1
            phi = spectral.sampling_factor(m_t, n)
        m_eff = len(sampled)
        x_new = global_aggregate(x, deltas, sampled, m_eff)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(f"global model diverged in round {t}")
        bar = x + U.mean(axis=0)
        records.append(
            RoundRecord(
                t=t,
                m_requested=m_t,
                m_effective=m_eff,
                sampled=sampled,
                global_model=x_new,
                bar_model=bar,
                gap=float(np.sum((x_new - x_star) ** 2)),
                d2d_transmissions=d2d,
                d2s_transmissions=m_eff,
                phi_exact=float(phi),
                psi_bound=float(psi),
                eta=eta,
                bound_sources=sources,
                deletion_shortfall=net.shortfall if net else 0,
                strongly_connected=sum(g.is_strongly_connected() for g in net.clusters) if net else 0,
                downlink_transmissions=n,
                n=n,
            )
        )
        x = x_new
    return records


def run_connectivity_aware(cfg: FederationConfig, topo: TopologyConfig, task, **kw) -> list[RoundRecord]:
    return simulate(replace(cfg, algorithm=Algorithm.CONN_AWARE), topo, task, **kw)


def run_fedavg(cfg: FederationConfig, task, topo: TopologyConfig | None = None, **kw) -> list[RoundRecord]:
    return simulate(replace(cfg, algorithm=Algorithm.FEDAVG), topo, task, **kw)


def run_colrel_like(cfg: FederationConfig, topo: TopologyConfig, task, **kw) -> list[RoundRecord]:
    return simulate(replace(cfg, algorithm=Algorithm.COLREL), topo, task, **kw)


FEDAVG_PRESETS = (57, 52, 26, 15)
T_MAX_PRESETS = (15, 30)


def initial_sample_size(cfg: FederationConfig, topo: TopologyConfig) -> int:
    """The rule's choice of ``m(0)`` from round-0 degree summaries."""
    reports = spectral.analyze_clusters(assemble_network(topo, 0).clusters)
    return spectral.select_sample_size(reports, cfg.phi_max, cfg.bound_choice)
