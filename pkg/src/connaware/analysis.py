"""Cost accounting, convergence diagnostics and bound-tightness studies."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from . import spectral
from .federation import (
    FederationConfig,
    RoundRecord,
    SamplingMode,
    aggregate_network,
    learning_rate,
    local_updates,
    cluster_quotas,
    theorem_t1,
)
from .rng import Domain, stream
from .topology import ConfigError, TopologyConfig, assemble_network, from_edges


# --- cost -------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    energy_ratio: float = 0.1  # one D2D transmission relative to one uplink
    d2s_unit_cost: float = 1.0
    count_downlink: bool = False

    def __post_init__(self):
        if self.energy_ratio < 0:
            raise ConfigError("energy_ratio must be >= 0")

    def round_cost(self, d2s: int, d2d: int, downlink: int = 0) -> float:
        c = self.d2s_unit_cost * (d2s + self.energy_ratio * d2d)
        if self.count_downlink:
            c += self.d2s_unit_cost * downlink
        return c


def cumulative_cost(records: Sequence[RoundRecord], cost_model: CostModel = CostModel()) -> np.ndarray:
    if not records:
        raise ValueError("no rounds to account for")
    per_round = [
        cost_model.round_cost(r.d2s_transmissions, r.d2d_transmissions, r.downlink_transmissions) for r in records
    ]
    return np.cumsum(per_round)


def cost_to_target(gaps: Sequence[float], costs: Sequence[float], target: float) -> tuple[int | None, float | None]:
    """First round whose gap is at or below ``target`` and the cumulative cost up to it."""
    hit = np.flatnonzero(np.asarray(gaps) <= target)
    if hit.size == 0:
        return None, None
    k = int(hit[0])
    return k, float(costs[k])


# --- theorem monitor --------------------------------------------------------


@dataclass(frozen=True)
class TheoremBoundInputs:
    mu: float
    beta: float
    rho: float
    delta: float
    gamma: float
    T_local: int
    phi_max: float
    t1: int
    initial_gap: float
    n: int

    def __post_init__(self):
        for name in ("mu", "beta", "rho", "delta", "gamma", "phi_max", "initial_gap"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.mu <= 0 or self.mu > self.beta:
            raise ValueError("need 0 < mu <= beta")
        if self.T_local < 1 or self.n < 1 or self.t1 < 1:
            raise ValueError("T_local, n and t1 must be positive")

    @classmethod
    def for_run(cls, mu, beta, rho, delta, gamma, T_local, phi_max, initial_gap, n) -> "TheoremBoundInputs":
        return cls(mu, beta, rho, delta, gamma, T_local, phi_max, theorem_t1(mu, beta, T_local, phi_max), initial_gap, n)


def theorem_bound_terms(inputs: TheoremBoundInputs, t: float) -> tuple[float, float, float]:
    if t < 0:
        raise ValueError("t must be >= 0")
    I = inputs
    T, t1 = I.T_local, I.t1
    r2 = (I.rho / I.mu) ** 2
    d2 = (I.delta / I.mu) ** 2
    first = (t1 / (t + t1)) ** 2 * I.initial_gap
    second = 16.0 * (r2 / (I.n * T) + 6.0 * I.beta * I.gamma / (T * I.mu**2)) / (t + t1)
    third = (32.0 * T + 16.0 * I.phi_max) * (
        (2.0 / T) * r2 + (4.0 * math.e / T) * (r2 + 2.0 * d2) + 6.0 * d2
    ) / (t + t1)
    return first, second, third


def theorem_bound(inputs: TheoremBoundInputs, t: float) -> float:
    return math.fsum(theorem_bound_terms(inputs, t))


@dataclass
class MonitorReport:
    bound: np.ndarray
    mean_gap: np.ndarray
    violations: list[int]

    @property
    def n_violations(self) -> int:
        return len(self.violations)

    def lines(self) -> list[str]:
        out = [f"theorem monitor: {self.n_violations} of {len(self.bound)} rounds above the bound"]
        for t in self.violations[:10]:
            out.append(f"  t={t}: mean gap {self.mean_gap[t]:.4g} > bound {self.bound[t]:.4g}")
        return out


def theorem_monitor(mean_gap: Sequence[float], inputs: TheoremBoundInputs) -> MonitorReport:
    """Compare an empirical mean gap with the bound round by round.

    ``mean_gap[t]`` is the gap after round ``t`` (model ``x^(t+1)``). This is
    a diagnostic; violations are reported, not raised.
    """
    g = np.asarray(mean_gap, dtype=float)
    b = np.array([theorem_bound(inputs, t + 1) for t in range(g.size)])
    return MonitorReport(b, g, [int(t) for t in np.flatnonzero(g > b)])


# --- rate fit ---------------------------------------------------------------


@dataclass
class TrendReport:
    C_hat: float
    sup_scaled: float
    median_scaled: float
    tail_nonincreasing: bool
    loglog_slope: float
    converging: bool

    @property
    def sup_over_median(self) -> float:
        return self.sup_scaled / self.median_scaled if self.median_scaled > 0 else math.inf


def rate_fit(gap_series: Sequence[float], t1: float = 1.0) -> tuple[float, TrendReport]:
    """Fit ``gap(t) ~ C / (t + t1)`` over the tail half of the series."""
    g = np.asarray(gap_series, dtype=float)
    if g.size < 10:
        raise ValueError("need at least 10 rounds")
    t = np.arange(g.size, dtype=float)
    tail = slice(g.size // 2, None)
    w = 1.0 / (t[tail] + t1)
    C_hat = float(w @ g[tail] / (w @ w))
    scaled = (t[tail] + t1) * g[tail]
    with np.errstate(divide="ignore"):
        lg = np.log(g[tail])
    finite = np.isfinite(lg)
    slope = float(np.polyfit(np.log(t[tail] + t1)[finite], lg[finite], 1)[0]) if finite.sum() >= 2 else 0.0
    rep = TrendReport(
        C_hat=C_hat,
        sup_scaled=float(np.max(scaled)),
        median_scaled=float(np.median(scaled)),
        tail_nonincreasing=nonincreasing_from(g, g.size // 2),
        loglog_slope=slope,
        converging=bool(slope < -0.5),
    )
    return C_hat, rep


def nonincreasing_from(series: Sequence[float], start: int, rtol: float = 0.0) -> bool:
    s = np.asarray(series, dtype=float)[max(int(start), 0) :]
    return bool(np.all(np.diff(s) <= rtol * np.abs(s[:-1])))


# --- bound tightness --------------------------------------------------------

TIGHTNESS_FIELDS = (
    "round", "cluster", "n_l", "alpha", "eps", "varphi", "balanced",
    "sigma1_sq", "sigma2_sq", "psi_prop1", "psi_prop2", "prop1_status", "prop2_status",
    "slack_prop1", "slack_prop2", "slack_prop1_s1", "slack_prop1_s2",
)  # fmt: skip

BUCKET_WIDTH = 0.05


def _tightness_row(rnd: int, cluster: int, rep: spectral.SpectralReport) -> dict:
    ds = rep.summary
    s1, s2 = rep.sigma1**2, rep.sigma2**2
    p1, p2 = rep.psi_prop1, rep.psi_prop2
    c1, c2 = spectral.prop1_components(ds)
    nan = float("nan")
    return {
        "round": rnd,
        "cluster": cluster,
        "n_l": ds.n_l,
        "alpha": ds.alpha,
        "eps": ds.eps,
        "varphi": ds.varphi,
        "balanced": int(ds.balanced),
        "sigma1_sq": s1,
        "sigma2_sq": s2,
        "psi_prop1": p1.value,
        "psi_prop2": p2.value,
        "prop1_status": p1.status,
        "prop2_status": p2.status,
        "slack_prop1": p1.value - (s1 + s2) if p1.applicable else nan,
        "slack_prop2": p2.value - (s1 + s2) if p2.applicable else nan,
        "slack_prop1_s1": c1 - s1 if p1.applicable else nan,
        "slack_prop1_s2": c2 - s2 if p1.applicable else nan,
    }


def bound_tightness_study(topology_cfg: TopologyConfig, n_graphs: int, include_clique: bool = False) -> list[dict]:
    """One row per generated cluster, drawn from consecutive rounds of the topology."""
    if n_graphs < 1:
        raise ValueError("n_graphs must be >= 1")
    rows = []
    if include_clique:
        size = topology_cfg.cluster_sizes[0]
        clique = from_edges(size, [(i, j) for i in range(size) for j in range(size) if i != j], cluster_id=-1)
        rows.append(_tightness_row(-1, -1, spectral.analyze_cluster(clique)))
    rnd = 0
    while len(rows) < n_graphs:
        net = assemble_network(topology_cfg, rnd)
        for g, rep in zip(net.clusters, spectral.analyze_clusters(net.clusters)):
            rows.append(_tightness_row(rnd, g.cluster_id, rep))
        rnd += 1
    return rows[:n_graphs]


def bucket_summary(rows: Iterable[dict], width: float = BUCKET_WIDTH) -> list[dict]:
    """Mean and max slack per alpha bucket ``[k*width, (k+1)*width)``."""
    groups = defaultdict(list)
    for r in rows:
        groups[math.floor(r["alpha"] / width + 1e-9)].append(r)
    out = []
    for k in sorted(groups):
        rs = groups[k]
        entry = {"alpha_lo": round(k * width, 10), "alpha_hi": round((k + 1) * width, 10), "count": len(rs)}
        for key in ("slack_prop1", "slack_prop2"):
            v = np.array([r[key] for r in rs], dtype=float)
            v = v[np.isfinite(v)]
            entry[f"{key}_n"] = int(v.size)
            entry[f"{key}_mean"] = float(v.mean()) if v.size else float("nan")
            entry[f"{key}_max"] = float(v.max()) if v.size else float("nan")
            entry[f"{key}_min"] = float(v.min()) if v.size else float("nan")
        out.append(entry)
    return out


def write_csv(rows: Sequence[dict], fh: TextIO, fields: Sequence[str] | None = None) -> None:
    fields = list(fields or (rows[0].keys() if rows else ()))
    w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# --- decomposition ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FrozenRound:
    """Everything about one round except which clients the server samples."""

    x_t: np.ndarray
    deltas: np.ndarray  # mixed cumulative updates, one row per client
    bar_model: np.ndarray
    x_star: np.ndarray
    cluster_sizes: tuple[int, ...]
    m: int
    mode: SamplingMode = SamplingMode.CEIL


def freeze_round(
    cfg: FederationConfig, topo: TopologyConfig, task, m: int, t: int = 0, x_t: np.ndarray | None = None
) -> FrozenRound:
    x = np.zeros(task.p) if x_t is None else np.asarray(x_t, dtype=float)
    eta = learning_rate(cfg, task.mu, task.beta, t)
    U = local_updates(task, x, cfg.T_local, eta, cfg.seed, t)
    deltas = aggregate_network(assemble_network(topo, t), U)
    return FrozenRound(x, deltas, x + U.mean(axis=0), task.optimum(), topo.cluster_sizes, m, cfg.sampling_mode)


@dataclass
class DecompositionReport:
    lhs: float  # E ||x^(t+1) - x*||^2
    variance_term: float  # E ||x^(t+1) - xbar||^2
    bias_term: float  # ||xbar - x*||^2
    cross: float  # 2 E[(x^(t+1) - xbar)^T (xbar - x*)]
    cross_se: float
    mean_offset_norm: float  # ||E x^(t+1) - xbar||
    n_draws: int

    @property
    def roundoff(self) -> float:
        return 64.0 * np.finfo(float).eps * max(self.lhs, 1.0)

    @property
    def cross_z(self) -> float:
        """Cross term in standard errors; zero when it is within round-off."""
        if abs(self.cross) <= self.roundoff:
            return 0.0
        return self.cross / self.cross_se if self.cross_se > 0 else math.inf

    @property
    def holds(self) -> bool:
        return abs(self.cross_z) <= 3.0


def sample_models(frozen: FrozenRound, n_draws: int, seed: int = 0) -> np.ndarray:
    """``n_draws`` next global models under fresh stratified samples."""
    quotas = cluster_quotas(frozen.m, frozen.cluster_sizes, frozen.mode)
    m_eff = sum(quotas)
    rng = stream(seed, Domain.MONTE_CARLO, frozen.m)
    total = np.zeros((n_draws, frozen.deltas.shape[1]))
    off = 0
    for size, q in zip(frozen.cluster_sizes, quotas):
        if q:
            pick = np.argsort(rng.random((n_draws, size)), axis=1)[:, :q]
            total += frozen.deltas[off + pick].sum(axis=1)
        off += size
    return frozen.x_t + total / m_eff


def decomposition_check(frozen: FrozenRound, n_draws: int = 10_000, seed: int = 0) -> DecompositionReport:
    if n_draws < 2:
        raise ValueError("need at least 2 draws")
    X = sample_models(frozen, n_draws, seed)
    dev = X - frozen.bar_model
    bias_vec = frozen.bar_model - frozen.x_star
    cross = 2.0 * dev @ bias_vec
    return DecompositionReport(
        lhs=float(np.mean(np.sum((X - frozen.x_star) ** 2, axis=1))),
        variance_term=float(np.mean(np.sum(dev**2, axis=1))),
        bias_term=float(bias_vec @ bias_vec),
        cross=float(cross.mean()),
        cross_se=float(cross.std(ddof=1) / math.sqrt(n_draws)),
        mean_offset_norm=float(np.linalg.norm(dev.mean(axis=0))),
        n_draws=n_draws,
    )
