"""Experiment configuration read from a TOML document.

Layout::

    seed = 0

    [topology]      n, c, cluster_sizes, k_min, k_max, p_fail, balanced_mode
    [federation]    T_local, t_max, phi_max, m0, lr_schedule, lr_a, lr_r, bound,
                    tighten_by_one, algorithm, fixed_m, energy_ratio, sampling_mode,
                    track_exact
    [objective]     kind, dim, mu, beta, spread, rho, init, init_radius,
                    samples_per_client, reg
    [output]        dir, rounds
    [compare]       target, seeds, fedavg_m, colrel_m
    [sweep]         phi_max, seeds

Every key is optional. Unknown sections or keys are rejected with the line
they appear on.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .federation import Algorithm, FederationConfig, LRSchedule, SamplingMode
from .objectives import build_logistic_suite, build_quadratic_suite
from .rng import Domain, stream
from .spectral import Bound, BoundChoice
from .topology import ConfigError, TopologyConfig


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = "quadratic"  # quadratic | logistic
    dim: int = 10
    mu: float = 1.0
    beta: float = 4.0
    spread: float = 10.0
    rho: float = 0.5
    init: str = "zero"  # zero | offset
    init_radius: float = 1.0
    samples_per_client: int = 40
    reg: float = 0.1

    def __post_init__(self):
        if self.kind not in ("quadratic", "logistic"):
            raise ConfigError(f"unknown objective kind {self.kind!r}")
        if self.init not in ("zero", "offset"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if not 0 < self.mu <= self.beta:
            raise ConfigError("need 0 < mu <= beta")
        if self.spread < 0 or self.rho < 0 or self.init_radius < 0:
            raise ConfigError("spread, rho and init_radius must be non-negative")


@dataclass(frozen=True)
class OutputConfig:
    dir: str | None = None
    rounds: int = 1  # rounds of graphs written by `gen`


@dataclass(frozen=True)
class CompareConfig:
    target: float = 1e-3  # relative to the initial gap
    seeds: tuple[int, ...] = (0, 1, 2)
    fedavg_m: int = 57
    colrel_m: int = 57


@dataclass(frozen=True)
class SweepConfig:
    phi_max: tuple[float, ...] = (0.0, 0.06, 0.2, 1000.0)  # last entry stands in for no limit
    seeds: tuple[int, ...] = (0,)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(
            self,
            seed=seed,
            topology=replace(self.topology, seed=seed),
            federation=replace(self.federation, seed=seed),
        )

    def build_task(self):
        """The objective's task and ``(x0, x_star)`` for this seed."""
        o = self.objective
        n = self.topology.n
        if o.kind == "quadratic":
            task, prof = build_quadratic_suite(n, o.dim, o.mu, o.beta, o.spread, self.seed, noise_var=o.rho**2)
        else:
            task, prof = build_logistic_suite(n, o.dim, o.samples_per_client, o.reg, self.seed, noise_var=o.rho**2)
        x_star = prof.x_star
        if o.init == "zero":
            x0 = np.zeros(task.p)
        else:
            u = stream(self.seed, Domain.INIT).standard_normal(task.p)
            x0 = x_star + o.init_radius * u / np.linalg.norm(u)
        return task, prof, x0, x_star

    def as_dict(self) -> dict:
        d = asdict(self)
        fed = d["federation"]
        fed["algorithm"] = self.federation.algorithm.value
        fed["sampling_mode"] = self.federation.sampling_mode.value
        fed["bound_choice"] = {
            "bound": self.federation.bound_choice.bound.value,
            "tighten_by_one": self.federation.bound_choice.tighten_by_one,
        }
        return _json_safe(d)


def _json_safe(v: Any) -> Any:
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


# --- parsing ----------------------------------------------------------------

_SECTIONS = {
    "topology": {"n", "c", "cluster_sizes", "k_min", "k_max", "p_fail", "balanced_mode"},
    "federation": {
        "T_local", "t_max", "phi_max", "m0", "lr_schedule", "lr_a", "lr_r", "bound",
        "tighten_by_one", "algorithm", "fixed_m", "energy_ratio", "sampling_mode", "track_exact",
    },
    "objective": {f.name for f in fields(ObjectiveConfig)},
    "output": {f.name for f in fields(OutputConfig)},
    "compare": {f.name for f in fields(CompareConfig)},
    "sweep": {f.name for f in fields(SweepConfig)},
}  # fmt: skip
_TOP_LEVEL = {"seed"}

_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_\-]+)\s*\]\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


def _locate(text: str, section: str | None, key: str | None) -> int | None:
    """1-based line of ``key`` inside ``section`` (or of the section header)."""
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        m = _KEY.match(line)
        if m and key is not None and current == section and m.group(1) == key:
            return no
    return None


class ConfigFileError(ConfigError):
    def __init__(self, path: str, line: int | None, msg: str):
        where = f"{path}:{line}" if line else path
        super().__init__(f"{where}: {msg}")
        self.path, self.line = path, line


def _check_keys(doc: dict, text: str, path: str) -> None:
    for key, val in doc.items():
        if isinstance(val, dict):
            if key not in _SECTIONS:
                raise ConfigFileError(path, _locate(text, key, None), f"unknown section [{key}]")
            for sub in val:
                if sub not in _SECTIONS[key]:
                    raise ConfigFileError(path, _locate(text, key, sub), f"unknown key {sub!r} in [{key}]")
        elif key not in _TOP_LEVEL:
            raise ConfigFileError(path, _locate(text, None, key), f"unknown top-level key {key!r}")


def _typed(section: str, key: str, val: Any, kind: type, text: str, path: str):
    ok = isinstance(val, kind) and not (kind is not bool and isinstance(val, bool))
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val, ok = float(val), True
    if not ok:
        raise ConfigFileError(path, _locate(text, section, key), f"{key} must be {kind.__name__}, got {val!r}")
    return val


def parse_config(text: str, path: str = "<config>") -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigFileError(path, None, str(e)) from None
    _check_keys(doc, text, path)

    def get(section, key, kind, default):
        sec = doc.get(section, {}) if section else doc
        if key not in sec:
            return default
        return _typed(section, key, sec[key], kind, text, path)

    def anchored(section, builder):
        try:
            return builder()
        except ConfigError as e:
            if isinstance(e, ConfigFileError):
                raise
            raise ConfigFileError(path, _locate(text, section, None), str(e)) from None

    seed = get(None, "seed", int, 0)
    if seed < 0:
        raise ConfigFileError(path, _locate(text, None, "seed"), "seed must be non-negative")

    def topo():
        d = TopologyConfig()
        n = get("topology", "n", int, d.n)
        c = get("topology", "c", int, d.c)
        sizes = get("topology", "cluster_sizes", list, None)
        if sizes is None:
            if n % c:
                raise ConfigError(f"n={n} is not divisible by c={c}; give cluster_sizes")
            sizes = [n // c] * c
        if not all(isinstance(s, int) and not isinstance(s, bool) for s in sizes):
            raise ConfigError("cluster_sizes must be integers")
        return TopologyConfig(
            n=n,
            c=c,
            cluster_sizes=tuple(sizes),
            k_range=(get("topology", "k_min", int, d.k_range[0]), get("topology", "k_max", int, d.k_range[1])),
            p_fail=get("topology", "p_fail", float, d.p_fail),
            seed=seed,
            balanced_mode=get("topology", "balanced_mode", bool, d.balanced_mode),
        )

    def fed():
        d = FederationConfig()
        try:
            algorithm = Algorithm(get("federation", "algorithm", str, d.algorithm.value))
            mode = SamplingMode(get("federation", "sampling_mode", str, d.sampling_mode.value))
            bound = Bound(get("federation", "bound", str, d.bound_choice.bound.value))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return FederationConfig(
            T_local=get("federation", "T_local", int, d.T_local),
            t_max=get("federation", "t_max", int, d.t_max),
            phi_max=get("federation", "phi_max", float, d.phi_max),
            m0=get("federation", "m0", int, d.m0),
            lr_schedule=LRSchedule(
                get("federation", "lr_schedule", str, d.lr_schedule.kind),
                get("federation", "lr_a", float, d.lr_schedule.a),
                get("federation", "lr_r", float, d.lr_schedule.r),
            ),
            bound_choice=BoundChoice(bound, get("federation", "tighten_by_one", bool, d.bound_choice.tighten_by_one)),
            algorithm=algorithm,
            fixed_m=get("federation", "fixed_m", int, d.fixed_m),
            energy_ratio=get("federation", "energy_ratio", float, d.energy_ratio),
            sampling_mode=mode,
            seed=seed,
            track_exact=get("federation", "track_exact", bool, d.track_exact),
        )

    def obj():
        kinds = {f.name: f.type for f in fields(ObjectiveConfig)}
        kw = {}
        for k in doc.get("objective", {}):
            kw[k] = get("objective", k, {"int": int, "float": float, "str": str}[kinds[k]], None)
        return ObjectiveConfig(**kw)

    def out():
        return OutputConfig(
            dir=get("output", "dir", str, None),
            rounds=get("output", "rounds", int, 1),
        )

    def cmp():
        d = CompareConfig()
        seeds = get("compare", "seeds", list, list(d.seeds))
        return CompareConfig(
            target=get("compare", "target", float, d.target),
            seeds=tuple(int(s) for s in seeds),
            fedavg_m=get("compare", "fedavg_m", int, d.fedavg_m),
            colrel_m=get("compare", "colrel_m", int, d.colrel_m),
        )

    def swp():
        d = SweepConfig()
        grid = get("sweep", "phi_max", list, list(d.phi_max))
        if not grid or any(not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0 for v in grid):
            raise ConfigError("sweep.phi_max must be a non-empty list of non-negative numbers")
        return SweepConfig(tuple(float(v) for v in grid), tuple(int(s) for s in get("sweep", "seeds", list, [0])))

    cfg = ExperimentConfig(
        seed=seed,
        topology=anchored("topology", topo),
        federation=anchored("federation", fed),
        objective=anchored("objective", obj),
        output=anchored("output", out),
        compare=anchored("compare", cmp),
        sweep=anchored("sweep", swp),
    )
    n = cfg.topology.n
    for name, m in (("federation", cfg.federation.m0), ("federation", cfg.federation.fixed_m)):
        if m is not None and not 1 <= m <= n:
            raise ConfigFileError(path, _locate(text, name, None), f"sample size {m} outside [1, {n}]")
    for m in (cfg.compare.fedavg_m, cfg.compare.colrel_m):
        if not 1 <= m <= n:
            raise ConfigFileError(path, _locate(text, "compare", None), f"sample size {m} outside [1, {n}]")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigFileError(str(p), None, f"cannot read config: {e.strerror}") from None
    return parse_config(text, str(p))
