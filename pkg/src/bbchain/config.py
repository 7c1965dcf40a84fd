"""Experiment configuration: YAML file -> nested dataclasses.

Unknown keys and out-of-range values are hard errors that name the offending
line, so a typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + msg)


@dataclass
class TopologyConfig:
    n: int = 20
    target_degree: int = 4
    max_degree: int = 8
    f: float = 0.5
    p_bad: float = 0.0
    bad_mode: str = "fixed"


@dataclass
class ProtocolConfig:
    m: int = 4
    s: int = 20
    d_slack: int = 0  # protocol d = honest diameter + slack
    payload_bytes: int = 256


@dataclass
class ChainSection:
    mode: str = "chain"  # "chain" or "invocation"
    slots_in_flight: int = 4  # gamma; the slot period is ceil((2dm+s) / gamma) rounds
    rho: int = 0  # 0 picks the shortest feasible epoch
    tau: int = 2
    epochs: int = 2
    honest_pow_mean: float = 2.0
    adversary_multiplier: float = 1.0
    adversary_pow: str = "distinct"
    zero_pow_epochs: list[int] = field(default_factory=list)


@dataclass
class AnalysisConfig:
    f: float = 0.7
    lam: int = 1000
    tau: int = 91
    eps_log2: float = -30.0
    m: int = 0  # 0 means use min_committee
    w: int = 40
    d: int = 5
    s: int = 0  # 0 means 2dm
    l: int = 16_000_000
    delta: float = 12.0
    gamma: int = 217
    bandwidth_bps: float = 20e6
    budget_factor: float = 0.9
    n: int = 10_000

    @property
    def eps(self) -> float:
        return 2.0 ** self.eps_log2


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    strategy: str = "honest-compliant"
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    chain: ChainSection = field(default_factory=ChainSection)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _build(cls, node: yaml.Node, source: str):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"expected a mapping for {cls.__name__}", node.start_mark.line + 1, source)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for knode, vnode in node.value:
        key = knode.value
        line = knode.start_mark.line + 1
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} (allowed: {', '.join(fields)})", line, source)
        default = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING \
            else fields[key].default
        if dataclasses.is_dataclass(default):
            values[key] = _build(type(default), vnode, source)
            continue
        raw = yaml.safe_load(yaml.serialize(vnode))
        values[key] = _coerce(key, raw, default, line, source)
    obj = cls(**values)
    obj.__dict__["_lines"] = {k.value: k.start_mark.line + 1 for k, _ in node.value}
    return obj


def _coerce(key, raw, default, line, source):
    if isinstance(default, bool):
        ok = isinstance(raw, bool)
    elif isinstance(default, int):
        ok = isinstance(raw, int) and not isinstance(raw, bool)
    elif isinstance(default, float):
        ok = isinstance(raw, (int, float)) and not isinstance(raw, bool)
        raw = float(raw) if ok else raw
    elif isinstance(default, list):
        ok = isinstance(raw, list) and all(isinstance(x, int) for x in raw)
    else:
        ok = isinstance(raw, str)
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {raw!r}", line, source)
    return raw


def _line(obj, key):
    return getattr(obj, "_lines", {}).get(key)


def validate(cfg: ExperimentConfig, source: str = "<config>") -> None:
    def need(cond, section, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}", _line(section, key), source)

    from .adversary import adversary_catalog

    t, p, c, a = cfg.topology, cfg.protocol, cfg.chain, cfg.analysis
    need(cfg.strategy in adversary_catalog(), cfg, "strategy", f"unknown strategy; known: {sorted(adversary_catalog())}")
    need(t.n >= 2, t, "n", "need at least 2 nodes")
    need(0 <= t.f <= 0.99, t, "f", "must lie in [0, 0.99]")
    need(0 < t.target_degree < t.max_degree < t.n, t, "max_degree", "need 0 < target_degree < max_degree < n")
    need(0 <= t.p_bad < 1, t, "p_bad", "must lie in [0, 1)")
    need(t.bad_mode in ("fixed", "per-round"), t, "bad_mode", "must be 'fixed' or 'per-round'")
    need(p.m >= 1, p, "m", "must be at least 1")
    need(p.s >= 2, p, "s", "must be at least 2")
    need(p.d_slack >= 0, p, "d_slack", "must be non-negative")
    need(p.payload_bytes >= 0, p, "payload_bytes", "must be non-negative")
    need(c.mode in ("chain", "invocation"), c, "mode", "must be 'chain' or 'invocation'")
    need(c.slots_in_flight >= 1, c, "slots_in_flight", "must be at least 1")
    need(c.tau >= 1, c, "tau", "must be at least 1")
    need(c.epochs >= 1, c, "epochs", "must be at least 1")
    need(c.rho == 0 or c.rho > c.tau, c, "rho", "must exceed tau (or be 0 for automatic)")
    need(0 <= c.adversary_multiplier <= 100, c, "adversary_multiplier", "must lie in [0, 100]")
    need(c.adversary_pow in ("distinct", "none"), c, "adversary_pow", "must be 'distinct' or 'none'")
    need(0 <= a.f <= 0.99, a, "f", "must lie in [0, 0.99]")
    need(a.eps_log2 <= 0, a, "eps_log2", "eps must not exceed 1")
    need(min(a.lam, a.tau, a.w, a.d, a.gamma) >= 1, a, "lam", "lam, tau, w, d and gamma must be positive")
    need(a.s == 0 or a.s >= 2, a, "s", "must be 0 (auto) or at least 2")
    need(a.delta > 0 and a.bandwidth_bps > 0, a, "delta", "delta and bandwidth_bps must be positive")
    need(0 < a.budget_factor <= 1, a, "budget_factor", "must lie in (0, 1]")
    need(math.isfinite(a.eps_log2), a, "eps_log2", "must be finite")


def loads(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML parse error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    if node is None:
        cfg = ExperimentConfig()
    else:
        cfg = _build(ExperimentConfig, node, source)
    validate(cfg, source)
    return cfg


BUNDLED = Path(__file__).parent / "configs"


def load(path: str | Path) -> ExperimentConfig:
    """Load a config file; a bare name such as ``desk_small`` picks a bundled one."""
    path = Path(path)
    if not path.exists() and (BUNDLED / f"{path.name}.yaml").exists():
        path = BUNDLED / f"{path.name}.yaml"
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return loads(text, str(path))


def override(cfg: ExperimentConfig, **kw: Any) -> ExperimentConfig:
    """Copy of ``cfg`` with top-level fields replaced (None values are skipped)."""
    kw = {k: v for k, v in kw.items() if v is not None}
    new = dataclasses.replace(cfg, **kw)
    validate(new)
    return new
