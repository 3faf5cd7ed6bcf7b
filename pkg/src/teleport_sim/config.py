"""Experiment configuration: flat JSON with dotted keys grouped by module."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Sequence, Tuple

from .apparatus import ChannelParams, DetectorParams
from .sources import SourceParams

ENGINES = ("exact", "monte_carlo")
HERALD_ORDERS = ("both", "1then2", "2then1")
HOM_WINDOWS = ("same_slot", "any")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HomSpec:
    delays_ps: Tuple[float, ...] = (-60.0, -40.0, -30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0, 40.0, 60.0)
    coherence_ps: float = 20.0
    # MZI1 is removed for this measurement, so its 3 dB split no longer thins the input pulse
    input_gain: float = 2.0
    slot: int = 1
    window: str = "same_slot"
    acquisition_s: float = 600.0


@dataclass(frozen=True)
class FringeSpec:
    theta1: Tuple[float, ...] = tuple(2 * math.pi * k / 12 for k in range(12))
    theta2: float = 0.0
    acquisition_s: float = 120.0
    length_km: float = 0.0


@dataclass(frozen=True)
class QstSpec:
    states: Tuple[str, ...] = ("1", "2", "+", "-", "L", "R")
    theta2: Tuple[float, float] = (0.0, math.pi / 2)
    efficiency_weighted: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    source: SourceParams = field(default_factory=SourceParams)
    det: DetectorParams = field(default_factory=DetectorParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    acquisition_s: float = 6000.0
    seed: int = 20151005
    engine: str = "exact"
    threads: int = 1
    herald_order: str = "both"
    per_mode_cutoff: int = 6
    total_cutoff: int = 6
    direct_mc_max_cycles: int = 10_000_000
    bootstrap_resamples: int = 1000
    mle_restarts: int = 10
    mle_max_iter: int = 200
    hom: HomSpec = field(default_factory=HomSpec)
    fringe: FringeSpec = field(default_factory=FringeSpec)
    qst: QstSpec = field(default_factory=QstSpec)

    def __post_init__(self):
        if self.acquisition_s <= 0 or self.hom.acquisition_s <= 0 or self.fringe.acquisition_s <= 0:
            raise ConfigError("acquisition times must be > 0")
        if self.engine not in ENGINES:
            raise ConfigError(f"run.engine must be one of {ENGINES}")
        if self.herald_order not in HERALD_ORDERS:
            raise ConfigError(f"run.herald_order must be one of {HERALD_ORDERS}")
        if self.hom.window not in HOM_WINDOWS:
            raise ConfigError(f"hom.window must be one of {HOM_WINDOWS}")
        if not (self.hom.delays_ps and self.fringe.theta1 and self.qst.states):
            raise ConfigError("scan lists must be non-empty")
        if len(self.qst.theta2) != 2:
            raise ConfigError("qst.theta2 needs exactly two settings")
        if self.threads < 1:
            raise ConfigError("run.threads must be >= 1")
        if self.mle_max_iter < 1 or self.mle_restarts < 0 or self.bootstrap_resamples < 0:
            raise ConfigError("run.mle_max_iter must be >= 1; restarts and resamples >= 0")
        if self.direct_mc_max_cycles < 0:
            raise ConfigError("run.direct_mc_max_cycles must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("run.seed must be a 64-bit unsigned integer")

    def n_cycles(self, seconds: float) -> int:
        return int(round(seconds * self.det.clock_hz))

    def to_flat(self) -> Dict[str, Any]:
        return {key: getter(self) for key, (getter, _) in _FIELDS.items()}

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "ExperimentConfig":
        values = DEFAULT_FLAT.copy()
        for key, val in flat.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config field {key!r}")
            values[key] = val
        parsed = {}
        for key, (_, conv) in _FIELDS.items():
            try:
                parsed[key] = conv(values[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"field {key!r}: {exc}") from None
        try:
            return _assemble(parsed)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def with_updates(self, **flat) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. with_updates(**{"source.overlap_xi": 0.9})."""
        merged = self.to_flat()
        merged.update(flat)
        return ExperimentConfig.from_flat(merged)


def _bool(v):
    if isinstance(v, bool):
        return v
    raise ValueError(f"expected true/false, got {v!r}")


def _int(v):
    if isinstance(v, bool) or not float(v).is_integer():
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def _float(v):
    if isinstance(v, bool):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def _floats(v):
    if isinstance(v, (str, bytes)) or not isinstance(v, Sequence):
        raise ValueError(f"expected a list of numbers, got {v!r}")
    return tuple(_float(x) for x in v)


def _strs(v):
    if isinstance(v, (str, bytes)) or not isinstance(v, Sequence):
        raise ValueError(f"expected a list of strings, got {v!r}")
    return tuple(str(x) for x in v)


def _str(v):
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


_FIELDS = {
    "source.mu_pair": (lambda c: c.source.mu_pair, _float),
    "source.mu_input": (lambda c: c.source.mu_input, _float),
    "source.overlap_xi": (lambda c: c.source.overlap_xi, _float),
    **{f"det.efficiency_{i}": ((lambda c, i=i: c.det.efficiency[i - 1]), _float) for i in range(1, 5)},
    "det.dark_rate_cps": (lambda c: c.det.dark_rate_cps, _float),
    "det.dead_time_ns": (lambda c: c.det.dead_time_ns, _float),
    "det.slot_window_ns": (lambda c: c.det.slot_window_ns, _float),
    "det.clock_hz": (lambda c: c.det.clock_hz, _float),
    "channel.length_km": (lambda c: c.channel.length_km, _float),
    "channel.atten_db_per_km": (lambda c: c.channel.atten_db_per_km, _float),
    "channel.loss_bsm_path_db": (lambda c: c.channel.extra_loss_db["bsm_path"], _float),
    "channel.loss_mzi2_db": (lambda c: c.channel.extra_loss_db["mzi2"], _float),
    "channel.loss_connectors_db": (lambda c: c.channel.extra_loss_db["connectors"], _float),
    "run.acquisition_s": (lambda c: c.acquisition_s, _float),
    "run.seed": (lambda c: c.seed, _int),
    "run.engine": (lambda c: c.engine, _str),
    "run.threads": (lambda c: c.threads, _int),
    "run.herald_order": (lambda c: c.herald_order, _str),
    "run.direct_mc_max_cycles": (lambda c: c.direct_mc_max_cycles, _int),
    "run.bootstrap_resamples": (lambda c: c.bootstrap_resamples, _int),
    "run.mle_restarts": (lambda c: c.mle_restarts, _int),
    "run.mle_max_iter": (lambda c: c.mle_max_iter, _int),
    "fock.per_mode_cutoff": (lambda c: c.per_mode_cutoff, _int),
    "fock.total_cutoff": (lambda c: c.total_cutoff, _int),
    "hom.delays_ps": (lambda c: list(c.hom.delays_ps), _floats),
    "hom.coherence_ps": (lambda c: c.hom.coherence_ps, _float),
    "hom.input_gain": (lambda c: c.hom.input_gain, _float),
    "hom.slot": (lambda c: c.hom.slot, _int),
    "hom.window": (lambda c: c.hom.window, _str),
    "hom.acquisition_s": (lambda c: c.hom.acquisition_s, _float),
    "fringe.theta1": (lambda c: list(c.fringe.theta1), _floats),
    "fringe.theta2": (lambda c: c.fringe.theta2, _float),
    "fringe.acquisition_s": (lambda c: c.fringe.acquisition_s, _float),
    "fringe.length_km": (lambda c: c.fringe.length_km, _float),
    "qst.states": (lambda c: list(c.qst.states), _strs),
    "qst.theta2": (lambda c: list(c.qst.theta2), _floats),
    "qst.efficiency_weighted": (lambda c: c.qst.efficiency_weighted, _bool),
}


def _assemble(p: Dict[str, Any]) -> ExperimentConfig:
    from .qubit import standard_states

    unknown = [s for s in p["qst.states"] if s not in standard_states()]
    if unknown:
        raise ConfigError(f"field 'qst.states': unknown state labels {unknown}")
    if p["hom.slot"] not in (1, 2):
        raise ConfigError("field 'hom.slot': must be 1 or 2")
    return ExperimentConfig(
        source=SourceParams(p["source.mu_pair"], p["source.mu_input"], p["source.overlap_xi"]),
        det=DetectorParams(tuple(p[f"det.efficiency_{i}"] for i in range(1, 5)),
                           p["det.dark_rate_cps"], p["det.dead_time_ns"],
                           p["det.slot_window_ns"], p["det.clock_hz"]),
        channel=ChannelParams(p["channel.length_km"], p["channel.atten_db_per_km"],
                              {"bsm_path": p["channel.loss_bsm_path_db"],
                               "mzi2": p["channel.loss_mzi2_db"],
                               "connectors": p["channel.loss_connectors_db"]}),
        acquisition_s=p["run.acquisition_s"], seed=p["run.seed"], engine=p["run.engine"],
        threads=p["run.threads"], herald_order=p["run.herald_order"],
        per_mode_cutoff=p["fock.per_mode_cutoff"], total_cutoff=p["fock.total_cutoff"],
        direct_mc_max_cycles=p["run.direct_mc_max_cycles"],
        bootstrap_resamples=p["run.bootstrap_resamples"], mle_restarts=p["run.mle_restarts"],
        mle_max_iter=p["run.mle_max_iter"],
        hom=HomSpec(p["hom.delays_ps"], p["hom.coherence_ps"], p["hom.input_gain"],
                    p["hom.slot"], p["hom.window"], p["hom.acquisition_s"]),
        fringe=FringeSpec(p["fringe.theta1"], p["fringe.theta2"], p["fringe.acquisition_s"],
                          p["fringe.length_km"]),
        qst=QstSpec(p["qst.states"], tuple(p["qst.theta2"]), p["qst.efficiency_weighted"]),
    )


DEFAULT_FLAT: Dict[str, Any] = {}
DEFAULT_FLAT.update({k: g(ExperimentConfig()) for k, (g, _) in _FIELDS.items()})


def load_config(path) -> ExperimentConfig:
    """Parse a config file; ConfigError messages name the line or field at fault."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        flat = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(flat, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return ExperimentConfig.from_flat(flat)


def dumps_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_flat(), indent=2, sort_keys=True) + "\n"
