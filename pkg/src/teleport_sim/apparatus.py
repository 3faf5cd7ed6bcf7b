"""Measurement chain: BSM coupler, fiber, MZI2 analyzer and threshold SNSPDs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .fock import (FockState, Mode, apply_beamsplitter, apply_loss, apply_mode_map,
                   measure_number_distribution, project)
from .qubit import TimeBinQubit
from .sources import BINS, INTERNAL, idler_mode, input_mode, signal_mode

ANALYZER_SLOTS = (1, 2, 3)
PSI_MINUS = "PsiMinus"

Cell = Tuple[int, int]


def port_mode(detector: int, slot: int) -> Mode:
    return Mode(f"port{detector}", slot)


@dataclass(frozen=True)
class DetectorParams:
    efficiency: Tuple[float, float, float, float] = (0.80, 0.86, 0.86, 0.81)
    dark_rate_cps: float = 100.0
    dead_time_ns: float = 100.0
    slot_window_ns: float = 1.0
    clock_hz: float = 35.53e6

    def __post_init__(self):
        eff = tuple(float(e) for e in self.efficiency)
        if len(eff) != 4 or not all(0.0 <= e <= 1.0 for e in eff):
            raise ValueError("need four efficiencies in [0, 1]")
        object.__setattr__(self, "efficiency", eff)
        for name in ("dark_rate_cps", "dead_time_ns", "slot_window_ns", "clock_hz"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def eta(self, detector: int) -> float:
        return self.efficiency[detector - 1]

    @property
    def dark_probability(self) -> float:
        """Dark-click probability per detector per slot window."""
        return min(1.0, self.dark_rate_cps * self.slot_window_ns * 1e-9)


def _default_extra_loss() -> Dict[str, float]:
    return {"bsm_path": 1.0, "mzi2": 2.0, "connectors": 0.0}


IDLER_PATH_ELEMENTS = ("mzi2", "connectors")


@dataclass(frozen=True)
class ChannelParams:
    length_km: float = 102.0
    atten_db_per_km: float = 0.21
    extra_loss_db: Mapping[str, float] = field(default_factory=_default_extra_loss)

    def __post_init__(self):
        merged = _default_extra_loss()
        merged.update({k: float(v) for k, v in dict(self.extra_loss_db).items()})
        object.__setattr__(self, "extra_loss_db", merged)
        if self.length_km < 0 or self.atten_db_per_km < 0 or min(merged.values()) < 0:
            raise ValueError("lengths and losses must be >= 0")

    @property
    def idler_loss_db(self) -> float:
        return self.length_km * self.atten_db_per_km + sum(
            self.extra_loss_db[k] for k in IDLER_PATH_ELEMENTS)

    @property
    def idler_survival(self) -> float:
        return 10 ** (-self.idler_loss_db / 10)

    @property
    def bsm_survival(self) -> float:
        return 10 ** (-self.extra_loss_db["bsm_path"] / 10)


@dataclass(frozen=True, order=True)
class ClickPattern:
    clicks: FrozenSet[Cell] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "clicks", frozenset((int(d), int(s)) for d, s in self.clicks))

    def slots(self, detector: int) -> List[int]:
        return sorted(s for d, s in self.clicks if d == detector)

    def restricted(self, detectors: Iterable[int]) -> "ClickPattern":
        keep = set(detectors)
        return ClickPattern(frozenset(c for c in self.clicks if c[0] in keep))

    def __iter__(self):
        return iter(sorted(self.clicks))

    def __len__(self) -> int:
        return len(self.clicks)


# --- optical transformations -------------------------------------------------

def bsm_path_loss(state: FockState, ch: ChannelParams) -> FockState:
    """Insertion loss of the signal arm between source and coupler."""
    s = ch.bsm_survival
    if s >= 1.0:
        return state
    for b in BINS:
        state = apply_loss(state, signal_mode(b), s)
    return state


def bsm_transform(state: FockState) -> FockState:
    """50:50 coupler between signal and input, per time bin and internal mode.

    Output port carrying the `signal` label goes to SNSPD1, `input` to SNSPD2.
    """
    for b in BINS:
        for k in INTERNAL:
            state = apply_beamsplitter(state, signal_mode(b, k), input_mode(b, k), 0.5)
    return state


def fiber_loss(state: FockState, ch: ChannelParams) -> FockState:
    s = ch.idler_survival
    if s >= 1.0:
        return state
    for b in BINS:
        state = apply_loss(state, idler_mode(b), s)
    return state


def mzi2_map(theta2: float) -> Dict[Mode, List[Tuple[Mode, complex]]]:
    """Idler bin b -> (short arm, slot b) and (long arm, slot b+1) on ports 3 and 4."""
    e = complex(math.cos(theta2), math.sin(theta2))
    return {
        idler_mode(b): [
            (port_mode(3, b), 0.5), (port_mode(3, b + 1), 0.5 * e),
            (port_mode(4, b), 0.5), (port_mode(4, b + 1), -0.5 * e),
        ]
        for b in BINS
    }


def mzi2_transform(state: FockState, theta2: float) -> FockState:
    for b in BINS:
        state.registry.index(idler_mode(b))
    ports = [port_mode(d, s) for d in (3, 4) for s in ANALYZER_SLOTS]
    state = state.with_registry(state.registry.extended(ports))
    return apply_mode_map(state, mzi2_map(theta2))


# --- detector mapping ----------------------------------------------------------

def bsm_mode_map() -> Dict[Mode, Cell]:
    out = {}
    for b in BINS:
        for k in INTERNAL:
            out[signal_mode(b, k)] = (1, b)
            out[input_mode(b, k)] = (2, b)
    return out


def teleport_mode_map() -> Dict[Mode, Cell]:
    out = bsm_mode_map()
    for d in (3, 4):
        for s in ANALYZER_SLOTS:
            out[port_mode(d, s)] = (d, s)
    return out


def hom_mode_map() -> Dict[Mode, Cell]:
    """MZIs removed: idler bins go straight to SNSPD3."""
    out = bsm_mode_map()
    for b in BINS:
        out[idler_mode(b)] = (3, b)
    return out


# --- click statistics ----------------------------------------------------------

@dataclass(frozen=True)
class ClickModel:
    """Exact raw click statistics over 2**len(cells) bitmask patterns.

    Bit j of a pattern index is set when cells[j] clicked before dead-time
    filtering.
    """

    cells: Tuple[Cell, ...]
    raw_probs: np.ndarray
    outcome_cells: np.ndarray  # photon count per cell for each number outcome
    outcome_probs: np.ndarray
    cell_eta: np.ndarray
    dark_probability: float

    def pattern(self, mask: int) -> ClickPattern:
        return ClickPattern(frozenset(c for j, c in enumerate(self.cells) if mask >> j & 1))

    def mask(self, pattern: ClickPattern) -> int:
        return sum(1 << self.cells.index(c) for c in pattern.clicks)


def build_click_model(state: FockState, det: DetectorParams,
                      mode_map: Mapping[Mode, Cell]) -> ClickModel:
    reg = state.registry
    mapped = [m for m in reg.modes if m in mode_map]
    unmapped = [reg.index(m) for m in reg.modes if m not in mode_map and not m.is_env]
    for occ in state.amplitudes:
        for i in unmapped:
            if occ[i]:
                raise ValueError(f"occupied mode {reg.modes[i]} has no detector mapping")
    cells = tuple(sorted(set(mode_map[m] for m in mapped) | set(mode_map.values())))
    cell_index = {c: j for j, c in enumerate(cells)}
    dist = measure_number_distribution(state, mapped)
    grouped: Dict[Tuple[int, ...], float] = {}
    for occ, p in dist.items():
        counts = [0] * len(cells)
        for m, n in zip(mapped, occ):
            counts[cell_index[mode_map[m]]] += n
        key = tuple(counts)
        grouped[key] = grouped.get(key, 0.0) + p
    outcome_cells = np.array(list(grouped.keys()), dtype=np.int64).reshape(-1, len(cells))
    outcome_probs = np.array(list(grouped.values()), dtype=float)
    eta = np.array([det.eta(d) for d, _ in cells])
    dark = det.dark_probability
    p_click = 1.0 - (1.0 - dark) * (1.0 - eta)[None, :] ** outcome_cells
    table = np.ones((len(outcome_probs), 1))
    for j in range(len(cells)):
        pj = p_click[:, j:j + 1]
        # bit j is the highest so far: new index = old | (bit << j)
        table = np.concatenate([table * (1.0 - pj), table * pj], axis=1)
    raw = outcome_probs @ table
    return ClickModel(cells, raw, outcome_cells, outcome_probs, eta, dark)


def dead_time_filter(pattern: ClickPattern, det: DetectorParams) -> ClickPattern:
    """Erase clicks arriving within the dead time after a registered click on the same detector."""
    kept = set()
    for d in sorted({d for d, _ in pattern.clicks}):
        last = None
        for s in pattern.slots(d):
            t = (s - 1) * det.slot_window_ns
            if last is None or t - last >= det.dead_time_ns:
                kept.add((d, s))
                last = t
    return ClickPattern(frozenset(kept))


def dead_time_table(model: ClickModel, det: DetectorParams) -> np.ndarray:
    """Map raw bitmask -> filtered bitmask."""
    n = len(model.cells)
    out = np.empty(1 << n, dtype=np.int64)
    for mask in range(1 << n):
        out[mask] = model.mask(dead_time_filter(model.pattern(mask), det))
    return out


def click_distribution(state: FockState, det: DetectorParams,
                       mode_map: Mapping[Mode, Cell]) -> Dict[ClickPattern, float]:
    model = build_click_model(state, det, mode_map)
    filt = dead_time_table(model, det)
    agg = np.bincount(filt, weights=model.raw_probs, minlength=len(model.raw_probs))
    return {model.pattern(int(m)): float(p) for m, p in enumerate(agg) if p > 0.0}


def sample_raw_masks(model: ClickModel, n_cycles: int, rng: np.random.Generator) -> np.ndarray:
    """Cycle-by-cycle sampling: photon numbers, binomial thinning, dark counts."""
    idx = rng.choice(len(model.outcome_probs), size=n_cycles,
                     p=model.outcome_probs / model.outcome_probs.sum())
    photons = model.outcome_cells[idx]
    survived = rng.binomial(photons, model.cell_eta[None, :]) > 0
    dark = rng.random(photons.shape) < model.dark_probability
    bits = (survived | dark).astype(np.int64)
    weights = 1 << np.arange(len(model.cells), dtype=np.int64)
    return bits @ weights


# --- classification --------------------------------------------------------------

def classify_heralding(p: ClickPattern, order: str = "both") -> Optional[str]:
    """PsiMinus iff SNSPD1 and SNSPD2 each clicked once, in different slots.

    `order` restricts the accepted signature: "both", "1then2" (SNSPD1 earlier)
    or "2then1".
    """
    s1, s2 = p.slots(1), p.slots(2)
    if len(s1) != 1 or len(s2) != 1 or s1[0] == s2[0]:
        return None
    if order == "1then2" and not s1[0] < s2[0]:
        return None
    if order == "2then1" and not s2[0] < s1[0]:
        return None
    return PSI_MINUS


ANALYSIS_OUTCOMES = ("proj_plus_theta2", "proj_minus_theta2", "proj_1", "proj_2")


def classify_analysis(p: ClickPattern) -> str:
    clicks = [c for c in p.clicks if c[0] in (3, 4)]
    if not clicks:
        return "none"
    if len(clicks) > 1:
        return "ambiguous"
    d, s = clicks[0]
    if s == 1:
        return "proj_1"
    if s == 3:
        return "proj_2"
    return "proj_plus_theta2" if d == 3 else "proj_minus_theta2"


# --- ideal-limit helpers -----------------------------------------------------------

def heralded_idler_qubit(state: FockState, pattern: ClickPattern) -> Tuple[TimeBinQubit, float]:
    """Idler qubit conditioned on exactly one matched photon per clicked BSM cell.

    Valid for post-selected single-pair, single-photon inputs with ideal
    overlap; raises if the conditional idler is not a single-photon qubit.
    """
    fixed = {}
    for b in BINS:
        for k in INTERNAL:
            fixed[signal_mode(b, k)] = 0
            fixed[input_mode(b, k)] = 0
    for d, s in pattern.clicks:
        fixed[signal_mode(s) if d == 1 else input_mode(s)] = 1
    cond, p = project(state, fixed)
    if p == 0.0:
        raise ValueError("pattern has zero probability")
    i1 = cond.registry.index(idler_mode(1))
    i2 = cond.registry.index(idler_mode(2))
    alpha = beta = 0j
    for occ, a in cond.amplitudes.items():
        n1, n2 = occ[i1], occ[i2]
        if (n1, n2) == (1, 0):
            alpha += a
        elif (n1, n2) == (0, 1):
            beta += a
        else:
            raise ValueError("conditional idler is not a single-photon qubit")
    return TimeBinQubit.from_amplitudes(alpha, beta), p


def write_event_stream(path, events: Iterable[Tuple[int, ClickPattern]]) -> None:
    """CSV export `cycle,detector,slot`, one row per click."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cycle", "detector", "slot"])
        for cycle, pattern in events:
            for d, s in pattern:
                w.writerow([cycle, d, s])
