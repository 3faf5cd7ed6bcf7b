"""Per-cycle optical inputs: time-bin entangled pairs and the weak-laser input qubit."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .fock import FockState, Mode, ModeRegistry
from .qubit import TimeBinQubit

BINS = (1, 2)
INTERNAL = ("matched", "orthogonal")
TRUNCATION_WARN_MU = 0.05


def signal_mode(b: int, internal: str = "matched") -> Mode:
    return Mode("signal", b, internal)


def idler_mode(b: int) -> Mode:
    return Mode("idler", b)


def input_mode(b: int, internal: str = "matched") -> Mode:
    return Mode("input", b, internal)


@dataclass(frozen=True)
class SourceParams:
    mu_pair: float = 0.016
    mu_input: float = 0.016
    overlap_xi: float = 1.0
    theta1: float = 0.0
    # 1 or 2 selects a time-basis input (MZI1 removed); None means equatorial with theta1.
    time_bin: Optional[int] = None

    def __post_init__(self):
        if self.mu_pair < 0 or self.mu_input < 0:
            raise ValueError("mean photon numbers must be >= 0")
        if not 0.0 <= self.overlap_xi <= 1.0:
            raise ValueError("overlap_xi must lie in [0, 1]")
        if self.time_bin not in (None, 1, 2):
            raise ValueError("time_bin must be None, 1 or 2")
        if max(self.mu_pair, self.mu_input) > TRUNCATION_WARN_MU:
            warnings.warn(f"mean photon number above {TRUNCATION_WARN_MU}: "
                          "second-order truncation may be inaccurate", stacklevel=2)

    def input_qubit(self) -> TimeBinQubit:
        if self.time_bin == 1:
            return TimeBinQubit(1, 0)
        if self.time_bin == 2:
            return TimeBinQubit(0, 1)
        return TimeBinQubit.equatorial(self.theta1)


def pair_registry(per_mode_cutoff: int = 2, total_cutoff: int = 4) -> ModeRegistry:
    modes = [signal_mode(b, k) for b in BINS for k in INTERNAL] + [idler_mode(b) for b in BINS]
    return ModeRegistry(tuple(modes), per_mode_cutoff, total_cutoff)


def input_registry(per_mode_cutoff: int = 2, total_cutoff: int = 4) -> ModeRegistry:
    return ModeRegistry(tuple(input_mode(b, k) for b in BINS for k in INTERNAL),
                        per_mode_cutoff, total_cutoff)


def _power_series(terms: Sequence[Tuple[complex, Tuple[Mode, ...]]], order: int):
    """Creation-operator polynomial for sum_{k<=order} O^k / k!, with O = sum(c * prod a†)."""
    out = [(1.0 + 0j, ())]
    power = [(1.0 + 0j, ())]
    for k in range(1, order + 1):
        power = [(c1 * c2, m1 + m2) for c1, m1 in power for c2, m2 in terms]
        out.extend((c / math.factorial(k), m) for c, m in power)
    return out


def _normalized(state: FockState) -> FockState:
    norm = state.norm
    amps = {occ: a / norm for occ, a in state.amplitudes.items()}
    return FockState(state.registry, amps, state.truncated_weight / norm ** 2)


def build_spdc_state(params: SourceParams, registry: Optional[ModeRegistry] = None,
                     order: int = 2) -> FockState:
    """Double-pulse-pumped pair source expanded to `order` pairs.

    Pair operator chi * (s1† i1† + s2† i2†) with chi = sqrt(mu_pair / 2), so
    the one-pair component is the time-bin entangled state and P(>=1 pair)
    is mu_pair to leading order.
    """
    registry = registry or pair_registry()
    for m in [signal_mode(b) for b in BINS] + [idler_mode(b) for b in BINS]:
        registry.index(m)
    if registry.per_mode_cutoff < order or registry.total_cutoff < 2 * order:
        raise ValueError(f"cutoffs too small for {order}-pair terms")
    chi = math.sqrt(params.mu_pair / 2.0)
    op = [(chi, (signal_mode(b), idler_mode(b))) for b in BINS]
    state = FockState.from_creation_polynomial(registry, _power_series(op, order))
    return _normalized(state)


def input_creation_terms(params: SourceParams) -> List[Tuple[complex, Mode]]:
    """Expansion of the input qubit-mode creation operator over bin x internal modes."""
    q = params.input_qubit()
    xi = params.overlap_xi
    weights = {"matched": math.sqrt(xi), "orthogonal": math.sqrt(1.0 - xi)}
    terms = []
    for b, amp in zip(BINS, (q.alpha, q.beta)):
        for k in INTERNAL:
            c = amp * weights[k]
            if abs(c) > 0:
                terms.append((c, input_mode(b, k)))
    return terms


def build_input_state(params: SourceParams, registry: Optional[ModeRegistry] = None,
                      order: int = 2, mu: Optional[float] = None) -> FockState:
    """Truncated coherent state of the weak laser in the input qubit mode.

    `mu` overrides params.mu_input (the HOM configuration uses this).
    """
    registry = registry or input_registry()
    for b in BINS:
        for k in INTERNAL:
            registry.index(input_mode(b, k))
    if registry.per_mode_cutoff < order or registry.total_cutoff < order:
        raise ValueError(f"cutoffs too small for {order}-photon terms")
    gamma = math.sqrt(params.mu_input if mu is None else mu)
    op = [(gamma * c, (m,)) for c, m in input_creation_terms(params)]
    state = FockState.from_creation_polynomial(registry, _power_series(op, order))
    return _normalized(state)
