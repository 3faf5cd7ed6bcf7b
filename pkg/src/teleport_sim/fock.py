"""Sparse truncated Fock-space states and passive linear-optics operations.

A state is a map from occupation vectors (one photon number per registered
mode) to complex amplitudes. All operations are pure: they return new
states and never mutate their arguments.

Beamsplitter convention (real, reflection-type)::

    a† -> sqrt(T) a† + sqrt(1-T) e^{i phi} b†
    b† -> sqrt(1-T) e^{-i phi} a† - sqrt(T) b†

so a 50:50 coupler is the Hadamard matrix on creation operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, NamedTuple, Optional, Sequence, Tuple

PRUNE_THRESHOLD = 1e-12
NORM_TOLERANCE = 1e-9

Occupation = Tuple[int, ...]


class Mode(NamedTuple):
    """Mode label: spatial path, time slot, internal (spectral/polarization) variant."""

    spatial: str
    slot: int
    internal: str = "matched"

    @property
    def is_env(self) -> bool:
        return self.spatial.startswith("env")


@dataclass(frozen=True)
class ModeRegistry:
    modes: Tuple[Mode, ...]
    per_mode_cutoff: int = 2
    total_cutoff: int = 4
    _index: Dict[Mode, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        modes = tuple(Mode(*m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        if len(set(modes)) != len(modes):
            raise ValueError("mode labels must be unique")
        if self.per_mode_cutoff < 1:
            raise ValueError("per_mode_cutoff must be >= 1")
        if self.total_cutoff < self.per_mode_cutoff:
            raise ValueError("total_cutoff must be >= per_mode_cutoff")
        object.__setattr__(self, "_index", {m: i for i, m in enumerate(modes)})

    def __len__(self) -> int:
        return len(self.modes)

    def __contains__(self, mode) -> bool:
        return tuple(mode) in self._index

    def index(self, mode) -> int:
        try:
            return self._index[Mode(*mode)]
        except (KeyError, TypeError):
            raise KeyError(f"unknown mode {mode!r}") from None

    def extended(self, new_modes: Iterable[Mode]) -> "ModeRegistry":
        extra = [Mode(*m) for m in new_modes if tuple(m) not in self._index]
        return ModeRegistry(self.modes + tuple(extra), self.per_mode_cutoff, self.total_cutoff)

    def with_cutoffs(self, per_mode_cutoff: int, total_cutoff: int) -> "ModeRegistry":
        return ModeRegistry(self.modes, per_mode_cutoff, total_cutoff)

    def fresh_env(self) -> Mode:
        k = sum(1 for m in self.modes if m.is_env)
        while Mode(f"env_{k}", 0) in self._index:
            k += 1
        return Mode(f"env_{k}", 0)

    def allows(self, occ: Occupation) -> bool:
        return max(occ, default=0) <= self.per_mode_cutoff and sum(occ) <= self.total_cutoff


@dataclass(frozen=True)
class FockState:
    """Sparse pure state over a ModeRegistry.

    `truncated_weight` accumulates the squared norm discarded by cutoffs
    over the state's history (reported, never silently renormalized).
    """

    registry: ModeRegistry
    amplitudes: Mapping[Occupation, complex]
    truncated_weight: float = 0.0

    @classmethod
    def vacuum(cls, registry: ModeRegistry) -> "FockState":
        return cls(registry, {(0,) * len(registry): 1.0 + 0j})

    @classmethod
    def from_occupations(cls, registry: ModeRegistry, terms: Mapping) -> "FockState":
        """Build from {{mode: n, ...}: amplitude} or {occupation tuple: amplitude}."""
        amps: Dict[Occupation, complex] = {}
        for key, amp in terms.items():
            if isinstance(key, Mapping):
                occ = [0] * len(registry)
                for mode, n in key.items():
                    occ[registry.index(mode)] = int(n)
                key = tuple(occ)
            key = tuple(int(n) for n in key)
            if len(key) != len(registry):
                raise ValueError("occupation vector length does not match registry")
            if not registry.allows(key):
                raise ValueError(f"occupation {key} violates cutoffs")
            amps[key] = amps.get(key, 0j) + complex(amp)
        return cls(registry, _pruned(amps))

    @classmethod
    def from_creation_polynomial(cls, registry: ModeRegistry, terms: Iterable) -> "FockState":
        """Apply sum_k c_k prod(a†_m for m in modes_k) to vacuum.

        `terms` is an iterable of (coefficient, sequence of modes); repeated
        modes raise that mode's occupation. Terms violating a cutoff are
        dropped and their weight recorded.
        """
        poly: Dict[Occupation, complex] = {}
        for coef, modes in terms:
            occ = [0] * len(registry)
            for m in modes:
                occ[registry.index(m)] += 1
            key = tuple(occ)
            poly[key] = poly.get(key, 0j) + complex(coef)
        amps = {occ: c * math.sqrt(_factorial_prod(occ)) for occ, c in poly.items()}
        kept, lost = _apply_cutoffs(registry, amps)
        return cls(registry, kept, lost)

    @property
    def norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    @property
    def is_normalized(self) -> bool:
        return abs(self.norm - 1.0) <= NORM_TOLERANCE

    def amplitude(self, occupation) -> complex:
        if isinstance(occupation, Mapping):
            occ = [0] * len(self.registry)
            for mode, n in occupation.items():
                occ[self.registry.index(mode)] = n
            occupation = tuple(occ)
        return self.amplitudes.get(tuple(occupation), 0j)

    def mean_photons(self, mode) -> float:
        i = self.registry.index(mode)
        return sum(occ[i] * abs(a) ** 2 for occ, a in self.amplitudes.items())

    def with_registry(self, registry: ModeRegistry) -> "FockState":
        """Re-home onto a registry whose leading modes equal this one's (padding new modes with 0)."""
        n_old = len(self.registry)
        if registry.modes[:n_old] != self.registry.modes:
            raise ValueError("new registry must extend the current mode order")
        pad = (0,) * (len(registry) - n_old)
        return FockState(registry, {occ + pad: a for occ, a in self.amplitudes.items()},
                         self.truncated_weight)


def _factorial_prod(occ: Occupation) -> int:
    out = 1
    for n in occ:
        out *= math.factorial(n)
    return out


def _pruned(amps: Mapping[Occupation, complex]) -> Dict[Occupation, complex]:
    return {k: v for k, v in amps.items() if abs(v) >= PRUNE_THRESHOLD}


def _apply_cutoffs(registry: ModeRegistry, amps: Mapping[Occupation, complex]):
    kept: Dict[Occupation, complex] = {}
    lost = 0.0
    for occ, a in amps.items():
        if abs(a) < PRUNE_THRESHOLD:
            continue
        if registry.allows(occ):
            kept[occ] = a
        else:
            lost += abs(a) ** 2
    return kept, lost


def apply_mode_map(state: FockState, mapping: Mapping) -> FockState:
    """Substitute creation operators of source modes by linear combinations.

    `mapping` is {source mode: [(target mode, coefficient), ...]}. Targets
    may include source modes; all substitutions act simultaneously. The
    caller is responsible for the map being an isometry.
    """
    reg = state.registry
    src = {reg.index(m): [(reg.index(t), complex(c)) for t, c in targets]
           for m, targets in mapping.items()}
    out: Dict[Occupation, complex] = {}
    for occ, amp in state.amplitudes.items():
        base = [0 if i in src else n for i, n in enumerate(occ)]
        poly: Dict[Occupation, complex] = {tuple(base): amp / math.sqrt(_factorial_prod(occ))}
        for i, targets in src.items():
            for _ in range(occ[i]):
                nxt: Dict[Occupation, complex] = {}
                for key, c in poly.items():
                    for j, u in targets:
                        if u == 0:
                            continue
                        k2 = list(key)
                        k2[j] += 1
                        k2 = tuple(k2)
                        nxt[k2] = nxt.get(k2, 0j) + c * u
                poly = nxt
        for key, c in poly.items():
            out[key] = out.get(key, 0j) + c * math.sqrt(_factorial_prod(key))
    kept, lost = _apply_cutoffs(reg, out)
    return FockState(reg, kept, state.truncated_weight + lost)


def beamsplitter_map(mode_a, mode_b, transmissivity: float, phase: float = 0.0) -> dict:
    t = math.sqrt(transmissivity)
    r = math.sqrt(1.0 - transmissivity)
    e = complex(math.cos(phase), math.sin(phase))
    return {
        Mode(*mode_a): [(Mode(*mode_a), t), (Mode(*mode_b), r * e)],
        Mode(*mode_b): [(Mode(*mode_a), r * e.conjugate()), (Mode(*mode_b), -t)],
    }


def apply_beamsplitter(state: FockState, mode_a, mode_b, transmissivity: float,
                       phase: float = 0.0) -> FockState:
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError(f"transmissivity {transmissivity} outside [0, 1]")
    if tuple(mode_a) == tuple(mode_b):
        raise ValueError("beamsplitter needs two distinct modes")
    state.registry.index(mode_a)
    state.registry.index(mode_b)
    return apply_mode_map(state, beamsplitter_map(mode_a, mode_b, transmissivity, phase))


def apply_phase(state: FockState, mode, phase: float) -> FockState:
    i = state.registry.index(mode)
    amps = {occ: a * complex(math.cos(phase * occ[i]), math.sin(phase * occ[i]))
            for occ, a in state.amplitudes.items()}
    return FockState(state.registry, amps, state.truncated_weight)


def apply_loss(state: FockState, mode, survival: float) -> FockState:
    """Couple `mode` to a freshly registered environment mode with transmissivity `survival`."""
    if not 0.0 <= survival <= 1.0:
        raise ValueError(f"survival {survival} outside [0, 1]")
    state.registry.index(mode)
    env = state.registry.fresh_env()
    grown = state.with_registry(state.registry.extended([env]))
    return apply_beamsplitter(grown, mode, env, survival)


def tensor(a: FockState, b: FockState, per_mode_cutoff: Optional[int] = None,
           total_cutoff: Optional[int] = None) -> FockState:
    """Product state on the concatenated registry; cutoffs default to those of `a`."""
    overlap = set(a.registry.modes) & set(b.registry.modes)
    if overlap:
        raise ValueError(f"registries overlap on {sorted(overlap)}")
    reg = ModeRegistry(a.registry.modes + b.registry.modes,
                       per_mode_cutoff or a.registry.per_mode_cutoff,
                       total_cutoff or a.registry.total_cutoff)
    amps = {oa + ob: xa * xb for oa, xa in a.amplitudes.items() for ob, xb in b.amplitudes.items()}
    kept, lost = _apply_cutoffs(reg, amps)
    return FockState(reg, kept, a.truncated_weight + b.truncated_weight + lost)


def normalize(state: FockState) -> Tuple[FockState, float]:
    norm = state.norm
    if norm == 0.0:
        raise ValueError("cannot normalize the zero state")
    amps = {occ: a / norm for occ, a in state.amplitudes.items()}
    return FockState(state.registry, amps, state.truncated_weight), norm


def measure_number_distribution(state: FockState, keep: Sequence) -> Dict[Occupation, float]:
    """Photon-number distribution over `keep`, marginalizing every other mode incoherently."""
    if not state.is_normalized:
        raise ValueError(f"state is not normalized (norm {state.norm:.6g})")
    idx = [state.registry.index(m) for m in keep]
    dist: Dict[Occupation, float] = {}
    for occ, a in state.amplitudes.items():
        key = tuple(occ[i] for i in idx)
        dist[key] = dist.get(key, 0.0) + abs(a) ** 2
    return dist


def project(state: FockState, fixed: Mapping) -> Tuple[FockState, float]:
    """Post-select on exact occupations of some modes.

    Returns the (renormalized) conditional state on the full registry and
    the probability of the post-selection.
    """
    idx = [(state.registry.index(m), int(n)) for m, n in fixed.items()]
    amps = {occ: a for occ, a in state.amplitudes.items() if all(occ[i] == n for i, n in idx)}
    p = sum(abs(a) ** 2 for a in amps.values())
    if p == 0.0:
        return FockState(state.registry, {}, state.truncated_weight), 0.0
    s = math.sqrt(p)
    return FockState(state.registry, {k: a / s for k, a in amps.items()}, state.truncated_weight), p


def photon_number_sector(state: FockState, modes: Sequence, n: int) -> Tuple[FockState, float]:
    """Post-select on exactly `n` photons summed over `modes`."""
    idx = [state.registry.index(m) for m in modes]
    amps = {occ: a for occ, a in state.amplitudes.items() if sum(occ[i] for i in idx) == n}
    p = sum(abs(a) ** 2 for a in amps.values())
    if p == 0.0:
        raise ValueError(f"no weight in the {n}-photon sector")
    s = math.sqrt(p)
    return FockState(state.registry, {k: a / s for k, a in amps.items()}, state.truncated_weight), p
