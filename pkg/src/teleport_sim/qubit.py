"""Two-level time-bin qubit algebra: Bell decomposition, correction, fidelity."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

NORM_TOL = 1e-12
RHO_TOL = 1e-9
CLASSICAL_FIDELITY_BOUND = 2.0 / 3.0


@dataclass(frozen=True)
class TimeBinQubit:
    """alpha |1> + beta |2>, where |k> is a photon in time slot k."""

    alpha: complex
    beta: complex

    def __post_init__(self):
        object.__setattr__(self, "alpha", complex(self.alpha))
        object.__setattr__(self, "beta", complex(self.beta))
        n = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(n - 1.0) > NORM_TOL:
            raise ValueError(f"qubit not normalized: |a|^2+|b|^2 = {n!r}")

    @classmethod
    def from_amplitudes(cls, alpha: complex, beta: complex) -> "TimeBinQubit":
        n = math.sqrt(abs(alpha) ** 2 + abs(beta) ** 2)
        if n == 0:
            raise ValueError("zero amplitudes")
        return cls(alpha / n, beta / n)

    @classmethod
    def equatorial(cls, phase: float) -> "TimeBinQubit":
        """(|1> + e^{i phase}|2>)/sqrt(2)."""
        s = 1 / math.sqrt(2)
        return cls(s, s * complex(math.cos(phase), math.sin(phase)))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta], dtype=complex)

    def projector(self) -> np.ndarray:
        v = self.vector
        return np.outer(v, v.conj())

    def overlap(self, other: "TimeBinQubit") -> float:
        """|<self|other>|^2."""
        return abs(np.vdot(self.vector, other.vector)) ** 2


class BellState(enum.Enum):
    PSI_PLUS = "Psi+"
    PSI_MINUS = "Psi-"
    PHI_PLUS = "Phi+"
    PHI_MINUS = "Phi-"


@dataclass(frozen=True)
class DensityMatrix:
    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex).reshape(2, 2)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @classmethod
    def from_qubit(cls, q: TimeBinQubit) -> "DensityMatrix":
        return cls(q.projector())

    @classmethod
    def from_bloch(cls, r) -> "DensityMatrix":
        x, y, z = r
        return cls(0.5 * np.array([[1 + z, x - 1j * y], [x + 1j * y, 1 - z]]))

    @classmethod
    def maximally_mixed(cls) -> "DensityMatrix":
        return cls(np.eye(2) / 2)

    @property
    def bloch(self) -> np.ndarray:
        m = self.entries
        return np.array([2 * m[1, 0].real, 2 * m[1, 0].imag, (m[0, 0] - m[1, 1]).real])

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))

    def violations(self) -> List[str]:
        m = self.entries
        out = []
        if np.max(np.abs(m - m.conj().T)) > RHO_TOL:
            out.append("not Hermitian")
        if abs(np.trace(m) - 1.0) > RHO_TOL:
            out.append("trace != 1")
        if self.eigenvalues.min() < -RHO_TOL:
            out.append("negative eigenvalue")
        return out

    @property
    def is_physical(self) -> bool:
        return not self.violations()

    def trace_distance(self, other: "DensityMatrix") -> float:
        d = self.entries - other.entries
        return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))

    def to_json(self) -> Dict[str, List[List[float]]]:
        return {"re": self.entries.real.tolist(), "im": self.entries.imag.tolist()}

    @classmethod
    def from_json(cls, obj) -> "DensityMatrix":
        return cls(np.array(obj["re"], dtype=float) + 1j * np.array(obj["im"], dtype=float))


def _require_normalized(q: TimeBinQubit) -> None:
    n = abs(q.alpha) ** 2 + abs(q.beta) ** 2
    if abs(n - 1.0) > NORM_TOL:
        raise ValueError("input qubit is not normalized")


def bell_decompose(q: TimeBinQubit) -> List[Tuple[BellState, TimeBinQubit, float]]:
    """Branches of (pair state) x (input qubit) in the signal-input Bell basis.

    Each entry is (Bell outcome, conditional idler qubit, probability).
    """
    _require_normalized(q)
    a, b = q.alpha, q.beta
    return [
        (BellState.PHI_PLUS, TimeBinQubit(a, b), 0.25),
        (BellState.PHI_MINUS, TimeBinQubit(a, -b), 0.25),
        (BellState.PSI_PLUS, TimeBinQubit(b, a), 0.25),
        (BellState.PSI_MINUS, TimeBinQubit(b, -a), 0.25),
    ]


def psi_minus_branch(q: TimeBinQubit) -> TimeBinQubit:
    return TimeBinQubit(q.beta, -q.alpha)


def psi_minus_correction(q: TimeBinQubit) -> TimeBinQubit:
    """Undo (alpha, beta) -> (beta, -alpha)."""
    _require_normalized(q)
    return TimeBinQubit(-q.beta, q.alpha)


PSI_MINUS_CORRECTION = np.array([[0, -1], [1, 0]], dtype=complex)


def correct_density(rho: DensityMatrix) -> DensityMatrix:
    u = PSI_MINUS_CORRECTION
    return DensityMatrix(u @ rho.entries @ u.conj().T)


def fidelity(rho: DensityMatrix, target: TimeBinQubit) -> float:
    problems = rho.violations()
    if problems:
        raise ValueError("invalid density matrix: " + ", ".join(problems))
    v = target.vector
    f = float(np.real(np.vdot(v, rho.entries @ v)))
    return min(1.0, max(0.0, f))


def same_state(a: TimeBinQubit, b: TimeBinQubit, tol: float = 1e-9) -> bool:
    return a.overlap(b) >= 1.0 - tol


def standard_states() -> Dict[str, TimeBinQubit]:
    s = 1 / math.sqrt(2)
    return {
        "1": TimeBinQubit(1, 0),
        "2": TimeBinQubit(0, 1),
        "+": TimeBinQubit(s, s),
        "-": TimeBinQubit(s, -s),
        "L": TimeBinQubit(s, 1j * s),
        "R": TimeBinQubit(s, -1j * s),
    }
