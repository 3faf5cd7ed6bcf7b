"""Single-qubit state tomography from six projection counts.

The maximum-likelihood estimate uses the Cholesky form rho = T†T / tr(T†T)
with T lower triangular (four real parameters) and an independent Poisson
model per projection. The overall rate is profiled out, so counts enter as
sum_k n_k ln q_k - n ln sum_k q_k with q_k = w_k <phi_k|T†T|phi_k>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .counts import PROJECTION_LABELS, CountTable
from .qubit import DensityMatrix, TimeBinQubit, fidelity, standard_states

PAIRS = (("+", "-"), ("L", "R"), ("1", "2"))


@dataclass(frozen=True)
class Projection:
    label: str
    state: TimeBinQubit
    weight: float = 1.0


@dataclass(frozen=True)
class ProjectionSet:
    entries: Tuple[Projection, ...]

    def __post_init__(self):
        labels = [p.label for p in self.entries]
        if sorted(labels) != sorted(PROJECTION_LABELS):
            raise ValueError(f"need exactly the projections {PROJECTION_LABELS}")
        for a, b in PAIRS:
            s = self[a].state.projector() + self[b].state.projector()
            if not np.allclose(s, np.eye(2), atol=1e-12):
                raise ValueError(f"projections {a}/{b} are not a complete basis")
        if min(p.weight for p in self.entries) <= 0:
            raise ValueError("weights must be positive")

    def __getitem__(self, label: str) -> Projection:
        for p in self.entries:
            if p.label == label:
                return p
        raise KeyError(label)

    @property
    def vectors(self) -> np.ndarray:
        return np.array([self[k].state.vector for k in PROJECTION_LABELS])

    @property
    def weights(self) -> np.ndarray:
        return np.array([self[k].weight for k in PROJECTION_LABELS], dtype=float)

    def probabilities(self, rho: DensityMatrix) -> np.ndarray:
        """Relative expected counts w_k <phi_k|rho|phi_k>, in PROJECTION_LABELS order."""
        v = self.vectors
        born = np.real(np.einsum("ki,ij,kj->k", v.conj(), rho.entries, v))
        return self.weights * np.clip(born, 0.0, None)


def standard_projection_set() -> ProjectionSet:
    st = standard_states()
    return ProjectionSet(tuple(Projection(k, st[k]) for k in PROJECTION_LABELS))


def analyzer_projection_set(eta3: float, eta4: float,
                            efficiency_weighted: bool = True) -> ProjectionSet:
    """Weights for the two-setting MZI2 acquisition.

    Energy projections come from one setting each (SNSPD3 for +/L, SNSPD4
    for -/R); time projections are summed over both settings and both
    detectors, hence twice the mean efficiency.
    """
    if not efficiency_weighted:
        eta3 = eta4 = 1.0
    st = standard_states()
    w = {"+": eta3, "L": eta3, "-": eta4, "R": eta4, "1": eta3 + eta4, "2": eta3 + eta4}
    return ProjectionSet(tuple(Projection(k, st[k], w[k]) for k in PROJECTION_LABELS))


def _counts_vector(counts: CountTable) -> np.ndarray:
    return np.array([counts[k] for k in PROJECTION_LABELS], dtype=float)


def linear_reconstruct(counts: CountTable, proj: Optional[ProjectionSet] = None) -> DensityMatrix:
    """Bloch-vector inversion; per-projection weights are divided out first."""
    proj = proj or standard_projection_set()
    r = []
    for a, b in PAIRS:
        na, nb = counts[a] / proj[a].weight, counts[b] / proj[b].weight
        if na + nb <= 0:
            raise ValueError(f"basis {a}/{b} has zero total counts")
        r.append((na - nb) / (na + nb))
    return DensityMatrix.from_bloch(r)


def _rho_from_params(t: np.ndarray) -> DensityMatrix:
    T = np.array([[t[0], 0.0], [t[2] + 1j * t[3], t[1]]])
    m = T.conj().T @ T
    return DensityMatrix(m / np.trace(m).real)


def _params_from_rho(rho: DensityMatrix) -> np.ndarray:
    """T parameters with T†T equal to (a slightly regularized) rho."""
    m = rho.entries + 1e-9 * np.eye(2)
    m = m / np.trace(m).real
    t1 = math.sqrt(m[1, 1].real)
    z = m[1, 0] / t1
    t0 = math.sqrt(max(m[0, 0].real - abs(z) ** 2, 0.0))
    return np.array([t0, t1, z.real, z.imag])


def physical_projection(rho: DensityMatrix) -> DensityMatrix:
    """Nearest physical state: clip eigenvalues at 0 and renormalize."""
    w, v = np.linalg.eigh(0.5 * (rho.entries + rho.entries.conj().T))
    w = np.clip(w, 0.0, None)
    m = (v * w) @ v.conj().T
    return DensityMatrix(m / np.trace(m).real)


def _quadratic_forms(proj: ProjectionSet) -> np.ndarray:
    """A_k with <phi_k|T†T|phi_k> = t^T A_k t for t = (t0, t1, t2, t3)."""
    v = proj.vectors
    forms = []
    for p1, p2 in v:
        c = np.array([0.0, p2, p1, 1j * p1])
        a = np.real(np.outer(c, c.conj()))
        a[0, 0] += abs(p1) ** 2
        forms.append(a)
    return np.array(forms)


class _Likelihood:
    """Profiled Poisson log-likelihood in the T parameters, batched over starts.

    LL(t) = sum_k n_k ln(t.A_k.t) - n ln(t.B.t), B = sum_k w_k A_k, is
    invariant under t -> c t; iterates are kept on the unit sphere.
    """

    def __init__(self, n: np.ndarray, proj: ProjectionSet):
        self.n = n
        self.total = float(n.sum())
        self.mask = n > 0
        forms = _quadratic_forms(proj)
        self.A = forms[self.mask]
        self.nk = n[self.mask]
        self.logw = float(np.sum(self.nk * np.log(proj.weights[self.mask])))
        self.B = np.einsum("k,kij->ij", proj.weights, forms)

    def value(self, t: np.ndarray) -> np.ndarray:
        a = np.einsum("...i,kij,...j->...k", t, self.A, t)
        b = np.einsum("...i,ij,...j->...", t, self.B, t)
        with np.errstate(divide="ignore"):
            return (np.log(a) @ self.nk) + self.logw - self.total * np.log(b)

    def derivatives(self, t: np.ndarray):
        At = np.einsum("kij,rj->rki", self.A, t)
        a = np.einsum("ri,rki->rk", t, At)
        Bt = t @ self.B
        b = np.einsum("ri,ri->r", t, Bt)
        g = 2 * np.einsum("k,rki,rk->ri", self.nk, At, 1 / a) - 2 * self.total * Bt / b[:, None]
        h = (2 * np.einsum("k,kij,rk->rij", self.nk, self.A, 1 / a)
             - 4 * np.einsum("k,rki,rkj,rk->rij", self.nk, At, At, 1 / a ** 2)
             - self.total * (2 * self.B[None] / b[:, None, None]
                             - 4 * np.einsum("ri,rj->rij", Bt, Bt) / b[:, None, None] ** 2))
        return g, h

    def at_rho(self, rho: DensityMatrix, proj: ProjectionSet) -> float:
        q = proj.probabilities(rho)
        if np.any((q <= 0) & self.mask):
            return -math.inf
        return float(np.sum(self.n[self.mask] * np.log(q[self.mask])) - self.total * math.log(q.sum()))


_STEPS = 0.5 ** np.arange(0, 12)


def _ascend(lik: _Likelihood, t: np.ndarray, max_iter: int, tol: float):
    """Damped Newton ascent with backtracking, all starts in parallel."""
    t = t / np.linalg.norm(t, axis=1, keepdims=True)
    ll = lik.value(t)
    gain = np.full(len(t), np.inf)
    for it in range(max_iter):
        active = gain >= tol
        if not active.any():
            break
        g, h = lik.derivatives(t)
        w, v = np.linalg.eigh(-h)
        scale = np.max(np.abs(w), axis=1, keepdims=True) + 1e-300
        w = np.maximum(w, 1e-8 * scale)
        d = np.einsum("rij,rj,rkj,rk->ri", v, 1 / w, v, g)
        d = np.where((np.einsum("ri,ri->r", d, g) > 0)[:, None], d, g / scale)
        cand = t[:, None, :] + _STEPS[None, :, None] * d[:, None, :]
        cand = cand / np.linalg.norm(cand, axis=2, keepdims=True)
        vals = lik.value(cand)
        vals = np.where(np.isnan(vals), -np.inf, vals)
        j = np.argmax(vals, axis=1)
        best = vals[np.arange(len(t)), j]
        improve = best > ll
        new_gain = np.where(improve, best - ll, 0.0)
        upd = improve & active
        t = np.where(upd[:, None], cand[np.arange(len(t)), j], t)
        ll = np.where(upd, best, ll)
        gain = np.where(active, new_gain, gain)
    return t, ll, gain < tol


@dataclass(frozen=True)
class MLEResult:
    rho: DensityMatrix
    log_likelihood: float
    converged: bool
    restarts: int


def mle_fit(counts: CountTable, proj: Optional[ProjectionSet] = None, restarts: int = 10,
            rng: Optional[np.random.Generator] = None, max_iter: int = 200,
            tol: float = 1e-10) -> MLEResult:
    """Maximum-likelihood density matrix, always physical by construction.

    Starts are the eigenvalue-clipped linear estimate plus `restarts` random
    points; the run is converged once an iteration improves the
    log-likelihood by less than `tol`.
    """
    proj = proj or standard_projection_set()
    n = _counts_vector(counts)
    if n.sum() <= 0:
        raise ValueError("total counts must be > 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    lik = _Likelihood(n, proj)
    starts = [rng.normal(size=4) for _ in range(max(restarts, 1))]
    try:
        lin = physical_projection(linear_reconstruct(counts, proj))
        starts.insert(0, _params_from_rho(lin))
    except ValueError:
        lin = None
    t, ll, conv = _ascend(lik, np.array(starts), max_iter, tol)
    ll = np.where(np.isfinite(ll), ll, -np.inf)
    k = int(np.argmax(ll))
    rho = _rho_from_params(t[k])
    best = lik.at_rho(rho, proj)
    # the regularized start can sit a hair below an exactly pure clipped estimate
    if lin is not None and lik.at_rho(lin, proj) > best:
        rho, best = lin, lik.at_rho(lin, proj)
    return MLEResult(rho, best, bool(conv[k]), len(starts))


def mle_reconstruct(counts: CountTable, proj: Optional[ProjectionSet] = None,
                    restarts: int = 10, rng: Optional[np.random.Generator] = None) -> DensityMatrix:
    return mle_fit(counts, proj, restarts, rng).rho


def log_likelihood(counts: CountTable, rho: DensityMatrix,
                   proj: Optional[ProjectionSet] = None) -> float:
    proj = proj or standard_projection_set()
    return _Likelihood(_counts_vector(counts), proj).at_rho(rho, proj)


def resample_counts(counts: CountTable, rng: np.random.Generator) -> CountTable:
    n = _counts_vector(counts)
    draw = rng.poisson(n)
    return CountTable(dict(zip(PROJECTION_LABELS, draw.tolist())), counts.total_cycles)


def fidelity_with_error(counts: CountTable, proj: Optional[ProjectionSet], target: TimeBinQubit,
                        resamples: int = 1000, rng: Optional[np.random.Generator] = None,
                        restarts: int = 10) -> Tuple[float, float]:
    """Fidelity of the MLE state with `target` and its Poisson-bootstrap standard deviation."""
    rng = rng if rng is not None else np.random.default_rng(0)
    f = fidelity(mle_reconstruct(counts, proj, restarts, rng), target)
    boot = []
    for _ in range(resamples):
        c = resample_counts(counts, rng)
        if c.total == 0:
            continue
        boot.append(fidelity(mle_reconstruct(c, proj, restarts, rng), target))
    sigma = float(np.std(boot, ddof=1)) if len(boot) > 1 else 0.0
    return f, sigma


def born_counts(rho: DensityMatrix, proj: ProjectionSet, total: float) -> CountTable:
    """Counts exactly proportional to weighted Born probabilities, summing to `total`."""
    q = proj.probabilities(rho)
    return CountTable(dict(zip(PROJECTION_LABELS, (total * q / q.sum()).tolist())))


def sample_counts(rho: DensityMatrix, proj: ProjectionSet, per_basis: float,
                  rng: np.random.Generator) -> CountTable:
    """Poisson counts with mean `per_basis` counts per basis pair (on average)."""
    q = proj.probabilities(rho)
    mean = q / q.sum() * per_basis * 3
    return CountTable(dict(zip(PROJECTION_LABELS, rng.poisson(mean).tolist())))
