"""Scenario runners: HOM delay scan, teleportation fringe scan and six-state QST.

Every scan point builds the full optical chain as a Fock state, turns it into
exact click-pattern probabilities, and then either reports expectations
(engine "exact") or samples counts (engine "monte_carlo").
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq, curve_fit

from .apparatus import (ANALYSIS_OUTCOMES, ChannelParams, ClickModel, bsm_path_loss, bsm_transform,
                        build_click_model, classify_analysis, classify_heralding, dead_time_table,
                        fiber_loss, hom_mode_map, mzi2_transform, sample_raw_masks, teleport_mode_map)
from .config import ExperimentConfig
from .counts import CountTable
from .fock import FockState, normalize, tensor
from .qubit import (CLASSICAL_FIDELITY_BOUND, TimeBinQubit, correct_density, fidelity,
                    psi_minus_branch, standard_states)
from .sources import (SourceParams, build_input_state, build_spdc_state, input_registry,
                      pair_registry)
from .tomography import (MLEResult, ProjectionSet, analyzer_projection_set, mle_fit,
                         resample_counts)

TAG_HOM, TAG_FRINGE, TAG_QST, TAG_BOOTSTRAP = 1, 2, 3, 4
MC_BLOCK = 200_000

TELEPORT_LABELS = ANALYSIS_OUTCOMES + ("ambiguous", "herald_only", "no_herald")
HOM_LABELS = ("triple", "double_only", "other")

# classify_analysis outcome -> projection label, per MZI2 setting index
PROJECTION_OF = (
    {"proj_plus_theta2": "+", "proj_minus_theta2": "-", "proj_1": "1", "proj_2": "2"},
    {"proj_plus_theta2": "L", "proj_minus_theta2": "R", "proj_1": "1", "proj_2": "2"},
)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one work unit, independent of execution order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --- scenarios ---------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Exact outcome distribution of one scan point over a fixed label set."""

    model: ClickModel
    labels: Tuple[str, ...]
    label_of_mask: np.ndarray  # raw mask -> index into labels (after dead time)

    @property
    def probabilities(self) -> np.ndarray:
        return np.bincount(self.label_of_mask, weights=self.model.raw_probs,
                           minlength=len(self.labels))

    def probability(self, label: str) -> float:
        return float(self.probabilities[self.labels.index(label)])


def _label_table(model: ClickModel, cfg: ExperimentConfig, labels, classify) -> np.ndarray:
    filt = dead_time_table(model, cfg.det)
    out = np.empty(len(filt), dtype=np.int64)
    cache: Dict[int, int] = {}
    for raw, m in enumerate(filt):
        m = int(m)
        if m not in cache:
            cache[m] = labels.index(classify(model.pattern(m)))
        out[raw] = cache[m]
    return out


def source_chain(cfg: ExperimentConfig, src: SourceParams, input_mu: Optional[float] = None) -> FockState:
    """Pair source and input laser, through the signal-arm loss and the BSM coupler."""
    pm, tot = cfg.per_mode_cutoff, cfg.total_cutoff
    pairs = build_spdc_state(src, pair_registry(pm, tot))
    laser = build_input_state(src, input_registry(pm, tot), mu=input_mu)
    state, _ = normalize(tensor(pairs, laser))
    return bsm_transform(bsm_path_loss(state, cfg.channel))


def teleport_state(cfg: ExperimentConfig, src: SourceParams, theta2: float,
                   channel: Optional[ChannelParams] = None) -> FockState:
    channel = channel or cfg.channel
    state = source_chain(replace(cfg, channel=channel), src)
    return mzi2_transform(fiber_loss(state, channel), theta2)


def teleport_scenario(cfg: ExperimentConfig, src: SourceParams, theta2: float,
                      channel: Optional[ChannelParams] = None) -> Scenario:
    return scenario_from_state(cfg, teleport_state(cfg, src, theta2, channel))


def scenario_from_state(cfg: ExperimentConfig, state: FockState) -> Scenario:
    """Herald and analyzer labels for a state already at the detectors."""
    model = build_click_model(state, cfg.det, teleport_mode_map())

    def classify(p):
        if classify_heralding(p.restricted((1, 2)), cfg.herald_order) is None:
            return "no_herald"
        a = classify_analysis(p.restricted((3, 4)))
        return "herald_only" if a == "none" else a

    return Scenario(model, TELEPORT_LABELS, _label_table(model, cfg, TELEPORT_LABELS, classify))


def hom_xi(cfg: ExperimentConfig, delay_ps: float, xi0: Optional[float] = None) -> float:
    xi0 = cfg.source.overlap_xi if xi0 is None else xi0
    tau_c = cfg.hom.coherence_ps / math.sqrt(8.0 * math.log(2.0))
    return xi0 * math.exp(-delay_ps ** 2 / (2.0 * tau_c ** 2))


def hom_scenario(cfg: ExperimentConfig, xi: float) -> Scenario:
    """Both MZIs and the fiber removed; the input occupies one time bin only."""
    s = cfg.hom.slot
    src = replace(cfg.source, overlap_xi=xi, time_bin=s)
    state = source_chain(cfg, src, input_mu=cfg.source.mu_input * cfg.hom.input_gain)
    model = build_click_model(state, cfg.det, hom_mode_map())

    def classify(p):
        if cfg.hom.window == "same_slot":
            double = (1, s) in p.clicks and (2, s) in p.clicks
            triple = double and (3, s) in p.clicks
        else:
            double = bool(p.slots(1)) and bool(p.slots(2))
            triple = double and bool(p.slots(3))
        return "triple" if triple else ("double_only" if double else "other")

    return Scenario(model, HOM_LABELS, _label_table(model, cfg, HOM_LABELS, classify))


# --- acquisition -------------------------------------------------------------------

def acquire(cfg: ExperimentConfig, scen: Scenario, n_cycles: int, key: Tuple[int, ...]) -> np.ndarray:
    """Counts per label over n_cycles: expectations, or samples keyed by (seed, key)."""
    probs = scen.probabilities
    if cfg.engine == "exact":
        return probs * n_cycles
    counts = np.zeros(len(scen.labels), dtype=np.int64)
    if n_cycles <= cfg.direct_mc_max_cycles:
        for blk, start in enumerate(range(0, n_cycles, MC_BLOCK)):
            rng = stream(cfg.seed, *key, blk)
            masks = sample_raw_masks(scen.model, min(MC_BLOCK, n_cycles - start), rng)
            counts += np.bincount(scen.label_of_mask[masks], minlength=len(scen.labels))
        return counts
    # cycles are i.i.d., so the label tallies are exactly multinomial
    rng = stream(cfg.seed, *key)
    return rng.multinomial(n_cycles, probs / probs.sum()).astype(np.int64)


# --- HOM -----------------------------------------------------------------------------

@dataclass(frozen=True)
class HomPoint:
    delay_ps: float
    xi: float
    probability: float  # triple-coincidence probability per cycle
    counts: float
    doubles: float


def run_hom_scan(cfg: ExperimentConfig, delays_ps: Optional[Sequence[float]] = None) -> List[HomPoint]:
    delays = list(cfg.hom.delays_ps if delays_ps is None else delays_ps)
    n = cfg.n_cycles(cfg.hom.acquisition_s)

    def point(i):
        xi = hom_xi(cfg, delays[i])
        scen = hom_scenario(cfg, xi)
        c = acquire(cfg, scen, n, (TAG_HOM, i))
        k = HOM_LABELS.index
        return HomPoint(delays[i], xi, scen.probability("triple"), c[k("triple")],
                        c[k("triple")] + c[k("double_only")])

    return _parallel_map(point, range(len(delays)), cfg.threads)


def hom_visibility_exact(cfg: ExperimentConfig, xi0: float) -> float:
    """Dip depth (max - min)/max between the distinguishable limit and zero delay."""
    far = hom_scenario(cfg, 0.0).probability("triple")
    near = hom_scenario(cfg, xi0).probability("triple")
    return (far - near) / far


def calibrate_xi0(cfg: ExperimentConfig, target: float = 0.769,
                  bracket: Tuple[float, float] = (0.8, 1.0)) -> Tuple[Optional[float], float]:
    """Overlap xi0 in `bracket` whose exact dip visibility equals `target`.

    Returns (None, V at the upper bracket) when the target is out of reach.
    """
    f = lambda x: hom_visibility_exact(cfg, x) - target
    lo, hi = f(bracket[0]), f(bracket[1])
    if lo * hi > 0:
        return None, hi + target
    xi0 = brentq(f, *bracket, xtol=1e-10)
    return xi0, f(xi0) + target


# --- fringe scan ---------------------------------------------------------------------

@dataclass(frozen=True)
class FringePoint:
    theta1: float
    counts3: float
    counts4: float
    heralds: float
    ambiguous: float


def run_fringe_scan(cfg: ExperimentConfig, theta1: Optional[Sequence[float]] = None) -> List[FringePoint]:
    phases = list(cfg.fringe.theta1 if theta1 is None else theta1)
    channel = replace(cfg.channel, length_km=cfg.fringe.length_km)
    n = cfg.n_cycles(cfg.fringe.acquisition_s)
    k = TELEPORT_LABELS.index

    def point(i):
        src = replace(cfg.source, theta1=phases[i], time_bin=None)
        c = acquire(cfg, teleport_scenario(cfg, src, cfg.fringe.theta2, channel), n, (TAG_FRINGE, i))
        heralds = sum(c[k(x)] for x in ANALYSIS_OUTCOMES + ("ambiguous", "herald_only"))
        return FringePoint(phases[i], c[k("proj_plus_theta2")], c[k("proj_minus_theta2")],
                           heralds, c[k("ambiguous")])

    return _parallel_map(point, range(len(phases)), cfg.threads)


# --- QST -----------------------------------------------------------------------------

def input_source(cfg: ExperimentConfig, label: str) -> SourceParams:
    """Source settings preparing the named input state (time states bypass MZI1)."""
    if label in ("1", "2"):
        return replace(cfg.source, time_bin=int(label))
    q = standard_states()[label]
    phase = float(np.angle(q.beta / q.alpha))
    return replace(cfg.source, theta1=phase, time_bin=None)


def run_qst(cfg: ExperimentConfig, states: Optional[Sequence[str]] = None) -> Dict[str, CountTable]:
    labels = list(cfg.qst.states if states is None else states)
    n = cfg.n_cycles(cfg.acquisition_s)
    jobs = [(i, j) for i in range(len(labels)) for j in range(2)]

    def job(ij):
        i, j = ij
        scen = teleport_scenario(cfg, input_source(cfg, labels[i]), cfg.qst.theta2[j])
        return acquire(cfg, scen, n, (TAG_QST, i, j))

    results = dict(zip(jobs, _parallel_map(job, jobs, cfg.threads)))
    return {name: qst_table(cfg, (results[(i, 0)], results[(i, 1)]), 2 * n)
            for i, name in enumerate(labels)}


def qst_table(cfg: ExperimentConfig, per_setting: Sequence[np.ndarray], total_cycles: int) -> CountTable:
    """Merge the TELEPORT_LABELS tallies of the two MZI2 settings into projection counts."""
    k = TELEPORT_LABELS.index
    cast = int if cfg.engine == "monte_carlo" else float
    counts: Dict[str, float] = {}
    diag: Dict[str, float] = {}
    for j, c in enumerate(per_setting):
        for outcome, proj in PROJECTION_OF[j].items():
            counts[proj] = counts.get(proj, 0) + c[k(outcome)]
        diag[f"ambiguous_theta2_{j}"] = c[k("ambiguous")]
        diag[f"herald_only_theta2_{j}"] = c[k("herald_only")]
    return CountTable({key: cast(v) for key, v in counts.items()}, total_cycles,
                      {key: cast(v) for key, v in diag.items()})


def projection_set(cfg: ExperimentConfig) -> ProjectionSet:
    return analyzer_projection_set(cfg.det.eta(3), cfg.det.eta(4), cfg.qst.efficiency_weighted)


def teleport_target(label: str) -> TimeBinQubit:
    """Expected idler output before correction (the Psi- branch of the input)."""
    return psi_minus_branch(standard_states()[label])


@dataclass(frozen=True)
class StateReport:
    label: str
    fit: MLEResult
    fidelity: float
    sigma: float
    counts_per_projection: float


def analyze_qst(cfg: ExperimentConfig, tables: Dict[str, CountTable],
                resamples: Optional[int] = None) -> Dict[str, StateReport]:
    """MLE and fidelity (Poisson bootstrap sigma) against the Psi- branch of each input."""
    proj = projection_set(cfg)
    resamples = cfg.bootstrap_resamples if resamples is None else resamples
    names = list(tables)

    def one(i):
        name = names[i]
        table = tables[name]
        target = teleport_target(name)
        fit = mle_fit(table, proj, cfg.mle_restarts, stream(cfg.seed, TAG_BOOTSTRAP, i, 0),
                      cfg.mle_max_iter)
        rng = stream(cfg.seed, TAG_BOOTSTRAP, i, 1)
        fids = []
        for _ in range(resamples):
            sample = resample_counts(table, rng)
            if sample.total == 0:
                continue
            fids.append(fidelity(mle_fit(sample, proj, cfg.mle_restarts, rng, cfg.mle_max_iter).rho,
                                 target))
        sigma = float(np.std(fids, ddof=1)) if len(fids) > 1 else 0.0
        return StateReport(name, fit, fidelity(fit.rho, target), sigma, table.total / 6)

    return dict(zip(names, _parallel_map(one, range(len(names)), cfg.threads)))


def corrected_fidelity(report: StateReport) -> float:
    """Fidelity after applying the Psi- correction, against the original input."""
    return fidelity(correct_density(report.fit.rho), standard_states()[report.label])


# --- fitting ------------------------------------------------------------------------

@dataclass(frozen=True)
class VisibilityFit:
    visibility: float
    phase: float
    amplitude: float
    sigma: float
    degenerate: bool = False
    extras: Dict[str, float] = field(default_factory=dict)


def _fit_fringe_once(x, y):
    design = np.column_stack([np.ones_like(x), np.cos(x), np.sin(x)])
    (a, b, c), *_ = np.linalg.lstsq(design, y, rcond=None)
    # a + b cos x + c sin x = a (1 + V cos(x + phi))
    amp = math.hypot(b, c)
    phi = math.atan2(-c, b)
    v = amp / a if a > 0 else 0.0
    return v, phi, a, {}


def _dip_model(x, a, v, x0, w):
    return a * (1.0 - v * np.exp(-(x - x0) ** 2 / (2.0 * w ** 2)))


def _fit_dip_once(x, y, width_guess):
    p0 = [float(y.max()), 1.0 - float(y.min()) / float(y.max()), float(x[np.argmin(y)]), width_guess]
    params, _ = curve_fit(_dip_model, x, y, p0=p0, maxfev=20000,
                          bounds=([0.0, -1.0, x.min(), 1e-3 * width_guess],
                                  [np.inf, 1.0, x.max(), 100.0 * width_guess]))
    a, v, x0, w = params
    # flat-minus-Gaussian: max = a, min = a(1 - v), so (max - min)/max = v
    return float(v), float(x0), float(a), {"center": float(x0), "width": float(w)}


def fit_visibility(x: Sequence[float], counts: Sequence[float], kind: str = "fringe",
                   resamples: int = 1000, rng: Optional[np.random.Generator] = None,
                   width_guess: float = 10.0) -> VisibilityFit:
    """Fit a fringe A(1 + V cos(x + phi)) or a flat-minus-Gaussian HOM dip.

    Fringe V = (max - min)/(max + min) of the fitted curve; dip V = (max - min)/max.
    V_sigma is the spread over Poisson resamples of the counts.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(counts, dtype=float)
    if len(x) < 4:
        raise ValueError("need at least 4 points")
    if np.ptp(y) == 0:
        return VisibilityFit(0.0, 0.0, float(y.mean()) if len(y) else 0.0, 0.0, True)
    once = _fit_fringe_once if kind == "fringe" else (lambda a, b: _fit_dip_once(a, b, width_guess))
    v, phi, amp, extras = once(x, y)
    rng = rng or np.random.default_rng(0)
    boots = []
    for _ in range(resamples):
        yb = rng.poisson(y).astype(float)
        if np.ptp(yb) == 0:
            boots.append(0.0)
            continue
        try:
            boots.append(once(x, yb)[0])
        except RuntimeError:  # curve_fit failed on this resample
            continue
    sigma = float(np.std(boots, ddof=1)) if len(boots) > 1 else 0.0
    return VisibilityFit(float(v), float(phi), float(amp), sigma, False, extras)


def wrap_phase(phi: float) -> float:
    return (phi + math.pi) % (2 * math.pi) - math.pi


# --- end-to-end reproduction ----------------------------------------------------------

REFERENCE_TARGETS = {
    "hom_visibility": 0.769,
    "fringe_visibility_det3": 0.605,
    "fringe_visibility_det4": 0.575,
    "average_fidelity": 0.837,
    "counts_per_projection": 170.0,
}


def paper_reproduction(cfg: ExperimentConfig, resamples: Optional[int] = None) -> Dict:
    """Calibrate xi0 on the HOM dip, then run the fringe scan and six-state QST."""
    xi0, v_exact = calibrate_xi0(cfg, REFERENCE_TARGETS["hom_visibility"])
    cal = replace(cfg, source=replace(cfg.source, overlap_xi=1.0 if xi0 is None else xi0))
    resamples = cfg.bootstrap_resamples if resamples is None else resamples

    hom = run_hom_scan(cal)
    hom_fit = fit_visibility([p.delay_ps for p in hom], [p.counts for p in hom], "dip",
                             resamples, stream(cfg.seed, TAG_BOOTSTRAP, 100),
                             width_guess=cfg.hom.coherence_ps / math.sqrt(8 * math.log(2)))
    fringe = run_fringe_scan(cal)
    x = [p.theta1 for p in fringe]
    f3 = fit_visibility(x, [p.counts3 for p in fringe], "fringe", resamples,
                        stream(cfg.seed, TAG_BOOTSTRAP, 101))
    f4 = fit_visibility(x, [p.counts4 for p in fringe], "fringe", resamples,
                        stream(cfg.seed, TAG_BOOTSTRAP, 102))
    tables = run_qst(cal)
    reports = analyze_qst(cal, tables, resamples)
    fids = np.array([r.fidelity for r in reports.values()])
    sigmas = np.array([r.sigma for r in reports.values()])
    avg = float(fids.mean())
    avg_sigma = float(math.sqrt((sigmas ** 2).sum()) / len(sigmas))
    per_proj = float(np.mean([r.counts_per_projection for r in reports.values()]))
    return {
        "xi0": xi0,
        "hom_visibility_exact": v_exact,
        "hom": hom,
        "hom_fit": hom_fit,
        "fringe": fringe,
        "fringe_fit": (f3, f4),
        "fringe_phase_difference": abs(wrap_phase(f3.phase - f4.phase)),
        "tables": tables,
        "reports": reports,
        "average_fidelity": avg,
        "average_fidelity_sigma": avg_sigma,
        "classical_margin_sigmas": (avg - CLASSICAL_FIDELITY_BOUND) / avg_sigma if avg_sigma else math.inf,
        "counts_per_projection": per_proj,
        "converged": all(r.fit.converged for r in reports.values()),
    }
