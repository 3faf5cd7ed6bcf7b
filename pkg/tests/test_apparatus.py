import csv
import math

import numpy as np
import pytest

from oracles import mzi2_amplitudes
from teleport_sim.apparatus import (PSI_MINUS, ChannelParams, ClickPattern, DetectorParams,
                                    bsm_mode_map, bsm_path_loss, bsm_transform, build_click_model,
                                    classify_analysis, classify_heralding, click_distribution,
                                    dead_time_filter, fiber_loss, heralded_idler_qubit, mzi2_map,
                                    mzi2_transform, port_mode, teleport_mode_map, write_event_stream)
from teleport_sim.fock import FockState, ModeRegistry, normalize, photon_number_sector, tensor
from teleport_sim.qubit import psi_minus_branch, same_state, standard_states
from teleport_sim.sources import (BINS, INTERNAL, SourceParams, build_input_state, build_spdc_state,
                                  idler_mode, input_mode, input_registry, pair_registry, signal_mode)

IDEAL_DET = DetectorParams((1, 1, 1, 1), dark_rate_cps=0.0)


def bsm_registry():
    modes = [signal_mode(b, k) for b in BINS for k in INTERNAL] + \
            [input_mode(b, k) for b in BINS for k in INTERNAL]
    return ModeRegistry(tuple(modes), 2, 4)


def two_photons(sig, inp):
    reg = bsm_registry()
    return FockState.from_occupations(reg, {_key(reg, sig, inp): 1})


def _key(reg, sig, inp):
    occ = [0] * len(reg)
    for m in (sig, inp):
        if m is not None:
            occ[reg.index(m)] += 1
    return tuple(occ)


def test_detector_and_channel_defaults():
    det = DetectorParams()
    assert det.dark_probability == pytest.approx(1e-7)
    ch = ChannelParams(extra_loss_db={"mzi2": 0.0, "connectors": 0.0, "bsm_path": 0.0})
    assert ch.idler_survival == pytest.approx(10 ** -2.142)
    assert ch.idler_survival == pytest.approx(0.0072, abs=5e-5)
    zero = ChannelParams(length_km=0)
    assert zero.idler_survival == pytest.approx(10 ** -0.2)
    double = ChannelParams(length_km=204, extra_loss_db={"mzi2": 0.0})
    assert double.idler_survival == pytest.approx(ch.idler_survival ** 2)
    with pytest.raises(ValueError):
        DetectorParams((1.1, 1, 1, 1))
    with pytest.raises(ValueError):
        ChannelParams(length_km=-1)


def cross_coincidence_same_bin(state, b):
    dist = click_distribution(state, IDEAL_DET, bsm_mode_map())
    return sum(p for pat, p in dist.items() if (1, b) in pat.clicks and (2, b) in pat.clicks)


def test_matched_photons_bunch():
    s = bsm_transform(two_photons(signal_mode(1), input_mode(1)))
    assert cross_coincidence_same_bin(s, 1) == pytest.approx(0, abs=1e-24)


def test_orthogonal_photons_split_half():
    s = bsm_transform(two_photons(signal_mode(1), input_mode(1, "orthogonal")))
    assert cross_coincidence_same_bin(s, 1) == pytest.approx(0.5, abs=1e-12)


def test_different_bins_independent():
    s = bsm_transform(two_photons(signal_mode(1), input_mode(2)))
    no_dead = DetectorParams((1, 1, 1, 1), dark_rate_cps=0.0, dead_time_ns=0.0)
    dist = click_distribution(s, no_dead, bsm_mode_map())
    for d1 in (1, 2):
        for d2 in (1, 2):
            pat = ClickPattern(frozenset({(d1, 1), (d2, 2)}))
            assert dist[pat] == pytest.approx(0.25, abs=1e-12)


def test_mzi2_map_matches_composed_couplers():
    for theta in (0.0, 0.9, math.pi / 2, 4.0):
        ours = mzi2_map(theta)
        ref = mzi2_amplitudes(theta)
        for b in BINS:
            got = {(int(m.spatial[-1]), m.slot): c for m, c in ours[idler_mode(b)]}
            assert set(got) == set(ref[b])
            for k in got:
                assert got[k] == pytest.approx(ref[b][k], abs=1e-15)


def idler_qubit_state(alpha, beta):
    reg = ModeRegistry((idler_mode(1), idler_mode(2)), 2, 4)
    return FockState.from_occupations(reg, {(1, 0): alpha, (0, 1): beta})


def port_probabilities(state):
    from teleport_sim.fock import measure_number_distribution
    ports = [port_mode(d, s) for d in (3, 4) for s in (1, 2, 3)]
    dist = measure_number_distribution(state, ports)
    return {pm: sum(p for occ, p in dist.items() if occ[i]) for i, pm in enumerate(ports)}


def test_time_state_never_reaches_slot3():
    p = port_probabilities(mzi2_transform(idler_qubit_state(1, 0), 0.3))
    assert p[port_mode(3, 3)] == 0 and p[port_mode(4, 3)] == 0
    assert sum(p.values()) == pytest.approx(1)


@pytest.mark.parametrize("theta1", [0.0, 1.1, 2.5])
def test_slot2_interference(theta1):
    s = 1 / math.sqrt(2)
    q = idler_qubit_state(s, s * np.exp(1j * theta1))
    p = port_probabilities(mzi2_transform(q, theta1))
    assert p[port_mode(3, 2)] == pytest.approx(0.5, abs=1e-12)
    assert p[port_mode(4, 2)] == pytest.approx(0.0, abs=1e-12)
    p = port_probabilities(mzi2_transform(q, theta1 + math.pi))
    assert p[port_mode(3, 2)] == pytest.approx(0.0, abs=1e-12)
    assert p[port_mode(4, 2)] == pytest.approx(0.5, abs=1e-12)


def test_single_photon_click_probability():
    det = DetectorParams((0.7, 1, 1, 1), dark_rate_cps=0.0)
    reg = ModeRegistry((signal_mode(1),), 2, 4)
    s = FockState.from_occupations(reg, {(1,): 1})
    dist = click_distribution(s, det, {signal_mode(1): (1, 1)})
    assert dist[ClickPattern(frozenset({(1, 1)}))] == pytest.approx(0.7)


def test_consecutive_slots_cannot_both_click():
    reg = ModeRegistry((signal_mode(1), signal_mode(2)), 2, 4)
    s = FockState.from_occupations(reg, {(1, 1): 1})
    dist = click_distribution(s, IDEAL_DET, {signal_mode(1): (1, 1), signal_mode(2): (1, 2)})
    assert dist == {ClickPattern(frozenset({(1, 1)})): pytest.approx(1.0)}


def test_vacuum_dark_click():
    reg = ModeRegistry((signal_mode(1),), 2, 4)
    dist = click_distribution(FockState.vacuum(reg), DetectorParams(), {signal_mode(1): (1, 1)})
    assert dist[ClickPattern(frozenset({(1, 1)}))] == pytest.approx(1e-7)


def test_dead_time_filter_rules():
    det = DetectorParams()
    p = ClickPattern(frozenset({(3, 1), (3, 3), (4, 2)}))
    assert dead_time_filter(p, det).clicks == {(3, 1), (4, 2)}
    short = DetectorParams(dead_time_ns=0.5)
    assert dead_time_filter(p, short) == p


def test_unmapped_mode_rejected():
    reg = ModeRegistry((signal_mode(1), idler_mode(1)), 2, 4)
    s = FockState.from_occupations(reg, {(1, 1): 1})
    with pytest.raises(ValueError):
        build_click_model(s, IDEAL_DET, {signal_mode(1): (1, 1)})


def test_heralding_classification():
    mk = lambda *c: ClickPattern(frozenset(c))
    assert classify_heralding(mk((1, 1), (2, 2))) == PSI_MINUS
    assert classify_heralding(mk((1, 2), (2, 1))) == PSI_MINUS
    assert classify_heralding(mk((1, 1), (2, 1))) is None
    assert classify_heralding(mk((1, 1))) is None
    assert classify_heralding(mk((1, 1), (2, 2)), "2then1") is None
    assert classify_heralding(mk((1, 2), (2, 1)), "2then1") == PSI_MINUS
    assert classify_heralding(mk((1, 2), (2, 1)), "1then2") is None


def test_analysis_classification():
    mk = lambda *c: ClickPattern(frozenset(c))
    assert classify_analysis(mk((3, 2))) == "proj_plus_theta2"
    assert classify_analysis(mk((4, 2))) == "proj_minus_theta2"
    assert classify_analysis(mk((4, 1))) == "proj_1"
    assert classify_analysis(mk((4, 3))) == "proj_2"
    assert classify_analysis(mk()) == "none"
    assert classify_analysis(mk((3, 1), (4, 2))) == "ambiguous"


def ideal_pair_and_photon(label, xi=1.0):
    q = standard_states()[label]
    if label in ("1", "2"):
        src = SourceParams(mu_pair=1e-6, mu_input=1e-6, overlap_xi=xi, time_bin=int(label))
    else:
        src = SourceParams(mu_pair=1e-6, mu_input=1e-6, overlap_xi=xi,
                           theta1=float(np.angle(q.beta / q.alpha)))
    s = tensor(build_spdc_state(src, pair_registry()), build_input_state(src, input_registry()))
    s, _ = normalize(s)
    s, _ = photon_number_sector(s, [signal_mode(b) for b in BINS], 1)
    s, _ = photon_number_sector(s, [input_mode(b, k) for b in BINS for k in INTERNAL], 1)
    return s


@pytest.mark.parametrize("label", ["1", "2", "+", "-", "L", "R"])
def test_herald_probability_and_state(label):
    s = bsm_transform(ideal_pair_and_photon(label))
    model_map = dict(bsm_mode_map())
    model_map[idler_mode(1)] = (3, 1)
    model_map[idler_mode(2)] = (3, 2)
    dist = click_distribution(s, IDEAL_DET, model_map)
    p = sum(v for pat, v in dist.items() if classify_heralding(pat.restricted((1, 2))) == PSI_MINUS)
    assert p == pytest.approx(0.25, abs=1e-9)
    # no Psi+ signature: same detector, both slots
    assert all(len(pat.slots(d)) < 2 for pat in dist for d in (1, 2))
    target = psi_minus_branch(standard_states()[label])
    for pat in (ClickPattern(frozenset({(1, 1), (2, 2)})), ClickPattern(frozenset({(1, 2), (2, 1)}))):
        q, _ = heralded_idler_qubit(s, pat)
        assert same_state(q, target)


def test_herald_probability_scales_with_efficiencies():
    det = DetectorParams((0.8, 0.86, 1, 1), dark_rate_cps=0.0)
    ch = ChannelParams()
    s = bsm_transform(bsm_path_loss(ideal_pair_and_photon("+"), ch))
    mm = dict(bsm_mode_map())
    mm[idler_mode(1)] = (3, 1)
    mm[idler_mode(2)] = (3, 2)
    dist = click_distribution(s, det, mm)
    p = sum(v for pat, v in dist.items() if classify_heralding(pat.restricted((1, 2))) == PSI_MINUS)
    assert p == pytest.approx(0.25 * 0.8 * 0.86 * ch.bsm_survival, rel=1e-9)


def test_click_distribution_sums_to_one():
    src = SourceParams(mu_pair=0.05, mu_input=0.05, overlap_xi=0.8, theta1=0.4)
    s, _ = normalize(tensor(build_spdc_state(src, pair_registry(4, 4)),
                            build_input_state(src, input_registry(4, 4))))
    s = mzi2_transform(fiber_loss(bsm_transform(s), ChannelParams(length_km=10)), 0.3)
    dist = click_distribution(s, DetectorParams(dark_rate_cps=1e5), teleport_mode_map())
    assert sum(dist.values()) == pytest.approx(1.0, abs=1e-9)


def test_event_stream_export(tmp_path):
    path = tmp_path / "events.csv"
    write_event_stream(path, [(0, ClickPattern(frozenset({(2, 1), (1, 2)}))), (5, ClickPattern())])
    rows = list(csv.reader(open(path)))
    assert rows == [["cycle", "detector", "slot"], ["0", "1", "2"], ["0", "2", "1"]]
    assert open(path, "rb").read().count(b"\r") == 0
