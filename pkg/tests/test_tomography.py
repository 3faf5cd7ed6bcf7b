import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teleport_sim.counts import CountTable
from teleport_sim.qubit import DensityMatrix, TimeBinQubit, fidelity, standard_states
from teleport_sim.tomography import (Projection, ProjectionSet, analyzer_projection_set, born_counts,
                                     fidelity_with_error, linear_reconstruct, log_likelihood,
                                     mle_fit, mle_reconstruct, physical_projection, sample_counts,
                                     standard_projection_set)

STD = standard_projection_set()


def table(**kw):
    return CountTable({k.replace("p", "+").replace("m", "-") if len(k) == 1 else k: v
                       for k, v in kw.items()})


def counts(d):
    return CountTable(d)


def random_qubit(rng):
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return TimeBinQubit.from_amplitudes(*v)


def random_rho(rng, max_r=1.0):
    r = rng.normal(size=3)
    r *= rng.uniform(0, max_r) / np.linalg.norm(r)
    return DensityMatrix.from_bloch(r)


def test_count_table_validation():
    with pytest.raises(ValueError):
        CountTable({"X": 1})
    with pytest.raises(ValueError):
        CountTable({"+": -1})
    t = CountTable({"+": 3}, 10, {"ambiguous": 2})
    assert CountTable.from_json(t.to_json()) == t
    assert t["-"] == 0 and t.total == 3


def test_projection_set_completeness_checked():
    st6 = standard_states()
    bad = [Projection(k, st6[k]) for k in ("+", "-", "L", "R", "1")] + [Projection("2", st6["+"])]
    with pytest.raises(ValueError):
        ProjectionSet(tuple(bad))
    with pytest.raises(ValueError):
        ProjectionSet(tuple(Projection(k, st6[k]) for k in ("+", "-", "L", "R", "1")))


def test_linear_examples():
    rho = linear_reconstruct(counts({"+": 100, "-": 0, "L": 50, "R": 50, "1": 50, "2": 50}))
    assert fidelity(rho, standard_states()["+"]) == pytest.approx(1)
    rho = linear_reconstruct(counts({k: 10 for k in "+-LR12"}))
    assert np.allclose(rho.entries, np.eye(2) / 2)
    rho = linear_reconstruct(counts({"+": 90, "-": 10, "L": 50, "R": 50, "1": 50, "2": 50}))
    assert np.allclose(rho.bloch, [0.8, 0, 0])
    with pytest.raises(ValueError):
        linear_reconstruct(counts({"+": 0, "-": 0, "L": 1, "R": 1, "1": 1, "2": 1}))


def test_linear_may_be_nonphysical():
    rho = linear_reconstruct(counts({"+": 100, "-": 0, "L": 100, "R": 0, "1": 50, "2": 50}))
    assert not rho.is_physical
    assert np.trace(rho.entries) == pytest.approx(1)


@pytest.mark.parametrize("weighted", [False, True])
def test_round_trips(weighted):
    rng = np.random.default_rng(4)
    proj = analyzer_projection_set(0.86, 0.81) if weighted else STD
    for _ in range(20):
        rho = random_rho(rng)
        c = born_counts(rho, proj, 1000.0)
        lin = linear_reconstruct(c, proj)
        assert np.max(np.abs(lin.entries - rho.entries)) < 1e-12
        fit = mle_fit(c, proj, rng=rng)
        assert fit.converged
        assert fit.rho.trace_distance(rho) < 1e-6


def test_pure_state_round_trip():
    for q in standard_states().values():
        rho = mle_reconstruct(born_counts(DensityMatrix.from_qubit(q), STD, 600.0), STD)
        assert fidelity(rho, q) >= 1 - 1e-6


def test_high_count_reconstruction_fidelity():
    rng = np.random.default_rng(11)
    for _ in range(10):
        q = random_qubit(rng)
        c = sample_counts(DensityMatrix.from_qubit(q), STD, 1e5, rng)
        assert fidelity(mle_reconstruct(c, STD, rng=rng), q) >= 0.995


def test_maximally_mixed_at_1e4_counts():
    rng = np.random.default_rng(5)
    for _ in range(10):
        c = sample_counts(DensityMatrix.maximally_mixed(), STD, 1e4 / 3, rng)
        rho = mle_reconstruct(c, STD, rng=rng)
        assert rho.trace_distance(DensityMatrix.maximally_mixed()) < 0.05


def test_mle_agrees_with_physical_linear_estimate():
    rng = np.random.default_rng(6)
    done = 0
    while done < 10:
        rho = random_rho(rng, 0.9)
        c = sample_counts(rho, STD, 1e5, rng)
        lin = linear_reconstruct(c, STD)
        if not lin.is_physical:
            continue
        assert mle_reconstruct(c, STD, rng=rng).trace_distance(lin) < 0.02
        done += 1


count = st.integers(min_value=0, max_value=400)


@settings(max_examples=150, deadline=None)
@given(st.lists(count, min_size=6, max_size=6).filter(lambda x: sum(x) > 0), st.booleans())
def test_mle_always_physical(values, weighted):
    proj = analyzer_projection_set(0.86, 0.81) if weighted else STD
    c = counts(dict(zip("+-LR12", values)))
    fit = mle_fit(c, proj)
    assert fit.rho.is_physical
    assert fit.rho.eigenvalues.min() >= -1e-9
    assert np.trace(fit.rho.entries).real == pytest.approx(1, abs=1e-9)
    try:
        lin = physical_projection(linear_reconstruct(c, proj))
    except ValueError:
        return
    assert fit.log_likelihood >= log_likelihood(c, lin, proj) - 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(count, min_size=6, max_size=6).filter(lambda x: sum(x) > 0),
       st.integers(2, 50))
def test_argmax_invariant_under_count_scaling(values, factor):
    c = counts(dict(zip("+-LR12", values)))
    scaled = counts({k: v * factor for k, v in c.counts.items()})
    a, b = mle_reconstruct(c, STD), mle_reconstruct(scaled, STD)
    assert a.trace_distance(b) < 1e-4


def test_mle_requires_counts():
    with pytest.raises(ValueError):
        mle_fit(counts({}))


def test_fidelity_error_shrinks_for_ideal_counts():
    plus = standard_states()["+"]
    rho = DensityMatrix.from_qubit(plus)
    f_small, s_small = fidelity_with_error(born_counts(rho, STD, 300), STD, plus, 100)
    f_big, s_big = fidelity_with_error(born_counts(rho, STD, 3e6), STD, plus, 100)
    assert f_small == pytest.approx(1, abs=1e-6) and f_big == pytest.approx(1, abs=1e-6)
    assert s_big < s_small / 10
    assert s_big < 1e-4


def test_bootstrap_sigma_stable_across_seeds():
    target = standard_states()["+"]
    rho = DensityMatrix.from_bloch([0.67, 0, 0])
    c = born_counts(rho, STD, 170 * 3)
    sig = [fidelity_with_error(c, STD, target, 1000, np.random.default_rng(s), restarts=3)[1]
           for s in range(4)]
    mean = np.mean(sig)
    assert max(abs(s - mean) for s in sig) <= 0.1 * mean


def test_efficiency_weights():
    p = analyzer_projection_set(0.86, 0.81)
    assert p["+"].weight == 0.86 and p["R"].weight == 0.81
    assert p["1"].weight == pytest.approx(1.67)
    u = analyzer_projection_set(0.86, 0.81, efficiency_weighted=False)
    assert u["L"].weight == 1.0 and u["2"].weight == 2.0
