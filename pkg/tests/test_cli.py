import json
import os

import pytest

from teleport_sim.cli import main, paper_config
from teleport_sim.config import DEFAULT_FLAT, ConfigError, ExperimentConfig, load_config

IDEAL = {
    "det.efficiency_1": 1.0, "det.efficiency_2": 1.0, "det.efficiency_3": 1.0, "det.efficiency_4": 1.0,
    "det.dark_rate_cps": 0.0, "channel.loss_bsm_path_db": 0.0, "channel.loss_mzi2_db": 0.0,
    "channel.length_km": 0.0, "source.mu_pair": 1e-8, "source.mu_input": 1e-4,
    "fock.per_mode_cutoff": 4, "fock.total_cutoff": 4, "run.bootstrap_resamples": 20,
}
QUICK_MC = {
    "run.engine": "monte_carlo", "fock.per_mode_cutoff": 4, "fock.total_cutoff": 4,
    "run.bootstrap_resamples": 20, "run.acquisition_s": 2.0, "hom.acquisition_s": 0.05,
    "fringe.acquisition_s": 0.05, "source.mu_pair": 0.04, "source.mu_input": 0.04,
    "channel.length_km": 5.0, "fringe.theta1": [0.0, 1.5, 3.0, 4.5, 6.0],
}


def write_cfg(tmp_path, flat, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(flat))
    return str(p)


def read_dir(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d)) if f != "manifest.json"}


def test_print_defaults_round_trip(capsys):
    assert main(["--print-defaults"]) == 0
    flat = json.loads(capsys.readouterr().out)
    assert flat == DEFAULT_FLAT
    assert ExperimentConfig.from_flat(flat) == ExperimentConfig()


def test_round_trip_of_modified_config():
    cfg = ExperimentConfig().with_updates(**{"source.overlap_xi": 0.93, "qst.states": ["L"],
                                             "channel.loss_connectors_db": 0.5})
    assert ExperimentConfig.from_flat(json.loads(json.dumps(cfg.to_flat()))) == cfg


@pytest.mark.parametrize("flat, field", [
    ({"source.mu_pairs": 0.1}, "source.mu_pairs"),
    ({"det.efficiency_2": "high"}, "det.efficiency_2"),
    ({"run.seed": 1.5}, "run.seed"),
    ({"hom.delays_ps": 3}, "hom.delays_ps"),
    ({"qst.states": ["Q"]}, "qst.states"),
    ({"qst.efficiency_weighted": 1}, "qst.efficiency_weighted"),
])
def test_bad_fields_are_named(flat, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        ExperimentConfig.from_flat(flat)


@pytest.mark.parametrize("flat", [
    {"run.acquisition_s": 0}, {"fringe.theta1": []}, {"run.engine": "fast"},
    {"source.overlap_xi": 1.5}, {"det.efficiency_1": 2.0}, {"run.threads": 0},
])
def test_invalid_values_rejected(flat):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_flat(flat)


def test_malformed_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "source.mu_pair": 0.01,\n  "run.seed": ,\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(p)
    assert main(["hom", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "line 3" in capsys.readouterr().err


def test_missing_config_is_config_error(tmp_path):
    assert main(["fringe", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 1


def test_qst_ideal_limit(tmp_path):
    out = tmp_path / "qst"
    assert main(["qst", write_cfg(tmp_path, IDEAL), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    for name, r in report["states"].items():
        assert r["fidelity"] >= 0.999, name
    for f in ("counts_plus.json", "rho_minus.json", "counts_1.json", "rho_L.json", "manifest.json"):
        assert (out / f).exists()


def test_manifest_embeds_reparseable_config(tmp_path):
    out = tmp_path / "h"
    path = write_cfg(tmp_path, QUICK_MC)
    assert main(["hom", path, "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert ExperimentConfig.from_flat(man["config"]) == load_config(path)
    assert man["outputs"] == ["hom.csv", "hom_fit.json"]
    assert man["seed"] == load_config(path).seed and man["engine"] == "monte_carlo"
    for key in ("code_version", "start_time", "end_time"):
        assert key in man


def test_output_formats(tmp_path):
    out = tmp_path / "f"
    assert main(["fringe", write_cfg(tmp_path, QUICK_MC), "--out", str(out)]) == 0
    raw = (out / "fringe.csv").read_bytes()
    assert b"\r" not in raw
    assert raw.splitlines()[0] == b"theta1,counts_det3,counts_det4,heralds,ambiguous"
    text = (out / "fringe_fit.json").read_text(encoding="utf-8")
    obj = json.loads(text)
    assert text == json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


@pytest.mark.parametrize("cmd", ["hom", "fringe", "qst"])
def test_same_seed_identical_across_threads(tmp_path, cmd):
    path = write_cfg(tmp_path, QUICK_MC)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([cmd, path, "--out", str(a)]) == 0
    assert main([cmd, path, "--out", str(b), "--threads", "3"]) == 0
    assert read_dir(a) == read_dir(b)


def test_different_seed_changes_monte_carlo(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["fringe", write_cfg(tmp_path, QUICK_MC), "--out", str(a)]) == 0
    assert main(["fringe", write_cfg(tmp_path, {**QUICK_MC, "run.seed": 1}, "c2.json"),
                 "--out", str(b)]) == 0
    assert read_dir(a)["fringe.csv"] != read_dir(b)["fringe.csv"]


def test_non_convergence_exit_code(tmp_path):
    flat = {**QUICK_MC, "run.mle_max_iter": 1, "qst.states": ["+"], "run.bootstrap_resamples": 2}
    assert main(["qst", write_cfg(tmp_path, flat), "--out", str(tmp_path / "q")]) == 2
    assert (tmp_path / "q" / "manifest.json").exists()


def test_tomography_subcommand(tmp_path):
    counts = tmp_path / "counts.json"
    counts.write_text(json.dumps({"counts": {"+": 10, "-": 90, "L": 50, "R": 50, "1": 50, "2": 50}}))
    out = tmp_path / "t"
    assert main(["tomography", str(counts), "--target", "+", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["converged"] and rep["fidelity"] == pytest.approx(0.9, abs=0.02)
    bad = tmp_path / "bad.json"
    bad.write_text('{"counts": {"Z": 1}}')
    assert main(["tomography", str(bad), "--out", str(out)]) == 1


def test_bundled_paper_config():
    cfg = paper_config()
    assert cfg.engine == "monte_carlo"
    assert cfg.source.mu_pair == 0.016 and cfg.channel.length_km == 102
    assert cfg.acquisition_s == 6000 and cfg.fringe.acquisition_s == 120


def test_no_subcommand_is_usage_error():
    assert main([]) == 1
