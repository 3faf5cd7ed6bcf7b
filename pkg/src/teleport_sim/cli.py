"""Command-line front end. Exit codes: 0 ok, 1 config error, 2 numerical failure."""

from __future__ import annotations

import argparse
import datetime as _dt
import io
import json
import math
import os
import sys
import tempfile
from importlib import resources
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from . import experiments as ex
from .config import ConfigError, ExperimentConfig, dumps_config, load_config
from .counts import CountTable
from .qubit import standard_states
from .tomography import mle_fit

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

STATE_FILE_NAMES = {"1": "1", "2": "2", "+": "plus", "-": "minus", "L": "L", "R": "R"}


class NumericalFailure(RuntimeError):
    pass


# --- deterministic writers -----------------------------------------------------------

def _num(x):
    """Plain Python scalar for CSV/JSON (repr of a float is round-trip exact)."""
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    obj = _num(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Outputs:
    """Result files for one run, all written atomically into `out`."""

    def __init__(self, out: str):
        os.makedirs(out, exist_ok=True)
        self.out = out
        self.files: List[str] = []

    def json(self, name: str, obj) -> None:
        self._write(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n")

    def csv(self, name: str, header: Sequence[str], rows) -> None:
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(repr(_num(v)) if isinstance(_num(v), float) else str(_num(v))
                               for v in row) + "\n")
        self._write(name, buf.getvalue())

    def _write(self, name, text):
        _atomic_write(os.path.join(self.out, name), text)
        self.files.append(name)

    def manifest(self, cfg: ExperimentConfig, command: str, started: str) -> None:
        """RunManifest: not itself a result file (it carries wall-clock times)."""
        manifest = {
            "command": command,
            "config": cfg.to_flat(),
            "seed": cfg.seed,
            "engine": cfg.engine,
            "code_version": __version__,
            "start_time": started,
            "end_time": _now(),
            "outputs": sorted(self.files),
        }
        _atomic_write(os.path.join(self.out, "manifest.json"),
                      json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _fit_json(fit: ex.VisibilityFit) -> Dict:
    return {"visibility": fit.visibility, "visibility_sigma": fit.sigma, "phase": fit.phase,
            "amplitude": fit.amplitude, "degenerate": fit.degenerate, **fit.extras}


# --- subcommand bodies ----------------------------------------------------------------

def write_hom(cfg: ExperimentConfig, out: Outputs, points=None) -> ex.VisibilityFit:
    points = points if points is not None else ex.run_hom_scan(cfg)
    out.csv("hom.csv", ["delay_ps", "xi", "counts_triple", "counts_double", "probability_triple"],
            [(p.delay_ps, p.xi, p.counts, p.doubles, p.probability) for p in points])
    tau = cfg.hom.coherence_ps / math.sqrt(8 * math.log(2))
    fit = ex.fit_visibility([p.delay_ps for p in points], [p.counts for p in points], "dip",
                            cfg.bootstrap_resamples, ex.stream(cfg.seed, ex.TAG_BOOTSTRAP, 100),
                            width_guess=tau)
    out.json("hom_fit.json", {"fit": _fit_json(fit), "xi0": cfg.source.overlap_xi,
                              "engine": cfg.engine, "window": cfg.hom.window})
    return fit


def write_fringe(cfg: ExperimentConfig, out: Outputs, points=None):
    points = points if points is not None else ex.run_fringe_scan(cfg)
    out.csv("fringe.csv", ["theta1", "counts_det3", "counts_det4", "heralds", "ambiguous"],
            [(p.theta1, p.counts3, p.counts4, p.heralds, p.ambiguous) for p in points])
    x = [p.theta1 for p in points]
    f3 = ex.fit_visibility(x, [p.counts3 for p in points], "fringe", cfg.bootstrap_resamples,
                           ex.stream(cfg.seed, ex.TAG_BOOTSTRAP, 101))
    f4 = ex.fit_visibility(x, [p.counts4 for p in points], "fringe", cfg.bootstrap_resamples,
                           ex.stream(cfg.seed, ex.TAG_BOOTSTRAP, 102))
    out.json("fringe_fit.json", {"det3": _fit_json(f3), "det4": _fit_json(f4),
                                 "phase_difference": abs(ex.wrap_phase(f3.phase - f4.phase)),
                                 "engine": cfg.engine})
    return f3, f4


def _state_report(rep: ex.StateReport) -> Dict:
    return {
        "fidelity": rep.fidelity,
        "fidelity_sigma": rep.sigma,
        "fidelity_corrected": ex.corrected_fidelity(rep),
        "target": {"re": ex.teleport_target(rep.label).vector.real.tolist(),
                   "im": ex.teleport_target(rep.label).vector.imag.tolist()},
        "eigenvalues": rep.fit.rho.eigenvalues.tolist(),
        "converged": rep.fit.converged,
        "log_likelihood": rep.fit.log_likelihood,
        "counts_per_projection": rep.counts_per_projection,
    }


def write_qst(cfg: ExperimentConfig, out: Outputs, tables=None, reports=None) -> Dict:
    tables = tables if tables is not None else ex.run_qst(cfg)
    reports = reports if reports is not None else ex.analyze_qst(cfg, tables)
    for name, table in tables.items():
        fname = STATE_FILE_NAMES[name]
        out.json(f"counts_{fname}.json", table.to_json())
        out.json(f"rho_{fname}.json", reports[name].fit.rho.to_json())
    fids = [r.fidelity for r in reports.values()]
    sig = [r.sigma for r in reports.values()]
    report = {
        "states": {name: _state_report(r) for name, r in reports.items()},
        "average_fidelity": float(np.mean(fids)),
        "average_fidelity_sigma": float(np.sqrt(np.sum(np.square(sig))) / len(sig)),
        "efficiency_weighted": cfg.qst.efficiency_weighted,
        "engine": cfg.engine,
    }
    out.json("report.json", report)
    if not all(r.fit.converged for r in reports.values()):
        raise NumericalFailure("MLE did not converge for at least one state")
    return report


def paper_config() -> ExperimentConfig:
    text = resources.files("teleport_sim").joinpath("paper_config.json").read_text(encoding="utf-8")
    return ExperimentConfig.from_flat(json.loads(text))


def write_paper_repro(cfg: ExperimentConfig, out: Outputs) -> List[Dict]:
    res = ex.paper_reproduction(cfg)
    cal = cfg.with_updates(**{"source.overlap_xi": res["xi0"] if res["xi0"] is not None else 1.0})
    write_hom(cal, out, res["hom"])
    write_fringe(cal, out, res["fringe"])
    t = ex.REFERENCE_TARGETS
    f3, f4 = res["fringe_fit"]
    rows = [
        {"quantity": "hom_visibility", "reference": t["hom_visibility"], "reference_sigma": 0.034,
         "simulated": res["hom_fit"].visibility, "simulated_sigma": res["hom_fit"].sigma},
        {"quantity": "fringe_visibility_det3", "reference": t["fringe_visibility_det3"], "reference_sigma": 0.050,
         "simulated": f3.visibility, "simulated_sigma": f3.sigma},
        {"quantity": "fringe_visibility_det4", "reference": t["fringe_visibility_det4"], "reference_sigma": 0.057,
         "simulated": f4.visibility, "simulated_sigma": f4.sigma},
        {"quantity": "average_fidelity", "reference": t["average_fidelity"], "reference_sigma": 0.020,
         "simulated": res["average_fidelity"], "simulated_sigma": res["average_fidelity_sigma"]},
        {"quantity": "counts_per_projection", "reference": t["counts_per_projection"], "reference_sigma": None,
         "simulated": res["counts_per_projection"], "simulated_sigma": None},
    ]
    write_qst(cal, out, res["tables"], res["reports"])
    # extra idler loss that would bring the mean counts to the quoted level (diagnostic only)
    ratio = res["counts_per_projection"] / t["counts_per_projection"]
    out.csv("comparison.csv", ["quantity", "reference", "reference_sigma", "simulated", "simulated_sigma"],
            [tuple("" if r[k] is None else r[k] for k in
                   ("quantity", "reference", "reference_sigma", "simulated", "simulated_sigma")) for r in rows])
    out.json("comparison.json", {
        "rows": rows, "xi0": res["xi0"], "hom_visibility_exact": res["hom_visibility_exact"],
        "fringe_phase_difference": res["fringe_phase_difference"],
        "classical_margin_sigmas": res["classical_margin_sigmas"],
        "idler_loss_db_to_match_counts": 10 * math.log10(ratio) if ratio > 0 else None,
    })
    return rows


def cmd_tomography(counts_path: str, cfg: ExperimentConfig, out: Outputs, target: Optional[str]):
    with open(counts_path, encoding="utf-8") as fh:
        try:
            table = CountTable.from_json(json.load(fh))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{counts_path}: {exc}") from None
    fit = mle_fit(table, ex.projection_set(cfg), cfg.mle_restarts,
                  ex.stream(cfg.seed, ex.TAG_BOOTSTRAP, 200), cfg.mle_max_iter)
    out.json("rho.json", fit.rho.to_json())
    report = {"eigenvalues": fit.rho.eigenvalues.tolist(), "converged": fit.converged,
              "log_likelihood": fit.log_likelihood}
    if target is not None:
        rep = ex.analyze_qst(cfg, {target: table})[target]
        report.update(_state_report(rep))
    out.json("report.json", report)
    if not fit.converged:
        raise NumericalFailure("MLE did not converge")


# --- argument handling ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teleport-sim", description=__doc__)
    p.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    sub = p.add_subparsers(dest="command")
    for name, helptext in (("hom", "HOM delay scan"), ("fringe", "teleportation fringe scan"),
                           ("qst", "six-state tomography run")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", nargs="?", help="flat JSON config (defaults if omitted)")
        sp.add_argument("--out", required=True)
        sp.add_argument("--threads", type=int)
    sp = sub.add_parser("paper_repro", help="paper-parameter run with comparison table")
    sp.add_argument("--config", help="override the bundled paper-parameter config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--threads", type=int)
    sp = sub.add_parser("tomography", help="reconstruct a state from a CountTable JSON")
    sp.add_argument("counts")
    sp.add_argument("--config")
    sp.add_argument("--target", choices=sorted(standard_states()), help="input-state label")
    sp.add_argument("--out", required=True)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(dumps_config(ExperimentConfig()))
        return EXIT_OK
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    started = _now()
    try:
        path = getattr(args, "config", None)
        if args.command == "paper_repro" and path is None:
            cfg = paper_config()
        else:
            cfg = load_config(path) if path else ExperimentConfig()
        if getattr(args, "threads", None):
            cfg = cfg.with_updates(**{"run.threads": args.threads})
        out = Outputs(args.out)
        if args.command == "hom":
            write_hom(cfg, out)
        elif args.command == "fringe":
            write_fringe(cfg, out)
        elif args.command == "qst":
            write_qst(cfg, out)
        elif args.command == "paper_repro":
            rows = write_paper_repro(cfg, out)
            for r in rows:
                print(f"{r['quantity']:<24} reference {r['reference']:<8g} simulated {r['simulated']:.4g}")
        elif args.command == "tomography":
            cmd_tomography(args.counts, cfg, out, args.target)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        out.manifest(cfg, args.command, started)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out.manifest(cfg, args.command, started)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
