"""
Command-line front end.

One JSON scenario per invocation::

    mgtlab check    --config scenario.json
    mgtlab simulate --config scenario.json --out results/
    mgtlab verify   --config scenario.json --out results/ --strict

Exit codes: 0 pass, 1 usage/parse/I-O, 2 assumption failure, 3 numerical
instability, 4 a decay verdict failed although the assumptions hold.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import analysis, energy, kernel as kmod, simulator
from ._numerics import ContractError

log = logging.getLogger("mgtlab")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ASSUMPTIONS = 2
EXIT_UNSTABLE = 3
EXIT_VERDICT = 4


class ConfigError(ValueError):
    """Malformed scenario config; ``field`` names the offending entry."""

    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def _number(d, key, where, positive=False, allow_zero=False, default=None, required=True):
    if key not in d:
        if required and default is None:
            raise ConfigError(f"{where}.{key}", "missing")
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigError(f"{where}.{key}", f"expected a finite number, got {val!r}")
    val = float(val)
    if positive and not (val > 0 or (allow_zero and val == 0)):
        raise ConfigError(f"{where}.{key}", f"must be {'>= 0' if allow_zero else '> 0'}, got {val!r}")
    return val


def _section(d, key):
    if key not in d:
        raise ConfigError(key, "missing section")
    if not isinstance(d[key], dict):
        raise ConfigError(key, "expected an object")
    return d[key]


KERNEL_FIELDS = {
    "none": (),
    "exponential": ("a", "rate"),
    "polynomial": ("a", "p"),
    "tabulated": ("times", "values"),
}


@dataclass
class ScenarioConfig:
    """A fully resolved scenario. ``to_dict``/``from_dict`` round-trip exactly."""

    params: dict
    operator: dict
    kernel: dict
    ic: list
    T: float
    dt: Optional[float] = None
    alpha0: Optional[float] = None
    name: str = "scenario"
    outputs: dict = field(default_factory=lambda: {"csv": "energy.csv", "report": "report.txt",
                                                   "history": None})
    strict: bool = False
    workers: int = 1

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("<root>", "expected a JSON object")
        p = _section(d, "params")
        params = {k: _number(p, k, "params", positive=True) for k in ("tau", "alpha", "b", "c2")}

        o = _section(d, "operator")
        if "eigenvalues" in o:
            ev = o["eigenvalues"]
            if not isinstance(ev, list) or not ev or not all(
                    isinstance(x, (int, float)) and not isinstance(x, bool) for x in ev):
                raise ConfigError("operator.eigenvalues", "expected a non-empty list of numbers")
            operator = {"eigenvalues": [float(x) for x in ev]}
        else:
            preset = o.get("preset")
            if preset != "dirichlet_laplacian_1d":
                raise ConfigError("operator.preset",
                                  f"expected 'dirichlet_laplacian_1d' or an eigenvalue list, got {preset!r}")
            n = o.get("n_modes")
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                raise ConfigError("operator.n_modes", f"expected a positive integer, got {n!r}")
            operator = {"preset": preset, "n_modes": n,
                        "length": _number(o, "length", "operator", positive=True)}

        kd = _section(d, "kernel")
        family = kd.get("family")
        if family not in KERNEL_FIELDS:
            raise ConfigError("kernel.family", f"expected one of {sorted(KERNEL_FIELDS)}, got {family!r}")
        kern = {"family": family}
        if family in ("exponential", "polynomial"):
            for key in KERNEL_FIELDS[family]:
                kern[key] = _number(kd, key, "kernel")
        elif family == "tabulated":
            for key in ("times", "values"):
                arr = kd.get(key)
                if not isinstance(arr, list) or len(arr) < 2:
                    raise ConfigError(f"kernel.{key}", "expected a list of at least two numbers")
                kern[key] = [float(x) for x in arr]
            tail = kd.get("tail")
            if tail is not None:
                if not isinstance(tail, dict) or tail.get("law") not in ("power", "exponential"):
                    raise ConfigError("kernel.tail", "expected {'law': 'power'|'exponential', 'rate': r}")
                kern["tail"] = {"law": tail["law"],
                                "rate": _number(tail, "rate", "kernel.tail", positive=True)}
            else:
                kern["tail"] = None
            dom = kd.get("dominator")
            if not isinstance(dom, dict):
                raise ConfigError("kernel.dominator", "tabulated kernels need {'K', 'q', 'delta_bar'}")
            kern["dominator"] = {"K": _number(dom, "K", "kernel.dominator", positive=True),
                                 "q": _number(dom, "q", "kernel.dominator", positive=True),
                                 "delta_bar": _number(dom, "delta_bar", "kernel.dominator",
                                                      positive=True)}

        ic_raw = d.get("ic", [])
        if not isinstance(ic_raw, list):
            raise ConfigError("ic", "expected a list of [u, u', u''] triples")
        ic = []
        for i, triple in enumerate(ic_raw):
            if (not isinstance(triple, list) or len(triple) != 3
                    or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in triple)):
                raise ConfigError(f"ic[{i}]", f"expected three numbers, got {triple!r}")
            ic.append([float(x) for x in triple])

        tsec = _section(d, "time")
        T = _number(tsec, "T", "time", positive=True, allow_zero=True)
        dt = _number(tsec, "dt", "time", positive=True, required=False)

        alpha0 = d.get("alpha0")
        if alpha0 is not None:
            alpha0 = _number(d, "alpha0", "<root>")

        outputs = {"csv": "energy.csv", "report": "report.txt", "history": None}
        if "outputs" in d:
            out = _section(d, "outputs")
            for key in outputs:
                if key in out:
                    if out[key] is not None and not isinstance(out[key], str):
                        raise ConfigError(f"outputs.{key}", "expected a path string or null")
                    outputs[key] = out[key]
        strict = d.get("strict", False)
        if not isinstance(strict, bool):
            raise ConfigError("strict", "expected true or false")
        workers = d.get("workers", 1)
        if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
            raise ConfigError("workers", "expected a positive integer")
        name = d.get("name", "scenario")
        if not isinstance(name, str):
            raise ConfigError("name", "expected a string")

        cfg = cls(params, operator, kern, ic, T, dt, alpha0, name, outputs, strict, workers)
        n_modes = len(operator["eigenvalues"]) if "eigenvalues" in operator else operator["n_modes"]
        if len(ic) > n_modes:
            raise ConfigError("ic", f"{len(ic)} triples for {n_modes} modes")
        return cfg

    def to_dict(self):
        d = asdict(self)
        out = {"name": d["name"], "params": d["params"], "operator": d["operator"],
               "kernel": d["kernel"], "alpha0": d["alpha0"], "ic": d["ic"],
               "time": {"T": d["T"]}, "outputs": d["outputs"], "strict": d["strict"],
               "workers": d["workers"]}
        if d["dt"] is not None:
            out["time"]["dt"] = d["dt"]
        return out

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    return ScenarioConfig.from_dict(raw)


# building objects ------------------------------------------------------------------

@dataclass
class Scenario:
    config: ScenarioConfig
    params: kmod.MgtParams
    op: simulator.ModalOperator
    kernel: Optional[kmod.MemoryKernel]
    dom: Optional[kmod.DecayDominator]
    alpha0: Optional[float]
    report: Optional[kmod.AdmissibilityReport]
    build_errors: list
    notes: list

    @property
    def assumptions_ok(self):
        return not self.build_errors and self.report is not None and self.report.passed

    def assumptions_text(self):
        lines = list(self.build_errors)
        if self.report is not None:
            lines.append(self.report.summary())
        lines.extend(self.notes)
        return "\n".join(lines)


def build_scenario(cfg):
    """Turn a config into model objects and run the assumption checks.

    Kernel parameters the constructors reject (for instance ``p <= 1``, where
    the cumulative kernel diverges) are reported as assumption failures.
    """
    try:
        params = kmod.MgtParams(**cfg.params)
    except kmod.ParameterError as exc:
        raise ConfigError("params", str(exc)) from exc
    try:
        if "eigenvalues" in cfg.operator:
            op = simulator.ModalOperator(np.array(cfg.operator["eigenvalues"]))
        else:
            op = simulator.dirichlet_laplacian_1d(cfg.operator["n_modes"], cfg.operator["length"])
    except ContractError as exc:
        raise ConfigError("operator", str(exc)) from exc

    kd = cfg.kernel
    family = kd["family"]
    kern = dom = None
    errors, notes = [], []
    try:
        if family == "none":
            kern = kmod.make_none()
        elif family == "exponential":
            kern, dom = kmod.make_exponential(kd["a"], kd["rate"])
        elif family == "polynomial":
            kern, dom = kmod.make_polynomial(kd["a"], kd["p"])
        else:
            tail = None if kd["tail"] is None else (kd["tail"]["law"], kd["tail"]["rate"])
            kern = kmod.make_tabulated(kd["times"], kd["values"], tail)
            dd = kd["dominator"]
            dom = kmod.power_dominator(dd["K"], dd["q"], dd["delta_bar"])
    except kmod.ParameterError as exc:
        errors.append(f"item1: kernel rejected: {exc}")

    alpha0 = cfg.alpha0
    report = None
    if kern is not None:
        if alpha0 is None and dom is not None:
            try:
                alpha0 = analysis.choose_alpha0(dom, kern.g0)
                notes.append(f"alpha0 chosen automatically: {alpha0!r}")
            except ContractError as exc:
                notes.append(f"alpha0: {exc}")
        report = kmod.check_assumptions(params, kern, dom, alpha0, op)
    return Scenario(cfg, params, op, kern, dom, alpha0, report, errors, notes)


# commands --------------------------------------------------------------------------

def _resolve(path, out_dir):
    if path is None:
        return None
    if out_dir is not None and not os.path.isabs(path):
        return os.path.join(out_dir, path)
    return path


def _write_text(path, text):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def cmd_check(cfg, stream=None):
    """Print the assumption report; 0 when every item passes, 2 otherwise."""
    stream = stream or sys.stdout
    sc = build_scenario(cfg)
    stream.write(sc.assumptions_text() + "\n")
    stream.write("assumptions: " + ("PASS" if sc.assumptions_ok else "FAIL") + "\n")
    return EXIT_OK if sc.assumptions_ok else EXIT_ASSUMPTIONS


def _simulate(sc, out_dir, stream):
    """Run and write the energy CSV. Returns ``(exit_code, traj, series)``."""
    cfg = sc.config
    if sc.kernel is None:
        stream.write(sc.assumptions_text() + "\n")
        return EXIT_ASSUMPTIONS, None, None
    if not sc.assumptions_ok:
        if cfg.strict:
            stream.write(sc.assumptions_text() + "\nstrict mode: not running\n")
            return EXIT_ASSUMPTIONS, None, None
        log.warning("assumption check failed (%s); running anyway",
                    ", ".join(sc.report.failed_items))
    dt = cfg.dt if cfg.dt is not None else simulator.default_dt(sc.op)
    report_path = _resolve(cfg.outputs["report"], out_dir)
    try:
        traj = simulator.run(sc.params, sc.kernel, sc.op, cfg.ic, cfg.T, dt, workers=cfg.workers)
    except simulator.InstabilityError as exc:
        msg = f"numerical instability: blow-up at t = {exc.t!r} (dt = {dt!r})\n"
        stream.write(msg)
        if report_path:
            _write_text(report_path, f"scenario: {cfg.name}\n{msg}")
        return EXIT_UNSTABLE, None, None
    k = sc.report.k if sc.report is not None and sc.report.k is not None else None
    series = energy.energy_series(traj, k=k, sigma=sc.report.sigma if k is not None else None)
    csv_path = _resolve(cfg.outputs["csv"], out_dir)
    if csv_path:
        parent = os.path.dirname(csv_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        energy.write_energy_csv(series, csv_path)
    hist = _resolve(cfg.outputs.get("history"), out_dir)
    if hist:
        simulator.write_history_csv(traj, hist)
    echo = _resolve("scenario.json", out_dir) if out_dir else None
    if echo:
        _write_text(echo, cfg.dumps() + "\n")
    return EXIT_OK, traj, series


def cmd_simulate(cfg, out_dir=None, stream=None):
    stream = stream or sys.stdout
    sc = build_scenario(cfg)
    code, traj, series = _simulate(sc, out_dir, stream)
    if code == EXIT_OK:
        res = energy.balance_residual(series)
        stream.write(f"{traj.t.size} grid points; E(0) = {float(series.E[0])!r}, E(T) = {float(series.E[-1])!r}; "
                     f"relative balance residual {res[1]!r}\n")
    return code


def cmd_verify(cfg, out_dir=None, stream=None):
    """Simulate, analyse and write the verdict report.

    Exit 0 when every verdict passes; 2 when the assumptions failed; 4 when a
    verdict failed under valid assumptions.
    """
    stream = stream or sys.stdout
    sc = build_scenario(cfg)
    code, traj, series = _simulate(sc, out_dir, stream)
    if code != EXIT_OK:
        return code
    if sc.kernel.memoryless:
        rep = analysis.analyze_memoryless(series, cfg.name, sc.assumptions_text())
    elif sc.dom is None or sc.alpha0 is None:
        stream.write(sc.assumptions_text() + "\n")
        return EXIT_ASSUMPTIONS
    else:
        rep = analysis.analyze_memory(traj, series, sc.dom, sc.alpha0, cfg.name,
                                      sc.assumptions_text())
    text = rep.text()
    stream.write(text)
    report_path = _resolve(cfg.outputs["report"], out_dir)
    if report_path:
        _write_text(report_path, text)
    if not sc.assumptions_ok:
        return EXIT_ASSUMPTIONS
    return EXIT_OK if rep.passed else EXIT_VERDICT


def build_parser():
    parser = argparse.ArgumentParser(prog="mgtlab", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("check", "evaluate the standing assumptions"),
                           ("simulate", "integrate and write the energy CSV"),
                           ("verify", "simulate, fit decay rates and write the verdict report")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", default=None, help="directory for relative output paths")
        p.add_argument("--strict", action="store_true", help="refuse to run when assumptions fail")
        p.add_argument("--csv", default=None, help="override the energy CSV path")
        p.add_argument("--report", default=None, help="override the report path")
        p.add_argument("--workers", type=int, default=None, help="override the worker count")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.strict:
            cfg.strict = True
        if args.csv is not None:
            cfg.outputs["csv"] = args.csv
        if args.report is not None:
            cfg.outputs["report"] = args.report
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers", "must be >= 1")
            cfg.workers = args.workers
        if args.command == "check":
            return cmd_check(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        return cmd_verify(cfg, args.out)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE
    except OSError as exc:
        sys.stderr.write(f"I/O error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
