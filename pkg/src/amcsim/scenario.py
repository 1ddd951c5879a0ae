"""Scenario files: validation, single runs, dry-run checks and sweeps.

A scenario is one JSON document. Physical quantities carry their SI unit
in the key name. Minimal example::

    {
      "topology": "inversion",
      "matrix": [[2, 1], [1, 2]],
      "input": [3, 3],
      "oa": {"dc_gain": 1e5, "gbwp_hz": 1e6, "v_sat_v": 1.0},
      "device": {"g0_siemens": 1e-4, "g_max_siemens": 1e-3},
      "simulation": {"seed": 0},
      "output_dir": "out/inversion"
    }

``matrix`` may instead be ``matrix_file`` (whitespace text, one row per
line, resolved relative to the scenario file).
"""
from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import circuits, device, dynamics, oracle, stability
from .matrix import (
    as_matrix,
    is_positive_definite,
    load_matrix_text,
    split_canonical,
)

EXIT_OK = 0
EXIT_INACCURATE = 1
EXIT_UNSTABLE = 2
EXIT_INVALID = 3

SPLIT_TOPOLOGIES = ("mvm_split_col", "mvm_split_row", "inversion_split")
EIGEN_ANGLE_TOL_RAD = math.radians(2.0)

OA_KEYS = {"dc_gain": "l0", "gbwp_hz": "f_gbwp", "v_sat_v": "v_sat"}
DEVICE_KEYS = {
    "g0_siemens": "g0",
    "g_min_siemens": "g_min",
    "g_max_siemens": "g_max",
    "levels": "levels",
    "sigma_prog": "sigma_prog",
    "verify_window": "verify_window",
    "max_verify_iters": "max_verify_iters",
}
SIM_DEFAULTS = {"t_end_s": None, "settle_tol": 0.01, "seed": 0, "record_every": None,
                "tolerance": 1e-3}
SPECIAL_AXES = ("max_row_sum", "bits")


class ScenarioError(ValueError):
    """Validation failure; ``problems`` lists ``(field_path, message)`` pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.problems))


@dataclass
class Scenario:
    topology: str
    matrix: np.ndarray
    input: np.ndarray = None
    delta: float = 0.01
    sign: str = "positive"
    lambda_nominal: float = None
    tia_feedback_siemens: float = None
    load_siemens: float = None
    oa: circuits.OAParams = field(default_factory=circuits.OAParams)
    oa2: circuits.OAParams = None
    inverter_oa: circuits.OAParams = None
    device: device.DeviceConfig = field(default_factory=device.DeviceConfig)
    quantize: bool = False
    program: bool = False
    simulation: dict = field(default_factory=lambda: dict(SIM_DEFAULTS))
    output_dir: str = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def seed(self) -> int:
        return int(self.simulation["seed"])


def _oa_from(d, path, problems):
    if d is None:
        return None
    unknown = set(d) - set(OA_KEYS)
    for k in sorted(unknown):
        problems.append((f"{path}.{k}", "unknown field"))
    try:
        return circuits.OAParams(**{OA_KEYS[k]: float(v) for k, v in d.items() if k in OA_KEYS})
    except (TypeError, ValueError) as exc:
        problems.append((path, str(exc)))
        return None


def load_scenario(source, base_dir=None) -> Scenario:
    """Parse and validate a scenario from a path or an already-loaded dict."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise ScenarioError([("<file>", f"{path} does not exist")])
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError([("<file>", f"invalid JSON: {exc}")]) from None
        base_dir = path.parent if base_dir is None else base_dir
    else:
        raw = copy.deepcopy(source)
    return _validate(raw, Path(base_dir or "."))


def _validate(raw: dict, base_dir: Path) -> Scenario:
    problems = []
    topo = raw.get("topology")
    if topo not in circuits.TOPOLOGIES:
        problems.append(("topology", f"must be one of {', '.join(circuits.TOPOLOGIES)}"))

    a = None
    if "matrix" in raw and "matrix_file" in raw:
        problems.append(("matrix", "give either matrix or matrix_file, not both"))
    elif "matrix" in raw:
        try:
            a = as_matrix(raw["matrix"], "matrix")
        except ValueError as exc:
            problems.append(("matrix", str(exc)))
    elif "matrix_file" in raw:
        mpath = base_dir / raw["matrix_file"]
        if not mpath.exists():
            problems.append(("matrix_file", f"{mpath} does not exist"))
        else:
            try:
                a = load_matrix_text(mpath)
            except ValueError as exc:
                problems.append(("matrix_file", str(exc)))
    else:
        problems.append(("matrix", "missing (give matrix or matrix_file)"))

    oa = _oa_from(raw.get("oa", {}), "oa", problems) or circuits.OAParams()
    oa2 = _oa_from(raw.get("oa2"), "oa2", problems)
    inv_oa = _oa_from(raw.get("inverter_oa"), "inverter_oa", problems)

    dev_raw = dict(raw.get("device", {}))
    quantize = bool(dev_raw.pop("quantize", False))
    program = bool(dev_raw.pop("program", False))
    for k in sorted(set(dev_raw) - set(DEVICE_KEYS)):
        problems.append((f"device.{k}", "unknown field"))
    dev = device.DeviceConfig()
    try:
        dev = device.DeviceConfig(**{DEVICE_KEYS[k]: v for k, v in dev_raw.items() if k in DEVICE_KEYS})
    except (TypeError, ValueError) as exc:
        problems.append(("device", str(exc)))

    sim = dict(SIM_DEFAULTS)
    for k, v in raw.get("simulation", {}).items():
        if k not in SIM_DEFAULTS:
            problems.append((f"simulation.{k}", "unknown field"))
        else:
            sim[k] = v
    if sim["t_end_s"] is not None and not (isinstance(sim["t_end_s"], (int, float)) and sim["t_end_s"] > 0):
        problems.append(("simulation.t_end_s", "must be a positive number"))
    if not 0 < float(sim["settle_tol"]) < 1:
        problems.append(("simulation.settle_tol", "must be in (0, 1)"))

    tia = raw.get("tia_feedback_siemens")
    if tia is not None and not tia > 0:
        problems.append(("tia_feedback_siemens", "must be positive"))

    sc = Scenario(
        topology=topo, matrix=a, delta=float(raw.get("delta", 0.01)),
        sign=raw.get("sign", "positive"), lambda_nominal=raw.get("lambda_nominal"),
        tia_feedback_siemens=tia, load_siemens=raw.get("load_siemens"),
        oa=oa, oa2=oa2, inverter_oa=inv_oa, device=dev, quantize=quantize, program=program,
        simulation=sim, output_dir=raw.get("output_dir"), raw=raw,
    )

    if topo in circuits.TOPOLOGIES and a is not None:
        _check_dimensions(sc, raw, problems)
    if problems:
        raise ScenarioError(problems)
    return sc


def _check_dimensions(sc: Scenario, raw: dict, problems):
    a = sc.matrix
    n, m = a.shape
    topo = sc.topology
    if topo == "eigenvector":
        if n != m:
            problems.append(("matrix", f"eigenvector circuit needs a square matrix, got {n}x{m}"))
        if sc.sign not in ("positive", "negative"):
            problems.append(("sign", "must be 'positive' or 'negative'"))
        if not 0 < sc.delta < 1:
            problems.append(("delta", "must be in (0, 1)"))
        if np.any(a < 0):
            problems.append(("matrix", "negative entries cannot be mapped in the eigenvector circuit"))
        return
    if "input" not in raw:
        problems.append(("input", "missing"))
        return
    try:
        sc.input = np.array(raw["input"], dtype=float).reshape(-1)
    except (TypeError, ValueError):
        problems.append(("input", "must be a list of numbers"))
        return
    want = {
        "mvm": m, "mvm_split_col": m, "mvm_split_row": m,
        "inversion": n, "inversion_split": n, "pinv_left": n, "pinv_right": n,
    }[topo]
    if sc.input.shape[0] != want:
        problems.append(("input", f"length {sc.input.shape[0]} does not match matrix {n}x{m} (need {want})"))
    if topo.startswith("inversion") and n != m:
        problems.append(("matrix", f"inversion needs a square matrix, got {n}x{m}"))
    if topo == "pinv_left" and n < m:
        problems.append(("matrix", f"left inverse needs a tall matrix (rows >= cols), got {n}x{m}"))
    if topo == "pinv_right" and n > m:
        problems.append(("matrix", f"right inverse needs a broad matrix (rows <= cols), got {n}x{m}"))
    if topo not in SPLIT_TOPOLOGIES and np.any(a < 0):
        alt = {"mvm": "mvm_split_col or mvm_split_row", "inversion": "inversion_split"}.get(topo)
        hint = f"; use {alt}" if alt else ""
        problems.append(("matrix", f"negative entries cannot be mapped in {topo}{hint}"))


# --------------------------------------------------------------------------
# Building
# --------------------------------------------------------------------------


def _map(sc: Scenario, a, offset=0):
    gm = device.map_matrix(a, sc.device)
    if sc.quantize:
        gm = device.quantize(gm)
    if sc.program:
        gm = device.program_with_verify(gm, sc.seed + offset)
    return gm


def _eigen_target(sc: Scenario) -> float:
    if sc.lambda_nominal is not None:
        return abs(float(sc.lambda_nominal))
    which = "largest" if sc.sign == "positive" else "smallest"
    return abs(oracle.extreme_eigenpair(sc.matrix, which).eigenvalue)


def build_system(sc: Scenario):
    """Map the scenario matrix onto devices and build its circuit.

    Returns ``(system, device_summary)``.
    """
    a, topo = sc.matrix, sc.topology
    g_f = sc.tia_feedback_siemens or sc.device.g0
    tia = circuits.TIAConfig(g_f)
    if topo in SPLIT_TOPOLOGIES:
        sp = split_canonical(a)
        pair = device.SplitPair(plus=_map(sc, sp.plus), minus=_map(sc, sp.minus, 1))
        arrays = [pair.plus, pair.minus]
        if topo == "mvm_split_col":
            sys = circuits.build_mvm_split_col(pair, sc.input, tia, sc.oa)
        elif topo == "mvm_split_row":
            sys = circuits.build_mvm_split_row(pair, sc.input, sc.oa, tia)
        else:
            sys = circuits.build_inversion_split(pair, sc.input, sc.oa, sc.inverter_oa, sc.load_siemens)
    elif topo == "pinv_right":
        gm = _map(sc, a.T)
        arrays = [gm]
        sys = circuits.build_pinv_right(gm, sc.input, tia, sc.oa, sc.oa2)
    else:
        gm = _map(sc, a)
        arrays = [gm]
        if topo == "mvm":
            sys = circuits.build_mvm(gm, -sc.input, tia, sc.oa)
        elif topo == "inversion":
            sys = circuits.build_inversion(gm, sc.input, sc.oa, sc.load_siemens)
        elif topo == "pinv_left":
            sys = circuits.build_pinv_left(gm, sc.input, tia, sc.oa, sc.oa2)
        else:
            lam = _eigen_target(sc) * (1.0 - sc.delta)
            sys = circuits.build_eigenvector(gm, lam, sc.sign, sc.oa, sc.inverter_oa)
    summary = {
        "provenance": arrays[0].provenance,
        "clamp_events": int(sum(g.clamp_events for g in arrays)),
        "g0_siemens": sc.device.g0,
        "levels": sc.device.levels if sc.quantize else None,
    }
    return sys, summary


def oracle_result(sc: Scenario) -> oracle.OracleResult:
    a, y = sc.matrix, sc.input
    topo = sc.topology
    if topo.startswith("mvm"):
        return oracle.OracleResult(value=oracle.mvm(a, y), method="dense_mvm", matrix=a, rhs=y)
    if topo.startswith("inversion"):
        return oracle.solve(a, y)
    if topo == "pinv_left":
        return oracle.pinv_left_solve(a, y)
    if topo == "pinv_right":
        return oracle.pinv_right_solve(a, y)
    return oracle.extreme_eigenpair(a, "largest" if sc.sign == "positive" else "smallest")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _vec(v):
    return [float(x) for x in np.asarray(v).ravel()]


@dataclass
class RunOutcome:
    report: dict
    exit_code: int
    trajectory: dynamics.Trajectory = None
    wall_clock_s: float = 0.0


def run(sc: Scenario) -> RunOutcome:
    """Map, build, analyze, simulate and compare one scenario against its oracle."""
    start = time.perf_counter()
    sys, dev_summary = build_system(sc)
    rep = stability.poles(sys)
    report = {
        "topology": sc.topology,
        "state_dim": sys.state_dim,
        "device": dev_summary,
        "poles": rep.to_dict(),
        "tolerance": sc.simulation["tolerance"],
    }
    traj = None
    if sc.topology == "eigenvector":
        code, traj = _run_eigen(sc, sys, report)
    elif rep.verdict == "unstable":
        offending = [p for p in rep.poles if p.real > rep.origin_tol]
        report["offending_poles"] = [{"re": float(p.real), "im": float(p.imag)} for p in offending]
        report["status"] = "unstable"
        code = EXIT_UNSTABLE
    else:
        code, traj = _run_linear(sc, sys, rep, report)
    return RunOutcome(report=report, exit_code=code, trajectory=traj,
                      wall_clock_s=time.perf_counter() - start)


def _run_linear(sc, sys, rep, report):
    sim = sc.simulation
    scale = 1.0 / sys.meta["output_gain"] if "output_gain" in sys.meta else 1.0
    try:
        x_ss = dynamics.steady_state(sys)
    except dynamics.NoLinearSteadyState as exc:
        report["status"] = f"no steady state: {exc}"
        return EXIT_INACCURATE, None
    ref = oracle_result(sc)
    result = x_ss * scale
    rel = float(np.linalg.norm(result - ref.value) / np.linalg.norm(ref.value))
    t_end = sim["t_end_s"] or dynamics.default_horizon(sys)
    traj = dynamics.integrate(sys, t_end, dynamics.initial_state(sys, sc.seed),
                              record_every=sim["record_every"] or 1)
    settle = dynamics.settle_time(traj, x_ss, sim["settle_tol"]) if np.any(x_ss) else None
    report.update({
        "steady_state": _vec(result),
        "oracle": {"value": _vec(ref.value), "method": ref.method, "residual": ref.residual},
        "relative_error": rel,
        "settle_time_s": settle.settle_time if settle else None,
        "t_end_s": float(t_end),
        "final_state_error": float(np.linalg.norm(traj.final_output - x_ss) / max(np.linalg.norm(x_ss), 1e-300)),
    })
    ok = rel <= sim["tolerance"] and rep.verdict != "unstable"
    report["status"] = "ok" if ok else "inaccurate"
    return (EXIT_OK if ok else EXIT_INACCURATE), traj


def _run_eigen(sc, sys, report):
    sim = sc.simulation
    ref = oracle_result(sc)
    report["lambda_mapped"] = sys.meta["lambda_mapped"]
    report["oracle"] = {"value": _vec(ref.value), "eigenvalue": ref.eigenvalue,
                        "method": ref.method, "residual": ref.residual}
    try:
        traj = dynamics.integrate_until_settled(sys, seed=sc.seed, record_every=sim["record_every"] or 10)
    except dynamics.NotSettledError as exc:
        report["status"] = f"not settled: {exc}"
        return EXIT_INACCURATE, None
    res = dynamics.measure_eigen_result(traj, sc.matrix, sc.sign)
    x = traj.final_output
    settle = dynamics.settle_time(traj, x, sim["settle_tol"])
    report.update({
        "steady_state": _vec(x),
        "angle_rad": res.angle,
        "rayleigh": res.rayleigh,
        "amplitude_ratio": res.amplitude_ratio,
        "relative_error": res.angle,
        "settle_time_s": settle.settle_time,
    })
    ok = res.angle < EIGEN_ANGLE_TOL_RAD and abs(res.amplitude_ratio - 1) <= 0.01
    report["status"] = "ok" if ok else "inaccurate"
    return (EXIT_OK if ok else EXIT_INACCURATE), traj


def check(sc: Scenario) -> dict:
    """Dry run: structural findings and predicted poles, no simulation."""
    a = sc.matrix
    findings = {"topology": sc.topology, "shape": list(a.shape), "warnings": []}
    warn = findings["warnings"]
    if a.shape[0] == a.shape[1]:
        findings["positive_definite"] = is_positive_definite(a)
    if sc.topology in SPLIT_TOPOLOGIES:
        peak = float(np.abs(a).max())
    else:
        peak = float(a.max())
    fits = peak * sc.device.g0 <= sc.device.g_max
    findings["fits_conductance_window"] = fits
    if not fits:
        warn.append(f"max entry maps to {peak * sc.device.g0:.4g} S > g_max; "
                    f"pre-scale by {sc.device.g_max / (peak * sc.device.g0):.6g}")
    if sc.topology.startswith("inversion") and findings.get("positive_definite") is False:
        warn.append("matrix is not positive definite: stability is not guaranteed")
    if sc.topology == "eigenvector":
        lam_true = abs(oracle.extreme_eigenpair(a, "largest" if sc.sign == "positive" else "smallest").eigenvalue)
        lam_mapped = _eigen_target(sc) * (1 - sc.delta)
        findings["lambda_mapped"] = lam_mapped
        findings["lambda_dominant"] = lam_true
        if lam_mapped >= lam_true:
            warn.append("loop gain ≤ 1, will decay: mapped eigenvalue is not below the dominant one")
    if not fits:
        findings["predicted"] = None
        return findings
    sys, _ = build_system(sc)
    rep = stability.poles(sys)
    growing = int(np.sum(np.real(rep.poles) > rep.origin_tol))
    if sc.topology == "eigenvector":
        summary = ("one growing mode, eigenvector will emerge" if growing == 1
                   else f"{growing} growing modes, expected exactly one")
    else:
        summary = f"{rep.verdict} predicted"
    findings["predicted"] = {
        "verdict": rep.verdict,
        "growing_modes": growing,
        "summary": summary,
        "dominant": rep.to_dict()["dominant"],
        "lambda_min": rep.lambda_min,
        "bound_time_s": rep.bound_time,
    }
    if rep.lambda_min and rep.lambda_min > 0:
        findings["predicted"]["response_bound_s"] = stability.response_bound(rep.lambda_min, sc.oa.f_gbwp)
    return findings


def validation_suggestions(err: ScenarioError) -> list:
    return [f"{path}: {msg}" for path, msg in err.problems]


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


def _set_path(d: dict, path: str, value):
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value


def _numeric_at(d: dict, path: str) -> bool:
    cur = d
    for k in path.split("."):
        if not isinstance(cur, dict) or k not in cur:
            return False
        cur = cur[k]
    return isinstance(cur, (int, float)) and not isinstance(cur, bool)


def apply_axis(sc: Scenario, axis: str, value: float) -> Scenario:
    """Copy of ``sc`` with one numeric field replaced.

    ``axis`` is a dotted path into the scenario document (``delta``,
    ``oa.gbwp_hz``, ``device.levels`` ...) or one of the derived axes
    ``max_row_sum`` (rescale the matrix to that max absolute row sum) and
    ``bits`` (``device.levels = 2**bits``).
    """
    raw = copy.deepcopy(sc.raw)
    raw["matrix"] = sc.matrix.tolist()
    raw.pop("matrix_file", None)
    if axis == "max_row_sum":
        rs = float(np.abs(sc.matrix).sum(axis=1).max())
        raw["matrix"] = (sc.matrix * (value / rs)).tolist()
    elif axis == "bits":
        _set_path(raw, "device.levels", int(2 ** int(value)))
    else:
        _set_path(raw, axis, value)
    return _validate(raw, Path("."))


def validate_axis(sc: Scenario, axis: str):
    if axis in SPECIAL_AXES:
        return
    defaults = {"delta": 0.01, "lambda_nominal": None}
    if _numeric_at(sc.raw, axis) or axis in defaults or axis.split(".")[0] in ("oa", "oa2", "inverter_oa", "device", "simulation"):
        head = axis.split(".")[0]
        leaf = axis.split(".")[-1]
        known = {"oa": OA_KEYS, "oa2": OA_KEYS, "inverter_oa": OA_KEYS, "device": DEVICE_KEYS,
                 "simulation": SIM_DEFAULTS}
        if head in known and leaf not in known[head]:
            raise ScenarioError([("axis", f"{axis} is not a numeric scenario field")])
        return
    if axis in ("tia_feedback_siemens", "load_siemens"):
        return
    raise ScenarioError([("axis", f"{axis} is not a numeric scenario field")])


def sweep(sc: Scenario, axis: str, values, out_dir: Path) -> list:
    """Run one scenario per axis value; write per-run reports and ``sweep.csv``."""
    validate_axis(sc, axis)
    variants = [(v, apply_axis(sc, axis, v)) for v in values]
    rows = []
    out_dir = Path(out_dir)
    for i, (v, variant) in enumerate(variants):
        outcome = run(variant)
        run_dir = out_dir / f"run_{i:03d}"
        write_outputs(outcome, run_dir)
        dom = outcome.report["poles"]["dominant"]
        rows.append({
            "value": v,
            "settle_time": outcome.report.get("settle_time_s"),
            "relative_error": outcome.report.get("relative_error"),
            "dominant_pole": None if dom is None else complex(dom["re"], dom["im"]),
            "exit_code": outcome.exit_code,
        })
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "sweep.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["value", "settle_time", "relative_error", "dominant_pole_re", "dominant_pole_im"])
        for r in rows:
            dp = r["dominant_pole"]
            writer.writerow([
                repr(float(r["value"])),
                "" if r["settle_time"] is None else repr(r["settle_time"]),
                "" if r["relative_error"] is None else repr(r["relative_error"]),
                "" if dp is None else repr(dp.real),
                "" if dp is None else repr(dp.imag),
            ])
    return rows


def write_outputs(outcome: RunOutcome, out_dir: Path, timing: bool = False) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = dict(outcome.report)
    if timing:
        report["wall_clock_s"] = outcome.wall_clock_s
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if outcome.trajectory is not None:
        outcome.trajectory.to_csv(out_dir / "trajectory.csv")
