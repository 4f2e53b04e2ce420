"""Command-line driver: verify, synth, simulate, topology check.

Exit codes: 0 success, 2 infeasible (the report is still written), 1 errors.
Result files contain no timing data; run information goes to a sibling
``<out>.meta.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import conditions, graph, sdp, sim
from .poly import Polynomial, PolyVector

log = logging.getLogger("consensus_sos")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def bundled_example() -> Path:
    return Path(str(resources.files("consensus_sos") / "data" / "paper_example.json"))


@dataclass
class RunConfig:
    command: str
    problem: Path
    out: Path | None = None
    overrides: dict = field(default_factory=dict)
    dump_sdp: Path | None = None


@dataclass
class Problem:
    order: int
    qform: conditions.QForm | None
    V: Polynomial | None
    h: PolyVector | None  # first-order coupling
    h1: PolyVector | None
    h2: PolyVector | None
    schedule: graph.SwitchingSchedule | None
    initial: dict
    symmetry_tol: float
    simulation: dict
    synthesis: dict


def load_problem(path: Path) -> Problem:
    if not path.is_file():
        raise FileNotFoundError(f"problem file not found: {path}")
    obj = json.loads(path.read_text())
    order = int(obj.get("order", 2))
    n = obj.get("nvars")
    get_vec = lambda k: PolyVector.from_json(obj[k]) if k in obj else None
    qf = conditions.QForm.from_json(obj["qform"], n) if "qform" in obj else None
    return Problem(
        order=order,
        qform=qf,
        V=Polynomial.from_json(obj["V"]) if "V" in obj else None,
        h=get_vec("h"),
        h1=get_vec("h1"),
        h2=get_vec("h2"),
        schedule=graph.SwitchingSchedule.from_json(obj["schedule"]) if "schedule" in obj else None,
        initial=obj.get("initial", {}),
        symmetry_tol=float(obj.get("symmetry_tol", conditions.SYMMETRY_TOL)),
        simulation=obj.get("simulation", {}),
        synthesis=obj.get("synthesis", {}),
    )


def _write_json(path: Path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _write_meta(out: Path | None, argv, started: float, extra=None):
    if out is None:
        return
    meta = {
        "argv": list(argv),
        "elapsed_s": round(time.perf_counter() - started, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    meta.update(extra or {})
    _write_json(out.with_name(out.name + ".meta.json"), meta)


class _Dumper:
    """Collects the SDPs of a run and writes the first one as text."""

    def __init__(self, path: Path | None):
        self.path = path
        self.done = False

    def __call__(self, problem: sdp.SdpProblem):
        if self.path is not None and not self.done:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(sdp.dump_text(problem))
            self.done = True


# commands -----------------------------------------------------------------------------

def cmd_verify(cfg: RunConfig) -> tuple[int, dict]:
    p = load_problem(cfg.problem)
    if p.qform is None or p.V is None:
        raise ValueError("verify needs qform and V in the problem file")
    tol = cfg.overrides.get("symmetry_tol") or p.symmetry_tol
    dump = _Dumper(cfg.dump_sdp)
    if p.order == 1:
        if p.h is None:
            raise ValueError("first-order verify needs h")
        out = conditions.verify(p.V, p.h, p.qform, on_problem=dump)
    else:
        if p.h1 is None or p.h2 is None:
            raise ValueError("second-order verify needs h1 and h2")
        out = conditions.verify(p.V, p.h2, p.qform, h1=p.h1, symmetry_tol=tol, on_problem=dump)
    return (EXIT_OK if out.feasible else EXIT_INFEASIBLE), out.to_json()


def cmd_synth(cfg: RunConfig) -> tuple[int, dict]:
    p = load_problem(cfg.problem)
    if p.qform is None:
        raise ValueError("synth needs qform in the problem file")
    o = cfg.overrides
    base = dict(p.synthesis)
    sc = conditions.SynthesisConfig(
        order=o.get("order") or p.order,
        deg_v=o.get("deg_v") or base.get("deg_v", 4),
        deg_h=o.get("deg_h") or base.get("deg_h", 3),
        mode=o.get("mode") or base.get("mode", "fixed_h"),
        max_rounds=o.get("max_rounds") or base.get("max_rounds", 3),
    )
    seed = None
    if o.get("seed_from_problem"):
        seed = p.h if sc.order == 1 else p.h2
        if seed is None:
            raise ValueError("problem file has no coupling to seed from")
    dump = _Dumper(cfg.dump_sdp)
    out = conditions.synthesize(sc, p.qform, seed, on_problem=dump)
    payload = out.to_json()
    payload["config"] = {
        "order": sc.order,
        "deg_v": sc.deg_v,
        "deg_h": sc.deg_h,
        "mode": sc.mode,
        "max_rounds": sc.max_rounds,
        "seed": "problem" if seed is not None else "identity",
    }
    return (EXIT_OK if out.feasible else EXIT_INFEASIBLE), payload


def cmd_simulate(cfg: RunConfig) -> tuple[int, dict]:
    p = load_problem(cfg.problem)
    if p.schedule is None:
        raise ValueError("simulate needs a schedule")
    dt = cfg.overrides.get("dt") or p.simulation.get("dt", 1e-4)
    T = cfg.overrides.get("T") or p.simulation.get("T", 10.0)
    ini = p.initial
    if p.order == 1:
        state = sim.FirstOrderState(np.array(ini["z"], float), np.array(ini["z_gamma"], float))
        res = sim.integrate(p.schedule, state, dt, T, h=p.h)
    else:
        state = sim.SecondOrderErrorState.from_absolute(ini["z"], ini["v"], ini["z_gamma"], ini["v_gamma"])
        res = sim.integrate(p.schedule, state, dt, T, h1=p.h1, h2=p.h2)
    lyap = sim.lyapunov_trace(res, p.V, p.schedule) if p.V is not None else None
    summary = {
        "order": res.order,
        "dt": dt,
        "T": T,
        "steps": len(res.t) - 1,
        "final_pos_err": res.pos_err[-1].tolist(),
        "final_vel_err": None if res.nu is None else res.vel_err[-1].tolist(),
        "max_final_error": float(res.max_error()[-1]),
        "consensus_time_1e-2": sim.consensus_time(res, 1e-2),
        "switch_count": len(res.switches),
    }
    if lyap is not None:
        summary["monitor"] = sim.lyapunov_monitor(res, p.V, p.schedule).to_json()
        summary["monitor"]["jumps"] = len(summary["monitor"]["jumps"])
    if cfg.out is not None:
        cfg.out.parent.mkdir(parents=True, exist_ok=True)
        cfg.out.write_text(sim.to_csv(res, lyap))
    return EXIT_OK, summary


def topology_report(schedule: graph.SwitchingSchedule) -> dict:
    windows = []
    for w in range(len(schedule.windows)):
        members = [schedule.graphs[schedule.subintervals[k][0]] for k in schedule.window_subintervals(w)]
        G = sum(graph.grand_matrix(g) for g in members)
        windows.append({
            "window": w,
            "graphs": [schedule.subintervals[k][0] for k in schedule.window_subintervals(w)],
            "jointly_connected": graph.is_jointly_connected(schedule, w),
            "lambda_min": float(np.linalg.eigvalsh(G)[0]),
        })
    return {
        "followers": schedule.follower_count,
        "period": schedule.period,
        "dwell_time": schedule.dwell_time,
        "windows": windows,
        "all_connected": all(w["jointly_connected"] for w in windows),
    }


def cmd_topology(cfg: RunConfig) -> tuple[int, dict]:
    obj = json.loads(cfg.problem.read_text()) if cfg.problem.is_file() else None
    if obj is None:
        raise FileNotFoundError(f"file not found: {cfg.problem}")
    schedule = graph.SwitchingSchedule.from_json(obj.get("schedule", obj))
    rep = topology_report(schedule)
    return (EXIT_OK if rep["all_connected"] else EXIT_INFEASIBLE), rep


COMMANDS = {"verify": cmd_verify, "synth": cmd_synth, "simulate": cmd_simulate, "topology": cmd_topology}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="consensus-sos", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_help):
        p.add_argument("--problem", type=Path, default=None, help="problem JSON (default: bundled example)")
        p.add_argument("--out", type=Path, default=None, help=out_help)

    v = sub.add_parser("verify", help="check fixed polynomials, searching only for the q-matrix")
    common(v, "result JSON")
    v.add_argument("--symmetry-tol", type=float, default=None)
    v.add_argument("--dump-sdp", type=Path, default=None, help="write the SDP in plain text")

    s = sub.add_parser("synth", help="synthesize V (and optionally the coupling)")
    common(s, "result JSON")
    s.add_argument("--order", type=int, choices=(1, 2), default=None)
    s.add_argument("--deg-v", type=int, default=None)
    s.add_argument("--deg-h", type=int, default=None)
    s.add_argument("--mode", choices=("fixed_h", "alternate"), default=None)
    s.add_argument("--max-rounds", type=int, default=None)
    s.add_argument("--seed-from-problem", action="store_true", help="seed the coupling from the problem file")
    s.add_argument("--dump-sdp", type=Path, default=None)

    m = sub.add_parser("simulate", help="integrate the closed loop and write a trajectory CSV")
    common(m, "trajectory CSV")
    m.add_argument("--summary", type=Path, default=None, help="summary JSON")
    m.add_argument("--dt", type=float, default=None)
    m.add_argument("--T", type=float, default=None)

    t = sub.add_parser("topology", help="schedule queries")
    t.add_argument("action", choices=("check",))
    common(t, "report JSON (default: stdout)")
    return ap


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    overrides = {
        k: getattr(args, k)
        for k in ("symmetry_tol", "order", "deg_v", "deg_h", "mode", "max_rounds", "seed_from_problem", "dt", "T")
        if hasattr(args, k)
    }
    cfg = RunConfig(
        command=args.command,
        problem=(args.problem or bundled_example()).resolve(),
        out=args.out.resolve() if args.out else None,
        overrides=overrides,
        dump_sdp=getattr(args, "dump_sdp", None),
    )
    try:
        code, payload = COMMANDS[cfg.command](cfg)
    except Exception as exc:  # reported, never a traceback
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if cfg.command == "simulate":
        target = args.summary
        if target is not None:
            _write_json(target.resolve(), payload)
        else:
            print(json.dumps(payload, indent=1, sort_keys=True), file=sys.stderr)
    elif cfg.out is not None:
        _write_json(cfg.out, payload)
    else:
        print(json.dumps(payload, indent=1, sort_keys=True))
    _write_meta(cfg.out, argv, started, {"exit_code": code})
    if code == EXIT_INFEASIBLE:
        print(f"{cfg.command}: infeasible ({payload.get('status', 'see report')})", file=sys.stderr)
    return code


def main():
    sys.exit(run())
