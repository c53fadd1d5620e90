"""Command-line entry point: ``basinflow <subcommand> [--config F] [--set K=V] ...``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import classify, conditions, flow, grid, output, threshold
from .config import ConfigError, RunConfig, parse_config
from .model import QuadratureError

logger = logging.getLogger("basinflow")

EXIT_OK, EXIT_CONFIG, EXIT_METHOD, EXIT_NUMERIC = 0, 1, 2, 3

SUBCOMMANDS = ("simulate", "classify", "threshold", "steady", "verify-conditions", "oracle-check")


class MethodError(RuntimeError):
    """The method ran but could not deliver (no bracket, inconclusive, failed gate)."""


METHOD_ERRORS = (MethodError, threshold.BracketError, threshold.OmegaLimitError)
NUMERIC_ERRORS = (
    ArithmeticError,
    threshold.RefinementError,
    flow.LinearSolveError,
    flow.PicardDivergenceError,
    QuadratureError,
    FloatingPointError,
)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _trace_csv(trace, path):
    return output.write_table(path, flow.TRACE_COLUMNS, trace.rows())


def run_simulate(cfg: RunConfig, out: Path, stages: dict):
    spec, d = cfg.spec(), cfg.domain()
    u0 = cfg["init.scale"] * cfg.initial_direction()
    ccfg = cfg.classifier()
    stop = flow.StopRules(t_max=cfg["simulate.t_end"], decay_h1=ccfg.decay_threshold(grid.norm_h1(u0, d)),
                          blow_l2=ccfg.M_blow)
    trace = flow.evolve(u0, spec, cfg.stepper(), stop, stride=cfg["simulate.stride"],
                        snapshot_stride=cfg["simulate.snapshot_stride"])
    _trace_csv(trace, out / "trace.csv")
    for k, (t, u) in enumerate(trace.snapshots):
        output.write_field(out / f"snapshot_{k:04d}.txt", u, d)
    output.write_field(out / "final.txt", trace.final.u, d)
    stages["simulate"] = trace.status
    print(f"simulate: status={trace.status} t={trace.final.t:.6g} steps={trace.steps}")


def run_classify(cfg: RunConfig, out: Path, stages: dict):
    spec = cfg.spec()
    u0 = cfg["init.scale"] * cfg.initial_direction()
    ccfg = cfg.classifier()
    c = classify.classify_trajectory(u0, spec, ccfg, cfg.stepper())
    header = list(classify.CLASSIFICATION_COLUMNS)
    row = c.csv_row()
    if cfg["classifier.certificate"]:
        cert = classify.blowup_sufficient(u0, spec, ccfg, cfg["classifier.mhat_budget"], cfg.seed)
        header += ["certificate", "Kstar", "Mhat", "energy0_cert", "h1_0_cert"]
        row += cert.csv_values()
    output.write_table(out / "classification.csv", header, [row])
    _trace_csv(c.trace, out / "trace.csv")
    stages["classify"] = c.verdict
    print(f"classify: {c.verdict} (trigger {c.trigger}, t_detect {c.t_detect:.6g})")


def _threshold_table(res: threshold.ThresholdResult, out: Path):
    output.write_table(out / "threshold.csv", ["s_low", "s_high", "s_star", "iterations", "inconclusive"],
                       [[res.s_low, res.s_high, res.s_star, res.iterations, res.inconclusive]])
    output.write_table(out / "bracket_history.csv", ["s_low", "s_high"], res.bracket_history)
    probes = [[p.s, p.verdict, p.classification.trigger, p.classification.t_detect, p.escalation]
              for p in res.probes]
    output.write_table(out / "probes.csv", ["s", "verdict", "trigger", "t_detect", "escalation"], probes)


def run_threshold(cfg: RunConfig, out: Path, stages: dict):
    spec = cfg.spec()
    v = cfg.initial_direction()
    ccfg, scfg, tcfg = cfg.classifier(), cfg.stepper(), cfg.threshold()
    probes: list = []
    bracket = threshold.bracket_ray(v, spec, ccfg, scfg, tcfg, history=probes)
    stages["bracket"] = "ok"
    res = threshold.bisect(v, bracket, spec, ccfg, scfg, tcfg, probes=probes)
    _threshold_table(res, out)
    stages["bisect"] = "inconclusive" if res.inconclusive else "ok"
    print(f"threshold: s* = {res.s_star:.10g} in [{res.s_low:.10g}, {res.s_high:.10g}]")
    if res.inconclusive:
        raise MethodError("bisection inconclusive: Undecided verdicts persisted after escalation")
    return v, res


def run_steady(cfg: RunConfig, out: Path, stages: dict):
    spec, d = cfg.spec(), cfg.domain()
    v, res = run_threshold(cfg, out, stages)
    ccfg, scfg, tcfg = cfg.classifier(), cfg.stepper(), cfg.threshold()
    cand = threshold.extract_omega_limit(v, res, spec, ccfg, scfg, tcfg)
    stages["extract"] = "ok"
    output.write_field(out / "omega_candidate.txt", cand.u, d)
    eps = 10.0 * ccfg.decay_threshold(grid.norm_h1(res.s_low * v, d))
    st = threshold.newton_refine(cand.u, spec, tcfg.newton_tol, eps, tcfg.newton_max_iters,
                                 tcfg.picard_max_iters, tcfg.cond_max)
    st.s_star = res.s_star
    stages["refine"] = st.method
    output.write_field(out / "steady_state.txt", st.u, d)
    output.write_field_csv(out / "steady_state.csv", st.u, d)
    summary = st.summary()
    summary.update(candidate_ut_l2=cand.ut_l2, candidate_side=cand.side, cauchy_distance=cand.cauchy_distance)
    output.write_record(out / "steady.json", summary)
    output.write_table(out / "steady_summary.csv", list(summary), [list(summary.values())])
    if not (st.residual_l2 <= tcfg.newton_tol and st.h1 > eps):
        raise MethodError("steady state failed the residual or nontriviality gate")
    print(f"steady: residual {st.residual_l2:.3e}, ||u_s||_H1 = {st.h1:.6g}, E = {st.energy:.6g}")


def run_verify(cfg: RunConfig, out: Path, stages: dict):
    rep = conditions.verify_conditions(cfg.spec())
    output.write_table(out / "conditions.csv", ["condition", "verdict", "value", "witness", "detail"], rep.rows())
    output.write_table(out / "constants.csv", ["name", "value"], sorted(rep.constants.items()))
    for name, verdict, value, witness, _ in rep.rows():
        print(f"{name:7s} {verdict:12s} {value} {witness}")
    stages["verify"] = "pass" if rep.passed else ("fail" if rep.failures() else "inconclusive")
    if rep.failures():
        raise MethodError(f"conditions failed: {', '.join(rep.failures())}")


def run_oracle(cfg: RunConfig, out: Path, stages: dict):
    spec, d = cfg.spec(), cfg.domain()
    u0 = cfg["init.scale"] * cfg.initial_direction()
    t_end, dt = cfg["oracle.t_end"], cfg["oracle.dt"]
    n_sub = cfg["oracle.n_sub"]
    _, times, traj = flow.mild_solution_oracle(u0, spec, t_end, n_sub=n_sub, return_trajectory=True)
    # IMEX step chosen to land exactly on the oracle's time nodes
    per_node = max(1, int(np.ceil((times[1] - times[0]) / dt - 1e-9)))
    dt = (times[1] - times[0]) / per_node
    step = flow.StepperConfig(dt=dt, solver_tol=cfg["stepper.solver_tol"])
    state = flow.FlowState.initial(u0, spec)
    rows = []
    for i, t in enumerate(times):
        if i:
            for _ in range(per_node):
                state = flow.step_imex(state, spec, step, dt)
        diff = grid.norm_l2(state.u - traj[i], d)
        rows.append([t, grid.norm_l2(state.u, d), grid.norm_l2(traj[i], d), diff])
    output.write_table(out / "oracle_check.csv", ["t", "l2_imex", "l2_mild", "l2_difference"], rows)
    worst = max(r[3] for r in rows)
    stages["oracle"] = "ok"
    print(f"oracle-check: max L2 difference {worst:.3e} over {len(rows)} times")


RUNNERS = {
    "simulate": run_simulate,
    "classify": run_classify,
    "threshold": run_threshold,
    "steady": run_steady,
    "verify-conditions": run_verify,
    "oracle-check": run_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="basinflow", description=__doc__)
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", help="YAML file with dotted keys (e.g. grid.nx: 32)")
    p.add_argument("--preset", help="problem preset: example1, example2, cubic, heat")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, args.preset, args.sets, args.out, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    stages: dict = {}
    start = time.perf_counter()
    code, error = EXIT_OK, ""
    try:
        with np.errstate(over="ignore"):
            RUNNERS[args.command](cfg, out, stages)
    except ConfigError as exc:
        code, error = EXIT_CONFIG, f"config error: {exc}"
    except METHOD_ERRORS as exc:
        code, error = EXIT_METHOD, f"method error: {exc}"
    except NUMERIC_ERRORS as exc:
        code, error = EXIT_NUMERIC, f"numeric failure: {exc}"
    if error:
        print(error, file=sys.stderr)
    entries = {"command": args.command, "version": _version()}
    entries.update({f"config.{k}": v for k, v in cfg.values})
    entries.update({f"stage.{k}": v for k, v in stages.items()})
    entries["exit_code"] = code
    entries["error"] = error
    entries["wall_clock_s"] = round(time.perf_counter() - start, 3)
    output.write_manifest(out, entries)
    return code


if __name__ == "__main__":
    sys.exit(main())
