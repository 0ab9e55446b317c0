"""Command line: ``glmcf run|resume|verify``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import from_dict, key_help, load_config
from .errors import ConfigError, NumericalError
from .flow import CompanionState, run_flow
from .geometry import build_metric
from .monitors import MonitorSuite
from .output import emit_outputs
from .scenarios import Checkpointer, Report, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("glmcf")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="glmcf",
        description="Simulate the Lagrangian angle flow of closed 1-form graphs over a periodic metric torus.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config keys (set in the TOML file or with --set section.key=value):\n" + key_help(),
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run the scenario named in the config"),
                           ("verify", "run the lemma_check scenario for a config")):
        sp = sub.add_parser(name, help=helptext, formatter_class=argparse.RawDescriptionHelpFormatter,
                            epilog="config keys:\n" + key_help())
        sp.add_argument("config", help="TOML experiment config")
        sp.add_argument("--out", help="output directory (overrides run.output_dir)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set flow.t_max=5")
    rp = sub.add_parser("resume", help="continue a flow from a checkpoint")
    rp.add_argument("checkpoint", help="checkpoint file (its .json sidecar must sit next to it)")
    rp.add_argument("--out", help="output directory (default: <output_dir>/resume)")
    return p


def cmd_run(args, scenario: str | None = None) -> int:
    overrides = list(args.overrides)
    if scenario:
        overrides.append(f"run.scenario={scenario}")
    cfg = load_config(args.config, overrides)
    out = Path(args.out or cfg.run.output_dir)
    report = run_scenario(cfg, out_dir=out)
    emit_outputs(report, cfg, out)
    print((out / "report.txt").read_text(), end="")
    return EXIT_OK if report.ok else EXIT_NUMERIC


def cmd_resume(args) -> int:
    path = Path(args.checkpoint)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        state, meta = load_checkpoint(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if "config" not in meta:
        raise ConfigError("checkpoint sidecar lacks the run configuration")
    cfg = from_dict(meta["config"]).validate()
    m = build_metric(cfg.metric_spec(), cfg.grid_obj(state.u.shape[0]))
    suite = MonitorSuite(theta_hat=meta.get("theta_hat", 0.0), k1=cfg.monitors.K1, k2=cfg.monitors.K2,
                         full=cfg.monitors.full)
    if meta.get("label") == "bootstrap":
        suite = MonitorSuite.light()
    fc = cfg.flow_config()
    if meta.get("label") == "bootstrap":
        fc = cfg.flow_config(osc_tol=cfg.bootstrap.osc_tol, t_max=cfg.bootstrap.t_max)
    comp = None
    if "companion" in meta:
        comp = CompanionState(np.array(meta["companion"], dtype=float).reshape(state.u.shape), state.t)
    out = Path(args.out or Path(cfg.run.output_dir) / "resume")
    label = meta.get("label", "resume")
    ck = Checkpointer(out, label, cfg, {k: meta[k] for k in ("theta_hat", "dt", "sample_every") if k in meta})
    traj = run_flow(state, m, fc, suite, dt=meta["dt"], sample_every=meta["sample_every"],
                    start_step=int(meta["step"]), companion=comp, on_checkpoint=ck)
    ck.final(traj)
    report = Report(f"{cfg.run.scenario} (resumed {label} from step {meta['step']})", {label: traj})
    report.ok = traj.termination != "diverged"
    emit_outputs(report, cfg, out)
    print((out / "report.txt").read_text(), end="")
    return EXIT_OK if report.ok else EXIT_NUMERIC


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "verify":
            return cmd_run(args, "lemma_check")
        return cmd_resume(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
