"""Command line entry point: ``study run`` and ``study matrix``."""
from __future__ import annotations

import argparse
import sys

from .config import load_config
from .scenarios import ScenarioConfig, study_matrix, run_study

_CASE_SITING = {1: "none", 2: "g4", 3: "l1", 4: "l1"}


def _onoff(s: str) -> bool:
    if s not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return s == "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="study", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="analyze one scenario")
    run.add_argument("--case", type=int, required=True, choices=(1, 2, 3, 4))
    run.add_argument("--penetration", type=float, default=None,
                     help="fraction of the 900 MVA reference (default 0 for case 1, else 0.25)")
    run.add_argument("--siting", choices=("none", "g4", "l1"), default=None)
    run.add_argument("--pss", type=_onoff, default=False)
    run.add_argument("--vctrl", type=_onoff, default=None)
    run.add_argument("--sdc", type=_onoff, default=None)
    run.add_argument("--timedomain", type=_onoff, default=False)
    run.add_argument("--config", default=None)
    run.add_argument("--out", default="out")

    mat = sub.add_parser("matrix", help="run a scenario matrix")
    mat.add_argument("--paper", action="store_true", required=True,
                     help="the 16-scenario matrix of cases 1-4")
    mat.add_argument("--timedomain", type=_onoff, default=False)
    mat.add_argument("--config", default=None)
    mat.add_argument("--out", default="out")
    return p


def _scenario(args) -> ScenarioConfig:
    pen = args.penetration
    if pen is None:
        pen = 0.0 if args.case == 1 else 0.25
    controls = args.case == 4
    return ScenarioConfig(args.case, pen, args.siting or _CASE_SITING[args.case], args.pss,
                          controls if args.vctrl is None else args.vctrl,
                          controls if args.sdc is None else args.sdc,
                          timedomain=args.timedomain)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            configs = [_scenario(args)]
        else:
            configs = [ScenarioConfig(**{**sc.as_dict(), "timedomain": args.timedomain})
                       for sc in study_matrix()]
    except (ValueError, OSError) as exc:
        print(f"study: {exc}", file=sys.stderr)
        return 2
    report = run_study(configs, cfg)
    report.write(args.out)
    for r in report.results:
        if r.ok:
            ia = r.inter_area
            txt = "no inter-area mode" if ia is None else \
                f"inter-area {ia.sigma:+.4f}{ia.omega:+.4f}j zeta={ia.damping:+.4f} f={ia.freq_hz:.4f} Hz"
            print(f"{r.config.label:32s} {txt}")
        else:
            print(f"{r.config.label:32s} ERROR {r.error}")
    return 1 if report.failed else 0


if __name__ == "__main__":
    sys.exit(main())
