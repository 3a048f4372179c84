"""Command-line interface for the AVS simulator."""

import argparse
import json
import logging
import sys
from pathlib import Path

from config import config
from control_plane import ParseError, read_script
from dpp_io import DppValidationError, MalformedLine, load_dpp, read_trace, write_trace
from dpp_models import DppModel
from pipeline import COMPONENTS, run_device
from scorecard import InvalidScore, UnknownComponent, load_matrix, score

logger = logging.getLogger(__name__)


class AVSCLI:
    """Command-line front end: run, validate, score and inspect."""

    def __init__(self):
        self.parser = self.build_parser()

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="avs",
            description="Reference simulator for programmable data-plane devices",
        )
        sub = parser.add_subparsers(dest="command", required=True)

        run = sub.add_parser("run", help="Replay a packet trace through a program")
        run.add_argument("--program", required=True, help="Data-plane program (JSON)")
        run.add_argument("--trace", required=True, help="Input trace: <time_ns> <port> <hex>")
        run.add_argument("--out", help="Output trace file (default: stdout)")
        run.add_argument("--stats", help="Write run statistics as JSON")
        run.add_argument("--cp", help="Control-plane script")
        run.add_argument("--link-delay-ns", type=int, default=None,
                         help=f"Link delay added to emissions (default {config.LINK_DELAY_NS})")
        run.add_argument("--seed", type=int, default=None, help="Reserved; runs are deterministic")
        run.add_argument("--log-events", help="Write the per-packet lifecycle log")

        validate = sub.add_parser("validate", help="Validate a program")
        validate.add_argument("--program", required=True)

        scorecard = sub.add_parser("score", help="Programmability scorecard of a feature matrix")
        scorecard.add_argument("--features", required=True, help="Feature matrix (JSON)")
        scorecard.add_argument("--lenient", action="store_true",
                               help="Report out-of-domain scores instead of rejecting them")

        sub.add_parser("schema", help="Print the program JSON schema")
        sub.add_parser("config", help="Show effective configuration")
        sub.add_parser("components", help="List pipeline components and their programmable features")
        return parser

    def print_banner(self, title: str):
        print("=" * 70)
        print(title)
        print("=" * 70)

    def print_diagnostics(self, exc: DppValidationError):
        print(f"❌ {exc}", file=sys.stderr)
        for diag in exc.diagnostics:
            print(f"  {diag}", file=sys.stderr)

    def cmd_run(self, args) -> int:
        if args.seed is not None:
            logger.debug("--seed %d ignored; the simulator has no random choices", args.seed)
        try:
            dpp = load_dpp(args.program)
            trace = read_trace(args.trace)
            script = read_script(args.cp) if args.cp else None
        except DppValidationError as e:
            self.print_diagnostics(e)
            return 1
        except (MalformedLine, ParseError, OSError) as e:
            print(f"❌ Error: {e}", file=sys.stderr)
            return 1

        device = run_device(dpp, trace, script, args.link_delay_ns, record_events=bool(args.log_events))
        stats = device.stats

        if args.out:
            write_trace(args.out, device.outputs)
        else:
            for record in device.outputs:
                print(f"{record.time_ns} {record.port} {record.data.hex()}".rstrip())
        if args.stats:
            Path(args.stats).write_text(
                json.dumps(stats.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
        if args.log_events:
            Path(args.log_events).write_text("".join(line + "\n" for line in device.event_log))

        if args.out:
            print(f"✓ {stats.arrivals} packets in, {stats.emissions} out, {stats.total_drops} dropped")
            for reason, count in sorted(stats.drops_by_reason.items()):
                print(f"    {reason}: {count}")
        for error in stats.cp_errors:
            print(f"⚠ control plane: {error}", file=sys.stderr)
        return 0

    def cmd_validate(self, args) -> int:
        try:
            dpp = load_dpp(args.program)
        except DppValidationError as e:
            self.print_diagnostics(e)
            return 1
        except OSError as e:
            print(f"❌ Error: {e}", file=sys.stderr)
            return 1
        print(f"✓ Program '{dpp.name}' is valid")
        return 0

    def cmd_score(self, args) -> int:
        try:
            report = score(load_matrix(args.features), strict=not args.lenient)
        except (InvalidScore, UnknownComponent) as e:
            print(f"❌ {e}", file=sys.stderr)
            return 1
        except (OSError, ValueError) as e:
            print(f"❌ Error: {e}", file=sys.stderr)
            return 1
        self.print_banner("Programmability comparison")
        print(report.render())
        return 0

    def cmd_schema(self, args) -> int:
        print(json.dumps(DppModel.model_json_schema(), indent=2))
        return 0

    def cmd_config(self, args) -> int:
        config.display_config()
        return 0

    def cmd_components(self, args) -> int:
        self.print_banner("Pipeline components")
        for component in COMPONENTS:
            print(f"{component.title} [{', '.join(component.instances)}]")
            print(f"    {component.input_space} -> {component.output_space}")
            print(f"    logic: {component.proc_logic}; parameters: {component.conf_param}")
            print(f"    load time: {', '.join(component.ctp) or '-'}")
            print(f"    run time:  {', '.join(component.rtc) or '-'}")
        return 0

    def run(self, argv=None) -> int:
        args = self.parser.parse_args(argv)
        handler = getattr(self, f"cmd_{args.command}")
        return handler(args)


def main(argv=None):
    """Entry point for the CLI."""
    logging.basicConfig(
        level=config.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    sys.exit(AVSCLI().run(argv))


if __name__ == "__main__":
    main()
