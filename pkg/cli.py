import argparse
import logging
import sys
from typing import List, Optional

from chemostat.common.log import Log
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.experiment import ExperimentConfig
from chemostat.services import recipe_service

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    "simulate-ode": "Integrate the deterministic system",
    "simulate-sde": "Simulate a stochastic ensemble",
    "stability": "Tabulate the steady states and their eigenvalues",
    "sweep": "Survivor map over one or two parameters",
    "asymptotic": "Compare the staged large-feed solution with the full system",
    "fokker-planck": "Evolve the reduced-system density",
    "convergence": "Strong-order study of both stochastic schemes",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file; Table 1 desk defaults when omitted")
    common.add_argument("--seed", type=int, help="Override run.seed")
    common.add_argument("--out", help="Output root directory, overrides output_dir")
    common.add_argument("--full", action="store_true", help="Use full-length horizons instead of desk-scale ones")
    common.add_argument("--log-level", help="Override LOG_LEVEL")
    common.add_argument("--log-file", help="Also write the run log to this file")

    parser = argparse.ArgumentParser(description="Two-population chemostat competition toolkit")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        commands.add_parser(name, parents=[common], help=help_text)
    recipe = commands.add_parser("recipe", parents=[common], help="Run a figure or study recipe")
    recipe.add_argument("name", help=f"One of: {', '.join(recipe_service.available_recipes())}")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config else recipe_service.default_config()
    if args.seed is not None:
        if not 0 <= args.seed < 1 << 64:
            raise ChemostatException(ErrorCode.CONFIG_ERROR, f"--seed must be a u64, got {args.seed}")
        config = config.model_copy(update={"run": config.run.model_copy(update={"seed": args.seed})})
    return config


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns 0 on success, 2 on configuration errors, 3 on numerical failures."""
    args = build_parser().parse_args(argv)
    Log.init(args.log_level, args.log_file)
    try:
        config = load_config(args)
        name = args.name if args.command == "recipe" else args.command
        manifest = recipe_service.run_recipe(name, config, full=args.full, out_dir=args.out)
        logger.info(f"{name}: {len(manifest.outputs)} outputs in {manifest.wall_clock:.1f}s, status {manifest.status}")
        return 0
    except ChemostatException as e:
        logger.error(str(e))
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected failure: {e}", exc_info=True)
        return 3


if __name__ == '__main__':
    sys.exit(main())
