"""
Command-line entry point: run, compare, schema, scenarios
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from runner import (
    CONFIG_SCHEMA,
    apply_overrides,
    compare_runs,
    load_config,
    run,
    scenario_catalog,
)
from utils.helpers import SimulationError

logger = logging.getLogger('application')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='separable-thermo',
        description='Free and separability-constrained open quantum dynamics with heat bookkeeping')
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Logging verbosity')
    commands = parser.add_subparsers(dest='command', required=True)

    run_parser = commands.add_parser('run', help='Run a configuration file')
    run_parser.add_argument('config', help='JSON run configuration')
    run_parser.add_argument('--out', help='Output directory (overrides the configuration)')
    run_parser.add_argument('--seed', type=int, help='Master seed')
    run_parser.add_argument('--n-traj', type=int, dest='n_traj', help='Trajectories per initial branch')
    run_parser.add_argument('--full', action='store_true', help='Use the published trajectory counts')
    run_parser.add_argument('--jobs', type=int, default=os.cpu_count() or 1, help='Worker processes')

    compare_parser = commands.add_parser('compare', help='Compare the results of two runs')
    compare_parser.add_argument('run_dir_a')
    compare_parser.add_argument('run_dir_b')
    compare_parser.add_argument('--sigma', type=float, default=3.0, help='Agreement threshold in standard errors')

    commands.add_parser('schema', help='Print the configuration schema')
    commands.add_parser('scenarios', help='List scenarios with their default parameters')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stdout)],
        force=True,
    )
    try:
        if args.command == 'schema':
            print(json.dumps(CONFIG_SCHEMA, indent=2))
        elif args.command == 'scenarios':
            print(json.dumps(scenario_catalog(), indent=2))
        elif args.command == 'compare':
            report = compare_runs(args.run_dir_a, args.run_dir_b, args.sigma)
            print(report.to_string(index=False))
        else:
            if args.jobs < 1:
                print("--jobs must be >= 1", file=sys.stderr)
                return 2
            config = apply_overrides(load_config(args.config), out=args.out, seed=args.seed,
                                     n_traj=args.n_traj, full=args.full)
            out_dir = run(config, jobs=args.jobs)
            print(out_dir)
        return 0
    except SimulationError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        return 1


if __name__ == '__main__':
    sys.exit(main())
