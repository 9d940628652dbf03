#!/usr/bin/env python3
"""
dds-lab: Denoising Diffusion Samplers laboratory
Trains diffusion-based samplers and estimates normalizing constants
"""

import sys
import json
import argparse
import logging
from pathlib import Path

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def setup_logging(log_level="INFO", log_file="dds-lab.log"):
    """Setup logging configuration"""
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True
    )


def check_dependencies():
    """Check if required dependencies are available"""
    required_modules = ['yaml', 'numpy', 'scipy', 'pandas', 'tqdm']
    missing = []

    for module in required_modules:
        try:
            __import__(module)
        except ImportError:
            missing.append(module)

    return missing


def build_parser():
    parser = argparse.ArgumentParser(prog='dds-lab',
                                     description='Denoising diffusion samplers and ln Z estimation')
    parser.add_argument('--config', '-c', type=str,
                        default=str(Path(__file__).parent / 'config.yaml'),
                        help='Global settings file')
    parser.add_argument('--verbose', '-v', action='store_true',
                        help='Enable debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='Train and evaluate one configuration over its seeds')
    run.add_argument('--config', dest='run_config', required=True,
                     help='Run configuration (.yaml, .json or .toml)')
    run.add_argument('--seed', type=int, help='Run a single seed instead of the configured list')
    run.add_argument('--deterministic', action='store_true',
                     help='Byte-reproducible artifacts (no wall-clock fields, no process pool)')

    sweep = sub.add_parser('sweep', help='Run a hyperparameter grid')
    sweep.add_argument('--grid', required=True, help='Sweep grid file')

    estimate = sub.add_parser('estimate-z', help='Estimate ln Z from a saved checkpoint')
    estimate.add_argument('--checkpoint', required=True, help='Checkpoint written by run')
    estimate.add_argument('--target', help='Preset or target name (default: checkpoint target)')
    estimate.add_argument('--n', type=int, default=2000, help='Number of importance samples')
    estimate.add_argument('--seed', type=int, default=0, help='Evaluation seed')

    report = sub.add_parser('drift-report', help='Compare DDS and PIS drift magnitudes on N(6, 1)')
    report.add_argument('--iterations', type=int, default=0,
                        help='Training iterations (0 uses the analytic drifts)')
    report.add_argument('--K', type=int, default=64, help='Number of steps')
    report.add_argument('--n', type=int, default=2000, help='Paths per sampler')
    report.add_argument('--seed', type=int, default=0, help='Seed')
    report.add_argument('--output', help='Write the JSON report here instead of stdout')

    sub.add_parser('list-presets', help='List named hyperparameter presets')
    return parser


def main(argv=None):
    """Main CLI entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    # Add src directory to path for imports
    sys.path.insert(0, str(Path(__file__).parent / 'src'))

    missing_deps = check_dependencies()
    if missing_deps:
        print(f"❌ Missing required dependencies: {', '.join(missing_deps)}")
        print("Install with: pip install -r requirements.txt")
        return EXIT_ERROR

    from base import ConfigError, DivergenceError
    from orchestrator import ExperimentOrchestrator
    from targets import DatasetError

    interface = ExperimentOrchestrator(config_path=args.config)
    log_settings = interface.config.get('logging') or {}
    log_level = "DEBUG" if args.verbose else log_settings.get('level', 'INFO')
    setup_logging(log_level, log_settings.get('file', 'dds-lab.log'))

    logger = logging.getLogger(__name__)
    logger.info(f"Starting dds-lab {args.command}")

    try:
        if args.command == 'run':
            config = interface.load_run_config(args.run_config, seed=args.seed,
                                               deterministic=True if args.deterministic else None)
            base_dir = str(Path(args.run_config).resolve().parent)
            summary = interface.run(config, base_dir=base_dir)
            print(f"Run '{config.name}' {summary['status']}: median ln Z = {summary['median']} "
                  f"[{summary['lower_quartile']}, {summary['upper_quartile']}]")
            print(f"Artifacts: {summary['run_dir']}")
            if summary['status'] == 'diverged':
                return EXIT_DIVERGED
            return EXIT_OK if summary['status'] == 'completed' else EXIT_ERROR

        elif args.command == 'sweep':
            grid = interface.load_recipe(args.grid)
            base_dir = str(Path(args.grid).resolve().parent)
            result = interface.sweep(grid, base_dir=base_dir)
            for row in result['rows']:
                label = 'diverged' if row['diverged'] else row['status']
                print(f"  cell {row['cell']:02d}: median={row['median']} ({label})")
            print(f"Best cell: {result['best_cell']}")
            print(f"Table: {result['table']}")

        elif args.command == 'estimate-z':
            result = interface.estimate_z(args.checkpoint, args.target, args.n, args.seed)
            print(json.dumps(result, indent=2))

        elif args.command == 'drift-report':
            from experiments import drift_magnitude_report
            report = drift_magnitude_report(K=args.K, iterations=args.iterations, n=args.n,
                                            seed=args.seed)
            text = json.dumps(report, indent=2)
            if args.output:
                Path(args.output).parent.mkdir(parents=True, exist_ok=True)
                Path(args.output).write_text(text)
                print(f"Report written to {args.output}")
            else:
                print(text)

        elif args.command == 'list-presets':
            print("Available Presets:")
            for name in interface.list_presets():
                print(f"  - {name}")

    except (ConfigError, DatasetError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"❌ Configuration error: {e}")
        return EXIT_CONFIG

    except DivergenceError as e:
        logger.error(str(e))
        print(f"❌ {e}")
        return EXIT_DIVERGED

    except Exception as e:
        logger.error(f"Error: {e}")
        print(f"\n❌ Error: {e}")
        return EXIT_ERROR

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
