"""This module provides the main function to run TiDeSym."""
import argparse
import logging
import sys

from json_handler import write_json, read_config
from pdf_handler import create_pdf_from_json_and_plots
from graph import plot_trajectory, create_model_graph, create_strategy_graph, draw_graph
from dde_solver import IntegrationError
from spline_approx import BudgetExceeded
from synthesis import UnrealizableError, StrategyHole
from tidesym_helper import *

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3


def _summary(outputs, quiet):
    if quiet:
        return
    print("Processing complete. Output files generated:")
    for label, path in outputs:
        print(f"  {label}: {path}")


def cmd_simulate(setup: RunSetup, out_dir=None, quiet=False, **_) -> int:
    """
    Simulates the configured system under a constant input.

    Args:
        setup (RunSetup): Validated configuration.
        out_dir (str): Output directory overriding the configuration.
        quiet (bool): Suppress the summary.
    """
    trajectory = run_simulation(setup)
    csv_output = write_trajectory_csv(trajectory, output_path(setup.config, out_dir, 'simulation.csv'))
    plot_output = plot_trajectory(trajectory, title=f"Open loop: {setup.system.get_name()}",
                                  save_path=output_path(setup.config, out_dir, 'simulation.png'))
    _summary([('CSV', csv_output), ('Plot', plot_output)], quiet)
    return EXIT_OK


def cmd_certify(setup: RunSetup, out_dir=None, quiet=False, seed=0, **_) -> int:
    """Falsifies the certificates and reports the derived bounds."""
    report = run_certification(setup, seed)
    json_output = write_json(report, output_path(setup.config, out_dir, 'certificate.json'))
    for falsification in report['falsification']:
        if not falsification.passed:
            print(f"{falsification.kind} violated: {falsification.witness}")
    _summary([('JSON', json_output)], quiet)
    return EXIT_OK if report['passed'] else EXIT_FAILURE


def cmd_abstract(setup: RunSetup, out_dir=None, quiet=False, seed=0, **_) -> int:
    """Builds the symbolic model on the fly from the initial condition."""
    trials = int(setup.config.get('abstraction', {}).get('regularity_trials', 100))
    model, summary = run_abstraction(setup, trials, seed)
    model_output, sidecar = save_model(model, output_path(setup.config, out_dir, 'model.txt'))
    json_output = write_json(summary, output_path(setup.config, out_dir, 'model.json'))
    outputs = [('Model', model_output), ('States', sidecar), ('JSON', json_output)]
    if model.num_states <= 2000:
        outputs.append(('Graph', draw_graph(create_model_graph(model), output_path(setup.config, out_dir, 'model.png'))))
    _summary(outputs, quiet)
    return EXIT_OK if summary['regularity'].passed else EXIT_FAILURE


def cmd_synthesize(setup: RunSetup, out_dir=None, quiet=False, model_path=None, **_) -> int:
    """Synthesizes a strategy on a model produced by the abstract command."""
    model = load_model(model_path or output_path(setup.config, out_dir, 'model.txt'), setup)
    strategy = run_synthesis(setup, model)
    strategy_output = save_strategy(strategy, output_path(setup.config, out_dir, 'strategy.txt'))
    outputs = [('Strategy', strategy_output)]
    if len(strategy) <= 2000:
        outputs.append(('Graph', draw_graph(create_strategy_graph(strategy),
                                            output_path(setup.config, out_dir, 'strategy.png'))))
    _summary(outputs, quiet)
    return EXIT_OK


def cmd_run(setup: RunSetup, out_dir=None, quiet=False, seed=0, strategy_path=None, **_) -> int:
    """Executes a synthesized strategy in closed loop and writes the verdict."""
    strategy = load_strategy(strategy_path or output_path(setup.config, out_dir, 'strategy.txt'), setup.spec)
    trajectory, report = run_closed_loop(setup, strategy, seed)
    report['system'] = setup.system.get_name()
    csv_output = write_trajectory_csv(trajectory, output_path(setup.config, out_dir, 'closed_loop.csv'))
    plot_output = plot_trajectory(trajectory, setup.spec, title=f"Closed loop: {setup.system.get_name()}",
                                  save_path=output_path(setup.config, out_dir, 'closed_loop.png'))
    json_output = write_json(report, output_path(setup.config, out_dir, 'verdict.json'))
    pdf_output = create_pdf_from_json_and_plots(json_output, [plot_output],
                                                filename=output_path(setup.config, out_dir, 'report.pdf'))
    if not quiet:
        for phase in report['verdict'].phases:
            print(f"Phase {phase.index} ({phase.mode}): {'PASS' if phase.passed else 'FAIL'}")
        print(f"Overall: {'PASS' if report['passed'] else 'FAIL'}")
    _summary([('CSV', csv_output), ('Plot', plot_output), ('JSON', json_output), ('PDF Report', pdf_output)], quiet)
    return EXIT_OK if report['passed'] else EXIT_FAILURE


COMMAND_TABLE = {
    'simulate': cmd_simulate,
    'certify': cmd_certify,
    'abstract': cmd_abstract,
    'synthesize': cmd_synthesize,
    'run': cmd_run,
}


def tidesym(command, config_file, out_dir=None, seed=None, budget=None, quiet=False, model_path=None,
            strategy_path=None) -> int:
    """
    Runs one TiDeSym command and maps failures to exit codes.

    Args:
        command (str): One of simulate, certify, abstract, synthesize, run.
        config_file (str): Path to the JSON run configuration.
        out_dir (str): Output directory overriding the configuration.
        seed (int): Seed overriding the configuration.
        budget (int): State budget overriding the configuration.
        quiet (bool): Log warnings only and suppress the summary.

    Returns:
        int: 0 on success, 1 on a property or specification failure, 2 on a configuration
        error, 3 on resource exhaustion.
    """
    try:
        config = read_config(config_file)
        if budget is not None:
            config['budget'] = budget
        seed = int(config.get('seed', 0)) if seed is None else seed
        setup = validate_config(config, command)
        return COMMAND_TABLE[command](setup, out_dir=out_dir, quiet=quiet, seed=seed, model_path=model_path,
                                      strategy_path=strategy_path)
    except (ConfigError, FileNotFoundError) as error:
        print(f"Configuration error: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as error:
        print(f"Budget exceeded: {error}", file=sys.stderr)
        return EXIT_BUDGET
    except UnrealizableError as error:
        print(f"unrealizable: losing initial state {error.state}", file=sys.stderr)
        return EXIT_FAILURE
    except StrategyHole as error:
        print(f"Strategy hole at {error.state}", file=sys.stderr)
        return EXIT_FAILURE
    except IntegrationError as error:
        print(f"Integration failed: {error} {error.witness}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as error:
        print(f"Configuration error: {error}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None):
    """Main function to run TiDeSym."""
    parser = argparse.ArgumentParser(description="Run TiDeSym.")
    parser.add_argument("command", choices=sorted(COMMAND_TABLE), help="Pipeline stage to run")
    parser.add_argument("--config", required=True, help="Path to the run configuration JSON file")
    parser.add_argument("--out", default=None, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Seed of every random draw")
    parser.add_argument("--budget", type=int, default=None, help="State budget of the abstraction")
    parser.add_argument("--model", default=None, help="Model file consumed by synthesize")
    parser.add_argument("--strategy", default=None, help="Strategy file consumed by run")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    return tidesym(
        command=args.command,
        config_file=args.config,
        out_dir=args.out,
        seed=args.seed,
        budget=args.budget,
        quiet=args.quiet,
        model_path=args.model,
        strategy_path=args.strategy
    )


if __name__ == "__main__":
    sys.exit(main())
