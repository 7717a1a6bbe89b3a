"""This module provides configuration handling and the pipeline stages of TiDeSym."""
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from time_delay_system import (SystemDef, HistorySegment, DelayRealization, ControlSegment, BUILTIN_SYSTEMS,
                               create_system)
from dde_solver import Trajectory, simulate, resolve_step
from certificates import (KLExp, KLinear, IdssCertificate, IssCertificate, DerivedBounds, compute_bounds,
                          check_idss_sampled, check_iss_sampled, assumption_report, sample_delay_parameters)
from spline_approx import QuantizationParams, solve_quantization, cond3_value
from transition_system import FiniteATS
from abstraction import (AbstractionConfig, build_onthefly, export_state_table, import_state_table,
                         verify_regularity_invariance, check_initial_regularity)
from synthesis import (PhaseSpec, Strategy, synthesize, strategy_export, strategy_from_table, StrategyTable,
                       execute_closed_loop, ClosedLoopVerdict)

logger = logging.getLogger(__name__)

CERTIFICATE_LOOKUP: Dict[str, Dict[str, Any]] = {
    'pola2012-example': {
        'beta': {'c': 4.3580, 'a': 1.087},
        'gamma_u': 13.5647,
        'gamma_d': 194.1666,
        'beta_iss': {'c': 2.8920, 'a': 1.087},
        'gamma_iss': 0.9592,
    },
    'scalar-toy': {
        'beta': {'c': 2.1, 'a': 1.75},
        'gamma_u': 1.12,
        'gamma_d': 1.0,
        'beta_iss': {'c': 2.1, 'a': 1.75},
        'gamma_iss': 1.12,
    },
}

SYSTEM_OVERRIDE_KEYS: Dict[str, str] = {
    'delta_min_s': 'delta_min',
    'delta_max_s': 'delta_max',
    'r_s': 'r',
    'd_slope': 'd_slope',
    'b_u': 'b_u',
    'b_x0': 'b_x0',
    'm_1': 'm_1',
}

COMMANDS = ('simulate', 'certify', 'abstract', 'synthesize', 'run')


class ConfigError(ValueError):
    """Configuration problem, reported with the dotted key path."""
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class RunSetup:
    """Objects built from a validated configuration."""
    config: Dict
    system: SystemDef
    idss: IdssCertificate
    iss: IssCertificate
    bounds: DerivedBounds
    params: QuantizationParams
    abstraction: AbstractionConfig
    spec: Optional[PhaseSpec]
    xi0: HistorySegment
    delay: DelayRealization


def _section(config: Dict, key: str, required: bool = True) -> Dict:
    value = config.get(key)
    if value is None:
        if required:
            raise ConfigError(key, "missing section")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(key, "must be an object")
    return value


def _number(section: Dict, path: str, key: str, default=None, positive: bool = False) -> Optional[float]:
    if key not in section:
        if default is None:
            raise ConfigError(f"{path}.{key}", "missing key")
        return default
    try:
        value = float(section[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {section[key]!r}") from None
    if positive and value <= 0:
        raise ConfigError(f"{path}.{key}", f"must be positive, got {value}")
    return value


def _integer(section: Dict, path: str, key: str, default=None, minimum: int = 0) -> int:
    value = _number(section, path, key, default)
    if value != int(value) or value < minimum:
        raise ConfigError(f"{path}.{key}", f"expected an integer >= {minimum}, got {value}")
    return int(value)


def build_system(config: Dict) -> SystemDef:
    section = _section(config, 'system')
    name = section.get('name')
    if name not in BUILTIN_SYSTEMS:
        raise ConfigError('system.name', f"unknown system {name!r}; known: {sorted(BUILTIN_SYSTEMS)}")
    overrides = {}
    for key, value in section.get('overrides', {}).items():
        if key not in SYSTEM_OVERRIDE_KEYS:
            raise ConfigError(f"system.overrides.{key}", f"unknown key; known: {sorted(SYSTEM_OVERRIDE_KEYS)}")
        overrides[SYSTEM_OVERRIDE_KEYS[key]] = _number(section['overrides'], 'system.overrides', key)
    try:
        return create_system(name, **overrides)
    except ValueError as error:
        raise ConfigError('system', str(error)) from error


def build_certificates(config: Dict, system: SystemDef) -> Tuple[IdssCertificate, IssCertificate]:
    """Certificate constants from the config, falling back to the built-in table entry of the system."""
    section = dict(CERTIFICATE_LOOKUP.get(system.name, {}))
    section.update(_section(config, 'certificate', required=False))
    try:
        idss = IdssCertificate(beta=KLExp(float(section['beta']['c']), float(section['beta']['a'])),
                               gamma_u=KLinear(float(section['gamma_u'])),
                               gamma_d=KLinear(float(section['gamma_d'])))
        iss = IssCertificate(beta_iss=KLExp(float(section['beta_iss']['c']), float(section['beta_iss']['a'])),
                             gamma_iss=KLinear(float(section['gamma_iss'])))
    except KeyError as error:
        raise ConfigError(f"certificate.{error.args[0]}", "missing key") from None
    except (TypeError, ValueError) as error:
        raise ConfigError('certificate', str(error)) from None
    return idss, iss


def build_bounds(config: Dict, system: SystemDef, iss: IssCertificate) -> DerivedBounds:
    section = _section(config, 'bounds', required=False)
    kappa = section.get('kappa')
    b_j = section.get('b_j')
    grid_step = _number(section, 'bounds', 'grid_step', 0.05, positive=True)
    return compute_bounds(system, iss, grid_step, kappa=None if kappa is None else float(kappa),
                          b_j=None if b_j is None else float(b_j))


def build_quantization(config: Dict, system: SystemDef, idss: IdssCertificate,
                       bounds: DerivedBounds) -> QuantizationParams:
    """
    Manual parameters when tau_s and the spline keys are given, otherwise the automatic recipe.
    Either way cond3 is verified.
    """
    section = _section(config, 'quantization')
    epsilon = _number(section, 'quantization', 'epsilon', positive=True)
    m_d = _number(_section(config, 'bounds', required=False), 'bounds', 'M_D', 0.0)
    manual = None
    if not section.get('auto', False):
        manual = {'tau': _number(section, 'quantization', 'tau_s', positive=True),
                  'N_X': _integer(section, 'quantization', 'N_X'),
                  'theta_X': _number(section, 'quantization', 'theta_X', positive=True),
                  'N_D': _integer(section, 'quantization', 'N_D'),
                  'theta_D': _number(section, 'quantization', 'theta_D', positive=True),
                  'lambda_U': _number(section, 'quantization', 'lambda_U', positive=True)}
    try:
        return solve_quantization(epsilon, idss, bounds.m_x, m_d, system.delta_max, tau_min=2 * system.delta_max,
                                  r=system.r, manual=manual,
                                  tau_step=_number(section, 'quantization', 'tau_step_s', 0.1, positive=True))
    except ValueError as error:
        raise ConfigError('quantization', str(error)) from error


def build_abstraction(config: Dict, params: QuantizationParams, idss: IdssCertificate,
                      bounds: DerivedBounds) -> AbstractionConfig:
    section = _section(config, 'abstraction', required=False)
    mode = section.get('disturbance_mode', 'exact')
    coarse = section.get('theta_D_coarse')
    budget = config.get('budget', section.get('max_states', 100_000))
    h_int = section.get('h_int_s')
    try:
        return AbstractionConfig(params=params, cert=idss, b_x=bounds.b_x, disturbance_mode=mode,
                                 theta_D_coarse=None if coarse is None else float(coarse),
                                 max_states=int(budget),
                                 label_budget=_integer(section, 'abstraction', 'label_budget', 10_000, 1),
                                 candidate_budget=_integer(section, 'abstraction', 'candidate_budget', 100_000, 1),
                                 control_stride=_integer(section, 'abstraction', 'control_stride', 1, 1),
                                 h_int=None if h_int is None else float(h_int),
                                 density=_integer(section, 'abstraction', 'density', 10, 1))
    except ValueError as error:
        raise ConfigError('abstraction', str(error)) from error


def intersample_margin(config: Dict, bounds: DerivedBounds, params: QuantizationParams) -> float:
    """L tau when the inter-sample guard is enabled, else 0."""
    section = _section(config, 'abstraction', required=False)
    return float(bounds.L * params.tau) if section.get('intersample_guard', False) else 0.0


def build_spec(config: Dict, system: SystemDef, params: QuantizationParams, margin: float) -> PhaseSpec:
    try:
        spec = PhaseSpec.from_config(_section(config, 'spec'), params.tau, system.n)
    except (KeyError, TypeError) as error:
        raise ConfigError('spec', f"malformed specification ({error})") from None
    except ValueError as error:
        raise ConfigError('spec', str(error)) from error
    try:
        spec.eroded(params.epsilon + margin)
    except ValueError as error:
        raise ConfigError('spec', str(error)) from error
    return spec


def build_initial_condition(config: Dict, system: SystemDef) -> HistorySegment:
    section = _section(config, 'initial_condition', required=False)
    value = section.get('constant', [0.0] * system.n)
    if len(value) != system.n:
        raise ConfigError('initial_condition.constant', f"expected {system.n} values, got {len(value)}")
    return HistorySegment.constant(value, system.delta_max)


def build_delay(config: Dict, system: SystemDef) -> DelayRealization:
    """The delay realization of simulations and closed-loop runs (default: slow sinusoid)."""
    section = _section(config, 'delay_realization', required=False)
    kind = section.get('kind', 'slow_sinusoid')
    path = 'delay_realization'
    if kind == 'slow_sinusoid':
        return DelayRealization.slow_sinusoid(system, _number(section, path, 'omega_rad_s', 0.01))
    if kind == 'constant':
        return DelayRealization.constant(_number(section, path, 'value_s'))
    if kind == 'sinusoid':
        return DelayRealization.sinusoid(_number(section, path, 'mid_s'), _number(section, path, 'amp_s'),
                                         _number(section, path, 'omega_rad_s'),
                                         _number(section, path, 'phase_rad', 0.0))
    raise ConfigError(f"{path}.kind", f"unknown kind {kind!r}")


def validate_config(config: Dict, command: str) -> RunSetup:
    """
    Validates a configuration for a command and builds its objects. Nothing is written; every
    cross-check runs before any long computation.

    Raises:
        ConfigError: Naming the offending key.
    """
    if command not in COMMANDS:
        raise ConfigError('command', f"unknown command {command!r}")
    system = build_system(config)
    idss, iss = build_certificates(config, system)
    bounds = build_bounds(config, system, iss)
    params = build_quantization(config, system, idss, bounds)
    try:
        resolve_step(system, params.tau, _section(config, 'abstraction', required=False).get('h_int_s'))
    except ValueError as error:
        raise ConfigError('abstraction.h_int_s', str(error)) from error
    checks = assumption_report(system, iss, idss, params.tau, params.epsilon, cond3_value(idss, params))
    if command in ('abstract', 'synthesize', 'run'):
        for name, check in checks.items():
            if not check.holds:
                raise ConfigError('quantization', f"assumption '{name}' fails: {check.value:.6g} vs {check.bound:.6g}")
    abstraction = build_abstraction(config, params, idss, bounds)
    spec = None
    if command in ('synthesize', 'run'):
        spec = build_spec(config, system, params, intersample_margin(config, bounds, params))
    xi0 = build_initial_condition(config, system)
    regularity = check_initial_regularity(xi0, system, params.M_X)
    if regularity['norm'] > system.b_x0:
        raise ConfigError('initial_condition', f"norm {regularity['norm']:.6g} exceeds B_X0 = {system.b_x0}")
    if command in ('certify',):
        trials = _section(config, 'falsification').get('trials')
        if not isinstance(trials, int) or trials < 1:
            raise ConfigError('falsification.trials', f"expected a positive integer, got {trials!r}")
    return RunSetup(config=config, system=system, idss=idss, iss=iss, bounds=bounds, params=params,
                    abstraction=abstraction, spec=spec, xi0=xi0, delay=build_delay(config, system))


def output_path(config: Dict, out_dir: Optional[str], suffix: str) -> str:
    section = _section(config, 'output', required=False)
    directory = out_dir or section.get('directory', 'output')
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, f"{section.get('prefix', 'tidesym')}_{suffix}")


def write_trajectory_csv(trajectory: Trajectory, path: str) -> str:
    """Writes time, states, inputs, delay and phase columns with 17 significant digits."""
    np.savetxt(path, trajectory.to_array(), delimiter=',', fmt='%.17g', header=trajectory.header(), comments='')
    return path


def run_simulation(setup: RunSetup) -> Trajectory:
    """Open-loop run with a constant input over the configured horizon."""
    section = _section(setup.config, 'simulation', required=False)
    tau = setup.params.tau
    horizon = _number(section, 'simulation', 'horizon_s', 10 * tau, positive=True)
    periods = int(np.ceil(horizon / tau - 1e-9))
    control = ControlSegment.of(section.get('input', [0.0] * setup.system.m))
    h_int = setup.abstraction.h_int
    return simulate(setup.system, setup.xi0, [control] * periods, setup.delay, periods, tau, h_int)


def run_certification(setup: RunSetup, seed: int) -> Dict:
    """Bounds, assumption checks and sampled falsification of both certificates."""
    section = _section(setup.config, 'falsification')
    params = setup.params
    trials = int(section['trials'])
    horizon = _number(section, 'falsification', 'horizon_s', 5 * params.tau, positive=True)
    idss_report = check_idss_sampled(setup.system, setup.idss, trials, horizon, seed, params.tau, setup.abstraction.h_int)
    iss_report = check_iss_sampled(setup.system, setup.iss, trials, horizon, seed + 1, params.tau,
                                   setup.abstraction.h_int)
    cond3 = cond3_value(setup.idss, params)
    checks = assumption_report(setup.system, setup.iss, setup.idss, params.tau, params.epsilon, cond3)
    return {
        'system': setup.system.get_name(),
        'bounds': {'B_X': setup.bounds.b_x, 'L': setup.bounds.L, 'kappa': setup.bounds.kappa,
                   'B_J': setup.bounds.b_j, 'M_X': setup.bounds.m_x},
        'quantization': {'tau': params.tau, 'N_X': params.N_X, 'theta_X': params.theta_X, 'N_D': params.N_D,
                         'theta_D': params.theta_D, 'lambda_U': params.lambda_U, 'lambda_X': params.lambda_X,
                         'lambda_D': params.lambda_D, 'epsilon': params.epsilon, 'cond3': cond3,
                         'margin': params.epsilon - cond3},
        'assumptions': {name: vars(check) for name, check in checks.items()},
        'falsification': [idss_report, iss_report],
        'passed': idss_report.passed and iss_report.passed and all(check.holds for check in checks.values()),
    }


def run_abstraction(setup: RunSetup, trials: int, seed: int) -> Tuple[FiniteATS, Dict]:
    """Regularity check, then the on-the-fly model."""
    regularity = verify_regularity_invariance(setup.system, setup.iss, setup.abstraction, trials, seed)
    model = build_onthefly(setup.system, setup.abstraction, setup.xi0)
    summary = {'states': model.num_states, 'transitions': sum(len(t) for t in model.transitions.values()),
               'control_labels': len(model.control_labels), 'disturbance_labels': len(model.disturbance_labels),
               'frontier': len(model.frontier), 'tolerance': model.meta['tolerance'], 'regularity': regularity}
    return model, summary


def run_synthesis(setup: RunSetup, model: FiniteATS) -> Strategy:
    margin = intersample_margin(setup.config, setup.bounds, setup.params)
    return synthesize(model, setup.spec, setup.params.epsilon, margin)


def random_delays(system: SystemDef, count: int, seed: int, m_d: Optional[float]) -> List[DelayRealization]:
    rng = np.random.default_rng(seed)
    return [DelayRealization.sinusoid(*row) for row in sample_delay_parameters(system, count, rng, m_d)]


def run_closed_loop(setup: RunSetup, strategy: Strategy, seed: int) -> Tuple[Trajectory, Dict]:
    """Closed loop under the configured delay, then under random admissible delays."""
    trajectory, verdict = execute_closed_loop(setup.system, strategy, setup.delay, setup.xi0,
                                              h_int=setup.abstraction.h_int)
    count = int(_section(setup.config, 'falsification', required=False).get('random_delays', 0))
    extra: List[ClosedLoopVerdict] = []
    for delay in random_delays(setup.system, count, seed, setup.params.M_D or None):
        extra.append(execute_closed_loop(setup.system, strategy, delay, setup.xi0, h_int=setup.abstraction.h_int)[1])
    report = {'verdict': verdict, 'random_delays': extra,
              'passed': verdict.passed and all(v.passed for v in extra)}
    return trajectory, report


def load_strategy(path: str, spec: PhaseSpec) -> Strategy:
    with open(path, 'r') as infile:
        return strategy_from_table(StrategyTable.from_text(infile.read()), spec)


def save_model(model: FiniteATS, path: str) -> Tuple[str, str]:
    """Writes the model text and its state table sidecar."""
    sidecar = os.path.splitext(path)[0] + '_states.txt'
    with open(path, 'w') as outfile:
        outfile.write(model.to_text())
    with open(sidecar, 'w') as outfile:
        outfile.write(export_state_table(model))
    return path, sidecar


def save_strategy(strategy: Strategy, path: str) -> str:
    with open(path, 'w') as outfile:
        outfile.write(strategy_export(strategy).to_text())
    return path


def load_model(path: str, setup: RunSetup) -> FiniteATS:
    """
    Reads a model and its state table back; the control alphabet is rebuilt from the configuration.

    Raises:
        ConfigError: If the model does not match the configured control labels.
    """
    with open(path, 'r') as infile:
        model = FiniteATS.from_text(infile.read())
    with open(os.path.splitext(path)[0] + '_states.txt', 'r') as infile:
        import_state_table(model, infile.read())
    controls = setup.abstraction.control_labels(setup.system)
    if len(controls) != len(model.control_labels):
        raise ConfigError('quantization.lambda_U', f"model at {path} has {len(model.control_labels)} control labels, "
                                                   f"the configuration gives {len(controls)}")
    model.control_labels = controls
    return model
