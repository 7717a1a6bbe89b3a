import copy
import json
import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, 'src'))

from time_delay_system import create_system, HistorySegment
from certificates import KLExp, KLinear, IdssCertificate, IssCertificate
from spline_approx import QuantizationParams
from abstraction import AbstractionConfig, build_onthefly
from tidesym_helper import validate_config

CONFIG_DIR = os.path.join(ROOT, 'config_files')


def load_config(name):
    with open(os.path.join(CONFIG_DIR, name), 'r') as infile:
        return json.load(infile)


def write_config(path, config):
    with open(path, 'w') as outfile:
        json.dump(config, outfile)
    return str(path)


@pytest.fixture
def toy():
    return create_system('scalar-toy')


@pytest.fixture
def zero_system():
    return create_system('zero')


@pytest.fixture
def toy_certificates():
    idss = IdssCertificate(KLExp(2.1, 1.75), KLinear(1.12), KLinear(1.0))
    iss = IssCertificate(KLExp(2.1, 1.75), KLinear(1.12))
    return idss, iss


@pytest.fixture
def toy_config():
    return load_config('scalar_toy.json')


@pytest.fixture(scope='session')
def toy_setup():
    return validate_config(load_config('scalar_toy.json'), 'run')


@pytest.fixture(scope='session')
def toy_model(toy_setup):
    return build_onthefly(toy_setup.system, toy_setup.abstraction, toy_setup.xi0)


@pytest.fixture(scope='session')
def sandwich():
    """Wide-delay variant of the scalar toy with a coarse lattice: (system, abstraction config, xi0)."""
    system = create_system('scalar-toy', delta_min=0.05, delta_max=0.1)
    cert = IdssCertificate(KLExp(2.4, 1.7), KLinear(1.12), KLinear(1.0))
    m_x = (2 * 1.68 + 0.5) * 1.2 * 3.2 * 3.2
    params = QuantizationParams(tau=1.5, N_X=0, theta_X=0.2, N_D=0, theta_D=0.05, lambda_U=0.125, epsilon=1.0,
                                M_X=m_x, M_D=0.01, delta_max=0.1)
    cfg = AbstractionConfig(params=params, cert=cert, b_x=1.68, disturbance_mode='exact', h_int=0.02)
    return system, cfg, HistorySegment.constant([0.0], system.delta_max)


@pytest.fixture
def tmp_config(tmp_path, toy_config):
    """Writes a modified copy of the scalar toy configuration and returns its path."""
    def make(name='config.json', **sections):
        config = copy.deepcopy(toy_config)
        for key, value in sections.items():
            if value is None:
                config.pop(key, None)
            elif isinstance(value, dict) and isinstance(config.get(key), dict):
                config[key].update(value)
            else:
                config[key] = value
        return write_config(tmp_path / name, config)
    return make


def constant_history(value, delta_max):
    return HistorySegment.constant(np.atleast_1d(value), delta_max)
