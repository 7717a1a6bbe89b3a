import os

import numpy as np
import pytest

from tidesym_handler import tidesym, main, EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_BUDGET
from json_handler import read_json
from conftest import load_config, write_config


def test_missing_section_is_a_configuration_error(tmp_config, tmp_path, capsys):
    path = tmp_config(quantization=None)
    assert tidesym('simulate', path, out_dir=str(tmp_path), quiet=True) == EXIT_CONFIG
    assert 'quantization' in capsys.readouterr().err


def test_certify_needs_positive_trials(tmp_config, tmp_path, capsys):
    path = tmp_config(falsification={'trials': 0})
    assert tidesym('certify', path, out_dir=str(tmp_path), quiet=True) == EXIT_CONFIG
    assert 'falsification.trials' in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert tidesym('simulate', str(tmp_path / 'absent.json'), quiet=True) == EXIT_CONFIG


def test_malformed_json(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"system": ')
    assert tidesym('simulate', str(path), quiet=True) == EXIT_CONFIG


def test_worked_example_cannot_be_synthesized(tmp_path, capsys):
    path = write_config(tmp_path / 'pola.json', load_config('pola2012_example.json'))
    assert tidesym('synthesize', path, out_dir=str(tmp_path), quiet=True) == EXIT_CONFIG
    assert 'empty after erosion' in capsys.readouterr().err


def test_label_budget_is_enforced(tmp_config, tmp_path, capsys):
    path = tmp_config(abstraction={'disturbance_mode': 'exact', 'label_budget': 1, 'regularity_trials': 5})
    assert tidesym('abstract', path, out_dir=str(tmp_path), quiet=True) == EXIT_BUDGET
    assert 'Budget exceeded' in capsys.readouterr().err


def test_simulate_writes_a_trajectory(tmp_config, tmp_path):
    path = tmp_config(simulation={'input': [0.0], 'horizon_s': 3.0})
    out = tmp_path / 'out'
    assert main(['simulate', '--config', path, '--out', str(out), '--quiet']) == EXIT_OK
    csv = out / 'scalar_toy_simulation.csv'
    with open(csv, 'r') as infile:
        assert infile.readline().strip() == 'time,x1,u1,delay,phase'
    data = np.loadtxt(csv, delimiter=',', skiprows=1)
    assert data[-1, 0] == pytest.approx(3.0)
    assert np.all(data[:, 1] == 0.0)
    assert np.all((data[:, 3] >= 0.01) & (data[:, 3] <= 0.02))
    assert os.path.exists(out / 'scalar_toy_simulation.png')


def test_certify_passes_for_the_toy(tmp_config, tmp_path):
    path = tmp_config(falsification={'trials': 50})
    assert tidesym('certify', path, out_dir=str(tmp_path), quiet=True) == EXIT_OK
    report = read_json(tmp_path / 'scalar_toy_certificate.json')
    assert report['passed']
    assert report['bounds']['M_X'] == pytest.approx(42.27, abs=0.01)
    assert report['quantization']['cond3'] == pytest.approx(0.095738, abs=1e-5)


def test_certify_reports_a_shrunken_certificate(tmp_config, tmp_path, capsys):
    path = tmp_config(certificate={'beta': {'c': 1.0, 'a': 5.0}, 'gamma_u': 0.01, 'gamma_d': 0.01},
                      falsification={'trials': 20})
    assert tidesym('certify', path, out_dir=str(tmp_path), quiet=True) == EXIT_FAILURE
    assert 'violated' in capsys.readouterr().out
    assert not read_json(tmp_path / 'scalar_toy_certificate.json')['passed']


@pytest.mark.slow
def test_unrealizable_specification(tmp_path, capsys):
    path = write_config(tmp_path / 'config.json', load_config('scalar_toy_unrealizable.json'))
    assert tidesym('abstract', path, out_dir=str(tmp_path), quiet=True) == EXIT_OK
    assert tidesym('synthesize', path, out_dir=str(tmp_path), quiet=True) == EXIT_FAILURE
    assert 'unrealizable' in capsys.readouterr().err


@pytest.mark.slow
def test_pipeline_is_reproducible(tmp_config, tmp_path):
    path = tmp_config()
    outputs = []
    for name in ('first', 'second'):
        out = str(tmp_path / name)
        assert tidesym('abstract', path, out_dir=out, quiet=True) == EXIT_OK
        assert tidesym('synthesize', path, out_dir=out, quiet=True) == EXIT_OK
        assert tidesym('run', path, out_dir=out, quiet=True) == EXIT_OK
        outputs.append(out)
    for suffix in ('model.txt', 'model_states.txt', 'strategy.txt', 'closed_loop.csv'):
        with open(os.path.join(outputs[0], f'scalar_toy_{suffix}'), 'rb') as first, \
                open(os.path.join(outputs[1], f'scalar_toy_{suffix}'), 'rb') as second:
            assert first.read() == second.read()
    verdict = read_json(os.path.join(outputs[0], 'scalar_toy_verdict.json'))
    assert verdict['passed']
    assert os.path.exists(os.path.join(outputs[0], 'scalar_toy_report.pdf'))
