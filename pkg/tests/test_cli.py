"""
Test suite for cli.py and experiment.py

Runs the subcommands end to end in temporary directories and checks the
configuration layer: file loading, flag overrides and provenance records.
"""

import json
import os
import pathlib
import sys

import pandas as pd
import pytest

# Add parent directory to path to import the simulator modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import cli
import netgen
from errors import ConfigError
from experiment import ExperimentConfig, __version__

ROOT = pathlib.Path(__file__).parent.parent


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def write_results(directory, lam, tau, sizes=(20, 40, 60, 80), replicates=20):
    rows = []
    for n in sizes:
        rows.extend({'n': n, 'lambda': lam, 'tau': tau(n), 'censored': False, 'replicate': r}
                    for r in range(replicates))
    directory.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(directory / 'results.csv', index=False)


@pytest.mark.unit
class TestExperimentConfig:
    """Test config loading and overrides"""

    def test_sample_config_loads(self):
        config = ExperimentConfig.load(ROOT / 'config.yaml')
        assert config.variant == 'vigilance'
        assert config.size_grid() == [100, 200, 400, 800]

    def test_round_trip(self, tmp_path):
        config = ExperimentConfig(graph='powerlaw', lambdas=[0.5, 2.0], seed=2 ** 63 + 5, t_cap=12.5)
        config.dump(tmp_path / 'config.json')
        assert ExperimentConfig.load(tmp_path / 'config.json') == config
        payload = json.loads((tmp_path / 'config.json').read_text())
        assert payload['version'] == __version__

    def test_param_overrides_are_typed(self):
        config = ExperimentConfig().with_overrides(seed=9, params=['lambdas=[0.5, 1.5]', 'alpha=3', 'graph=cycle'])
        assert config.lambdas == [0.5, 1.5]
        assert config.alpha == 3
        assert config.seed == 9
        assert config.graph == 'cycle'

    @pytest.mark.parametrize("params", [['lambdas=[]'], ['variant=sirs'], ['nonsense=1'], ['alpha']])
    def test_invalid_overrides(self, params):
        with pytest.raises(ConfigError):
            ExperimentConfig().with_overrides(params=params)

    @pytest.mark.parametrize("params", [['lambdas=0.5'], ['n=abc'], ['self_test=maybe'], ['sizes=[10, x]'],
                                        ['alpha=[1]'], ['n=0']])
    def test_malformed_fields(self, params):
        with pytest.raises(ConfigError):
            ExperimentConfig().with_overrides(params=params)

    def test_integral_values_coerced(self):
        config = ExperimentConfig().with_overrides(params=['n=100.0', 'alpha=2', 'out=2024'])
        assert config.n == 100 and isinstance(config.n, int)
        assert isinstance(config.alpha, float)
        assert config.out == '2024'

    def test_threads_from_environment(self, monkeypatch):
        monkeypatch.setenv('CONTACT_SIM_THREADS', '3')
        assert ExperimentConfig().threads == 3

    def test_t_cap_defaults(self):
        config = ExperimentConfig(variant='vigilance', alpha=2.0)
        assert config.resolve_t_cap(100, 1.0) == 5000.0
        assert config.resolve_t_cap(100, 100.0) == 1e4
        assert ExperimentConfig(t_cap=7.0).resolve_t_cap(100, 1.0) == 7.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.load(tmp_path / 'absent.yaml')


@pytest.mark.integration
class TestGenerate:
    """Test the generate subcommand"""

    def test_deterministic_files(self, tmp_path):
        for name in ('a', 'b'):
            assert run_cli('generate', '--param', 'graph=powerlaw', '--param', 'n=1000',
                           '--seed', 5, '--out', tmp_path / name) == 0
        assert (tmp_path / 'a' / 'graph.edges').read_bytes() == (tmp_path / 'b' / 'graph.edges').read_bytes()
        sidecars = [json.loads((tmp_path / name / 'graph.json').read_text()) for name in ('a', 'b')]
        for sidecar in sidecars:
            sidecar['config'].pop('out')
        assert sidecars[0] == sidecars[1]
        assert json.loads((tmp_path / 'a' / 'config.json').read_text())['version'] == __version__

    def test_bad_gamma(self, tmp_path):
        assert run_cli('generate', '--param', 'graph=powerlaw', '--param', 'gamma=1.5', '--out', tmp_path) == 2

    def test_planted_structure_is_findable(self, tmp_path):
        assert run_cli('generate', '--param', 'graph=planted', '--param', 'n=200', '--param', 'order=3',
                       '--seed', 1, '--out', tmp_path) == 0
        g = netgen.read_edge_list(tmp_path / 'graph.edges')
        planted = g.metadata['star_of_stars']
        sos = netgen.StarOfStars(planted['center'], tuple(planted['hubs']), tuple(map(tuple, planted['leaves'])))
        assert netgen.validate_star_of_stars(g, sos)
        found = netgen.find_star_of_stars(g, 3)
        assert found is not None and netgen.validate_star_of_stars(g, found)


@pytest.mark.integration
class TestSimulate:
    """Test the simulate subcommand"""

    def test_full_log(self, tmp_path):
        assert run_cli('simulate', '--param', 'graph=cycle', '--param', 'n=20', '--param', 'variant=isolation',
                       '--log-mode', 'full', '--out', tmp_path) == 0
        lines = (tmp_path / 'trajectory.jsonl').read_text().splitlines()
        assert 'summary' in json.loads(lines[-1])

    def test_thinned_log(self, tmp_path):
        assert run_cli('simulate', '--param', 'graph=cycle', '--param', 'n=20', '--log-mode', 'thinned',
                       '--out', tmp_path) == 0
        assert (tmp_path / 'trajectory.csv').read_text().startswith('t,I,A')
        assert (tmp_path / 'trajectory.summary.json').exists()


@pytest.mark.integration
class TestSweep:
    """Test the sweep subcommand"""

    ARGS = ('sweep', '--param', 'graph=regular', '--param', 'n=100', '--param', 'variant=vigilance',
            '--param', 'lambdas=[0.5]', '--param', 'alpha=2', '--param', 'replicates=10', '--seed', 3)

    def test_subcritical_rows(self, tmp_path):
        assert run_cli(*self.ARGS, '--out', tmp_path) == 0
        frame = pd.read_csv(tmp_path / 'results.csv')
        assert len(frame) == 10
        assert not frame['censored'].any()
        assert (frame['t_cap'] == 5000).all()
        lines = (tmp_path / 'results.jsonl').read_text().splitlines()
        assert len(lines) == 11
        assert json.loads(lines[0])['config']['lambdas'] == [0.5]

    def test_empty_grid(self, tmp_path):
        assert run_cli('sweep', '--param', 'lambdas=[]', '--out', tmp_path) == 2

    def test_byte_identical_reruns(self, tmp_path):
        for name in ('a', 'b'):
            assert run_cli(*self.ARGS, '--out', tmp_path / 'run') == 0
            (tmp_path / 'run').rename(tmp_path / name)
        for filename in ('results.csv', 'results.jsonl', 'config.json'):
            assert (tmp_path / 'a' / filename).read_bytes() == (tmp_path / 'b' / filename).read_bytes()

    def test_threads_do_not_change_results(self, tmp_path):
        assert run_cli(*self.ARGS, '--threads', 1, '--out', tmp_path / 'one') == 0
        assert run_cli(*self.ARGS, '--threads', 2, '--out', tmp_path / 'two') == 0
        one = pd.read_csv(tmp_path / 'one' / 'results.csv')
        two = pd.read_csv(tmp_path / 'two' / 'results.csv')
        pd.testing.assert_frame_equal(one, two)


@pytest.mark.integration
class TestCouple:
    """Test the couple subcommand and its exit codes"""

    def test_default_suite_clean(self, tmp_path):
        assert run_cli('couple', '--param', 'realizations=20', '--param', 'trials=50', '--out', tmp_path) == 0
        report = json.loads((tmp_path / 'coupling.json').read_text())
        assert report['domination_violations'] == 0
        assert {entry['graph'] for entry in report['domination']} >= {'path4', 'cycle5', 'star10'}
        assert report['attractiveness']['isolation'] is not None
        assert report['attractiveness']['classical'] is None
        assert report['attractiveness']['comparison'] is None

    def test_self_test_exits_one(self, tmp_path):
        assert run_cli('couple', '--param', 'self_test=true', '--param', 'realizations=5',
                       '--param', 'trials=5', '--out', tmp_path) == 1
        report = json.loads((tmp_path / 'coupling.json').read_text())
        fixture = [e for e in report['domination'] if e['graph'] == 'nonattractive_fixture'][0]
        assert fixture['violations'] == 1


@pytest.mark.integration
class TestAnalyze:
    """Test the analyze subcommand"""

    def test_linear_table(self, tmp_path):
        write_results(tmp_path / 'sweep', 0.5, lambda n: 2.0 * n)
        assert run_cli('analyze', tmp_path / 'sweep') == 0
        report = json.loads((tmp_path / 'sweep' / 'analysis' / 'scaling.json').read_text())
        assert report['fits']['0.5']['classification'] == 'linear-ish'
        points = pd.read_csv(tmp_path / 'sweep' / 'analysis' / 'scaling_points.csv')
        assert {'median_tau', 'censored_frac'} <= set(points.columns)

    def test_mixed_directory(self, tmp_path):
        write_results(tmp_path / 'sweep' / 'low', 0.5, lambda n: 2.0 * n)
        write_results(tmp_path / 'sweep' / 'high', 4.0, lambda n: 1.5 ** n)
        assert run_cli('analyze', tmp_path / 'sweep', '--out', tmp_path / 'report') == 0
        fits = json.loads((tmp_path / 'report' / 'scaling.json').read_text())['fits']
        assert fits['0.5']['classification'] == 'linear-ish'
        assert fits['4.0']['classification'] == 'exponential-ish'

    def test_missing_inputs(self, tmp_path):
        assert run_cli('analyze', tmp_path / 'nowhere') == 2
        (tmp_path / 'empty').mkdir()
        assert run_cli('analyze', tmp_path / 'empty') == 2

    def test_corrupt_inputs(self, tmp_path):
        (tmp_path / 'bad').mkdir()
        (tmp_path / 'bad' / 'results.csv').write_text('a,b\n1,2\n')
        assert run_cli('analyze', tmp_path / 'bad') == 2


@pytest.mark.integration
class TestBadInput:
    """Test that malformed input exits with the usage code"""

    @pytest.mark.parametrize("param", ['lambdas=0.5', 'n=abc'])
    def test_malformed_param(self, tmp_path, param):
        assert run_cli('sweep', '--param', param, '--out', tmp_path) == 2

    @pytest.mark.parametrize("body", ['4 1\n0 1 2\n', '4 1\n0 x\n', 'four 1\n0 1\n', '4 2\n0 1\n'])
    def test_corrupt_edge_list(self, tmp_path, body):
        path = tmp_path / 'bad.edges'
        path.write_text(body)
        assert run_cli('simulate', '--param', 'graph=file', '--param', f'graph_file={path}',
                       '--out', tmp_path / 'out') == 2


@pytest.mark.integration
class TestProvenance:
    """Test that every JSON output carries the exact config and version"""

    ARGS = ('--param', 'graph=cycle', '--param', 'n=12', '--param', 'lambdas=[0.75]', '--seed', 17)

    def assert_config(self, record):
        assert record['version'] == __version__
        assert record['config']['seed'] == 17
        assert ExperimentConfig.from_dict(record['config']).lambdas == [0.75]

    def test_generate_sidecar(self, tmp_path):
        assert run_cli('generate', *self.ARGS, '--out', tmp_path) == 0
        self.assert_config(json.loads((tmp_path / 'graph.json').read_text()))

    def test_simulate_summaries(self, tmp_path):
        assert run_cli('simulate', *self.ARGS, '--log-mode', 'thinned', '--out', tmp_path / 'thin') == 0
        self.assert_config(json.loads((tmp_path / 'thin' / 'trajectory.summary.json').read_text()))
        assert run_cli('simulate', *self.ARGS, '--log-mode', 'full', '--out', tmp_path / 'full') == 0
        last = (tmp_path / 'full' / 'trajectory.jsonl').read_text().splitlines()[-1]
        self.assert_config(json.loads(last))

    def test_sweep_header(self, tmp_path):
        assert run_cli('sweep', *self.ARGS, '--param', 'replicates=2', '--out', tmp_path) == 0
        first = (tmp_path / 'results.jsonl').read_text().splitlines()[0]
        self.assert_config(json.loads(first))

    def test_couple_report(self, tmp_path):
        assert run_cli('couple', *self.ARGS, '--param', 'realizations=2', '--param', 'trials=2',
                       '--out', tmp_path) == 0
        self.assert_config(json.loads((tmp_path / 'coupling.json').read_text()))

    def test_analyze_report(self, tmp_path):
        write_results(tmp_path / 'sweep', 0.5, lambda n: 2.0 * n)
        assert run_cli('analyze', tmp_path / 'sweep', *self.ARGS, '--out', tmp_path / 'report') == 0
        self.assert_config(json.loads((tmp_path / 'report' / 'scaling.json').read_text()))
        self.assert_config(json.loads((tmp_path / 'report' / 'config.json').read_text()))
        assert not (tmp_path / 'sweep' / 'analysis').exists()


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
