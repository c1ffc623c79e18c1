"""
Command-line experiment runner.

    python cli.py generate --config config.yaml --out runs/graph
    python cli.py simulate --param variant=isolation --param lambdas=[1.0]
    python cli.py sweep    --config config.yaml --threads 4
    python cli.py couple   --out runs/couple
    python cli.py analyze  runs/sweep

Exit codes: 0 success (including expected findings), 1 a domination
violation, 2 usage or input errors.
"""

import argparse
import dataclasses
import json
import logging
import pathlib
import sys
from typing import Dict, List, Optional, Tuple

import networkx as nx
import pandas as pd

import coupling
import netgen
import observables
from dynamics import INFECTED, ModelParams, Variant, all_infected, derive_seed, run, run_replicates
from errors import (AnalysisInputError, ConfigError, GraphError, InsufficientDataError, InvalidParameterError,
                    MalformedMarksError)
from experiment import ExperimentConfig, __version__

logger = logging.getLogger(__name__)

FIXTURES = pathlib.Path(__file__).parent / 'fixtures'
NONATTRACTIVE_FIXTURE = FIXTURES / 'marks_nonattractive.json'

# seed sub-stream tags
GRAPH_STREAM, SWEEP_STREAM, SIMULATE_STREAM, COUPLE_STREAM = 1, 2, 3, 4


def build_graph(config: ExperimentConfig, n: int, seed: int) -> Tuple[netgen.Graph, Optional[netgen.StarOfStars]]:
    kind = config.graph
    if kind == 'powerlaw':
        return netgen.power_law_graph(n, config.gamma, config.d_min, config.d_max, seed), None
    if kind == 'regular':
        return netgen.random_regular_graph(n, config.degree, seed), None
    if kind == 'star_of_stars':
        return netgen.star_of_stars_graph(config.order)
    if kind == 'planted':
        base = netgen.power_law_graph(n, config.gamma, config.d_min, config.d_max, seed)
        return netgen.plant_star_of_stars(base, config.order, derive_seed(seed, 0))
    if kind == 'file':
        return netgen.read_edge_list(config.graph_file), None
    families = {
        'path': nx.path_graph,
        'cycle': nx.cycle_graph,
        'star': lambda size: nx.star_graph(size - 1),
        'complete': nx.complete_graph,
    }
    graph = netgen.Graph.from_networkx(families[kind](n))
    graph.metadata.update({'kind': kind})
    return graph, None


def _output_dir(config: ExperimentConfig) -> pathlib.Path:
    out = pathlib.Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    config.dump(out / 'config.json')
    return out


def cmd_generate(config: ExperimentConfig) -> dict:
    out = _output_dir(config)
    graph, sos = build_graph(config, config.n, derive_seed(config.seed, config.n, GRAPH_STREAM))
    metadata = {**config.provenance(), 'graph': config.graph}
    if sos is not None:
        metadata['star_of_stars'] = sos.to_dict()
    sidecar = netgen.write_edge_list(graph, out / 'graph.edges', metadata)
    logger.info("wrote %s (n=%d, edges=%d)", out / 'graph.edges', graph.n, graph.edge_count)
    print(f"graph: n={graph.n} edges={graph.edge_count} -> {out / 'graph.edges'}")
    return {'edges': str(out / 'graph.edges'), 'sidecar': str(sidecar), 'n': graph.n, 'edge_count': graph.edge_count}


def cmd_simulate(config: ExperimentConfig) -> dict:
    out = _output_dir(config)
    graph, _ = build_graph(config, config.n, derive_seed(config.seed, config.n, GRAPH_STREAM))
    lam = config.lambdas[0]
    params = ModelParams(Variant(config.variant), lam, config.alpha)
    seed = derive_seed(config.seed, 0, SIMULATE_STREAM)
    traj = run(graph, all_infected(graph.n), params, config.resolve_t_cap(graph.n, lam), seed,
               log_mode=config.log_mode, until=config.until)
    paths = traj.write(out / 'trajectory', config.provenance())
    summary = traj.summary()
    print(json.dumps(summary, sort_keys=True))
    return {'summary': summary, 'files': [str(p) for p in paths]}


def _sweep_rows(config: ExperimentConfig) -> List[dict]:
    rows = []
    graph = None
    for n in config.size_grid():
        if graph is None or config.graph != 'file':
            graph, _ = build_graph(config, n, derive_seed(config.seed, n, GRAPH_STREAM))
        for li, lam in enumerate(config.lambdas):
            params = ModelParams(Variant(config.variant), lam, config.alpha)
            t_cap = config.resolve_t_cap(graph.n, lam)
            cell_seed = derive_seed(config.seed, graph.n, SWEEP_STREAM, li)
            logger.info("sweep cell n=%d lambda=%g (t_cap=%g)", graph.n, lam, t_cap)
            trajectories = run_replicates(graph, all_infected(graph.n), params, t_cap, cell_seed, config.replicates,
                                          workers=config.threads, log_mode=config.log_mode, until=config.until)
            for r, traj in enumerate(trajectories):
                rows.append({
                    'n': graph.n,
                    'lambda': float(lam),
                    'alpha': float(config.alpha),
                    'variant': config.variant,
                    'replicate': r,
                    'seed': str(traj.seed),
                    'tau': traj.end_time,
                    'extinction_time': traj.extinction_time,
                    'censored': traj.censored,
                    't_cap': t_cap,
                    'jumps': len(traj.times) - 1,
                })
    return rows


def cmd_sweep(config: ExperimentConfig) -> pd.DataFrame:
    out = _output_dir(config)
    rows = _sweep_rows(config)
    frame = pd.DataFrame(rows)
    frame.to_csv(out / 'results.csv', index=False, lineterminator='\n')
    with (out / 'results.jsonl').open('w', encoding='utf-8', newline='\n') as handle:
        handle.write(json.dumps(config.provenance(), sort_keys=True) + '\n')
        for row in rows:
            handle.write(json.dumps({**row, 'version': __version__}, sort_keys=True) + '\n')
    censored = int(frame['censored'].sum())
    print(f"sweep: {len(frame)} runs, {censored} censored -> {out / 'results.csv'}")
    return frame


def default_coupling_graphs(config: ExperimentConfig) -> Dict[str, netgen.Graph]:
    sos, _ = netgen.star_of_stars_graph(3)
    return {
        'path4': netgen.Graph.from_networkx(nx.path_graph(4)),
        'cycle5': netgen.Graph.from_networkx(nx.cycle_graph(5)),
        'star10': netgen.Graph.from_networkx(nx.star_graph(9)),
        'star_of_stars3': sos,
        'powerlaw50': netgen.power_law_graph(50, config.gamma, config.d_min, None,
                                             derive_seed(config.seed, 50, GRAPH_STREAM)),
    }


def cmd_couple(config: ExperimentConfig) -> dict:
    """Domination suite, attractiveness searches, and the optional rule-swap self-test"""
    out = _output_dir(config)
    lam = config.lambdas[0]
    seed = derive_seed(config.seed, 0, COUPLE_STREAM)
    graphs = default_coupling_graphs(config)
    domination = coupling.domination_suite(graphs, lam, config.alpha, config.horizon, config.realizations, seed,
                                           mutate=config.self_test)

    fixture_marks = coupling.load_marks(NONATTRACTIVE_FIXTURE)
    fixture_sets = coupling.load_fixture_sets(NONATTRACTIVE_FIXTURE)
    fixture_graph = fixture_marks.graph()
    forced = (fixture_marks, fixture_sets['A'], fixture_sets['B'])
    if config.self_test:
        init = [INFECTED if v in fixture_sets['A'] else 0 for v in range(fixture_graph.n)]
        found = coupling.check_domination(fixture_graph, fixture_marks, init, mutate=True)
        domination.append({'graph': 'nonattractive_fixture', 'n': fixture_graph.n, 'realizations': 1,
                           'violations': int(found is not None),
                           'first_violation': found._asdict() if found else None})

    searches = {}
    for variant in (Variant.ISOLATION, Variant.CLASSICAL, Variant.COMPARISON):
        found = coupling.search_attractiveness_violation(
            fixture_graph, lam, config.alpha, config.horizon, config.trials, seed, variant=variant,
            forced=forced if variant is Variant.ISOLATION else None)
        searches[variant.value] = found.to_dict() if found else None

    violations = sum(entry['violations'] for entry in domination)
    report = {
        **config.provenance(),
        'self_test': config.self_test,
        'domination': domination,
        'domination_violations': violations,
        'attractiveness': searches,
    }
    (out / 'coupling.json').write_text(json.dumps(report, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    if violations:
        logger.error("domination violated in %d realizations", violations)
    print(f"couple: {violations} domination violations; isolation attractiveness counterexample: "
          f"{'found' if searches['isolation'] else 'none'}")
    return report


def _read_sweep_results(results_dir: pathlib.Path) -> pd.DataFrame:
    if not results_dir.is_dir():
        raise AnalysisInputError(f"results directory not found: {results_dir}")
    files = sorted(results_dir.rglob('results.csv'))
    if not files:
        raise AnalysisInputError(f"no results.csv under {results_dir}")
    frames = []
    for path in files:
        try:
            frame = pd.read_csv(path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
            raise AnalysisInputError(f"cannot read {path}: {exc}") from exc
        missing = [c for c in observables.SWEEP_COLUMNS if c not in frame.columns]
        if missing:
            raise AnalysisInputError(f"{path} lacks columns {missing}")
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def cmd_analyze(config: ExperimentConfig, results_dir, out=None) -> dict:
    results_dir = pathlib.Path(results_dir)
    rows = _read_sweep_results(results_dir)
    out = pathlib.Path(out) if out else results_dir / 'analysis'
    config = dataclasses.replace(config, out=str(out))
    out.mkdir(parents=True, exist_ok=True)
    config.dump(out / 'config.json')
    try:
        fits = observables.fit_by_lambda(rows, min_samples=config.min_samples)
    except InsufficientDataError as exc:
        raise AnalysisInputError(str(exc)) from exc
    observables.scaling_table(rows).to_csv(out / 'scaling_points.csv', index=False, lineterminator='\n')
    report = {**config.provenance(), 'fits': {repr(lam): fit.to_dict() for lam, fit in fits.items()}}
    (out / 'scaling.json').write_text(json.dumps(report, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    for lam, fit in fits.items():
        print(f"lambda={lam:g}: {fit.classification.value}")
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Contact process simulator with isolation variants")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="Master seed, unsigned 64-bit")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--threads", type=int, help="Worker processes for replicates (env CONTACT_SIM_THREADS)")
    common.add_argument("--log-mode", choices=['full', 'thinned'], help="Per-event log or (|I|, |A|) series only")
    common.add_argument("--param", action='append', default=[], metavar='KEY=VALUE',
                        help="Override any config field; repeatable")
    common.add_argument("--verbose", action='store_true', help="Debug logging")

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('generate', parents=[common], help="Write a graph edge list and sidecar")
    sub.add_parser('simulate', parents=[common], help="Run one trajectory from all-infected")
    sub.add_parser('sweep', parents=[common], help="Extinction times over sizes and lambda grid")
    sub.add_parser('couple', parents=[common], help="Coupling checks on shared marks")
    analyze = sub.add_parser('analyze', parents=[common], help="Scaling fits of sweep results")
    analyze.add_argument("results", help="Directory holding results.csv files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        config = config.with_overrides(seed=args.seed, out=args.out, threads=args.threads,
                                       log_mode=args.log_mode, params=args.param)
        if args.command == 'generate':
            cmd_generate(config)
        elif args.command == 'simulate':
            cmd_simulate(config)
        elif args.command == 'sweep':
            cmd_sweep(config)
        elif args.command == 'couple':
            report = cmd_couple(config)
            if report['domination_violations']:
                return 1
        elif args.command == 'analyze':
            cmd_analyze(config, args.results, args.out)
    except (ConfigError, InvalidParameterError, AnalysisInputError, MalformedMarksError, GraphError,
            FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
