"""
Experiment harness and command line entry point.

Every run goes through the same stages: mdp, oracle, coverage, tune,
dataset, solve, output. A failure inside a stage is re-raised as
ExperimentError carrying the stage name and the config echo.
"""

import concurrent.futures
import copy
import itertools
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Callable, List

import numpy as np
from tqdm import tqdm
from traitlets import TraitError
from traitlets.config.loader import ArgumentError, ConfigFileNotFound

from . import AVERAGE, DISCOUNTED
from .config import (EXPERIMENT_SECTIONS, ConfigException, config_from_dict,
                     get_argparse_loader, load_config)
from .contain import (DatasetGroup, SummaryGroup, SweepGroup, TraceGroup,
                      dump_json, dump_key_values_table)
from .coverage import coverage_report
from .exceptions import ExperimentError, NearSingular, ValidationError
from .linmdp import (LinearMDP, Policy, cycle2, dump_mdp, load_mdp,
                     optimal_policy, policy_return, policy_values,
                     random_linear_mdp, random_tabular_mdp, seeded_rng)
from .log import PKG_LOGGER, ROOT_LOGGER, log_stream_quiet, setup_logging
from . import pd_average, pd_discounted
from .pd_discounted import Oracle, ProblemBounds
from .sampling import (OUTPUT_STREAM, StreamingSampler, behavior_occupancy,
                       draw_dataset, empirical_lambda)

THREADS_ENV = 'LPORL_THREADS'
DEFAULT_OUT_DIR = 'results'
TRACE_ROWS = 100
SUMMARY_FILE = 'summary.json'
TRACE_FILE = 'trace.csv'
DATASET_FILE = 'dataset.csv'
SWEEP_FILE = 'sweep.csv'
SWEEP_SUMMARY_FILE = 'sweep_summary.json'


@dataclass(frozen=True)
class SolverOps:
    config_class: type
    run: Callable
    tune: Callable
    tune_for_budget: Callable
    constants: Callable
    regret_bounds: Callable
    theoretical_bound: Callable


SOLVERS = {
    DISCOUNTED: SolverOps(
        config_class=pd_discounted.SolverConfig,
        run=pd_discounted.run,
        tune=pd_discounted.tune,
        tune_for_budget=pd_discounted.tune_for_budget,
        constants=pd_discounted.discounted_constants,
        regret_bounds=pd_discounted.regret_bounds,
        theoretical_bound=pd_discounted.theoretical_bound,
    ),
    AVERAGE: SolverOps(
        config_class=pd_average.AvgSolverConfig,
        run=pd_average.run_average,
        tune=pd_average.tune_average,
        tune_for_budget=pd_average.tune_average_for_budget,
        constants=pd_average.average_constants,
        regret_bounds=pd_average.regret_bounds_avg,
        theoretical_bound=pd_average.theoretical_bound_avg,
    ),
}


@contextmanager
def stage(name, config_echo=None):
    PKG_LOGGER.debug("stage %s", name)
    try:
        yield
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(name, exc, config_echo) from exc


def build_mdp(mdp_conf, seed=None):
    if seed is None:
        seed = mdp_conf.seed
    if mdp_conf.path:
        mdp = load_mdp(mdp_conf.path)
        PKG_LOGGER.info("loaded MDP %s from %s", mdp.digest(), mdp_conf.path)
        return mdp
    if mdp_conf.inline:
        return LinearMDP.from_dict(mdp_conf.inline)
    if mdp_conf.generator == 'cycle2':
        return cycle2(mdp_conf.discount)
    if mdp_conf.generator == 'random-linear':
        dim = mdp_conf.dim or mdp_conf.num_states * mdp_conf.num_actions
        return random_linear_mdp(
            mdp_conf.num_states, mdp_conf.num_actions, dim, seed, mdp_conf.discount)
    return random_tabular_mdp(mdp_conf.num_states, mdp_conf.num_actions, seed, mdp_conf.discount)


def build_behavior(mdp, behavior_conf, comparator):
    """Behavior policy and its spec for the dataset sidecar."""
    if behavior_conf.kind == 'eps_mix':
        spec = {'kind': 'eps_mix', 'epsilon': behavior_conf.epsilon}
        return Policy.eps_mix(comparator, behavior_conf.epsilon), spec
    return Policy.uniform(mdp.num_states, mdp.num_actions), {'kind': 'uniform'}


def target_policy(name, mdp, comparator, behavior):
    return {
        'optimal': comparator,
        'uniform': Policy.uniform(mdp.num_states, mdp.num_actions),
        'behavior': behavior,
    }[name]


def safe_coverage(mdp, behavior, target, setting):
    try:
        return coverage_report(mdp, behavior, target, setting)
    except NearSingular as exc:
        PKG_LOGGER.warning("coverage ratios unavailable: %s", exc)
        return None


def default_theta_radius(mdp, setting, policies):
    """Discounted: the closed-form bound. Average: twice the largest shifted theta, plus one."""
    if setting == DISCOUNTED:
        return mdp.theta_bound
    varrho = pd_average.solve_varrho(mdp.features).varrho
    norms = []
    for policy in policies:
        theta = policy_values(mdp, policy, AVERAGE).theta
        shifted = theta - float(np.min(mdp.features @ theta)) * varrho
        norms.append(float(np.linalg.norm(shifted)))
    return 2 * max(norms) + 1


def solver_config(learner, dataset_conf, bounds, D_theta, D_beta, covariance, seed):
    """Resolve the learner section into a validated solver config."""
    ops = SOLVERS[learner.setting]
    c = learner.c
    lambda_kwargs = {}
    if covariance is not None:
        lambda_kwargs = {'lambda_norm': covariance.spectral_norm,
                         'lambda_trace': covariance.trace_power(2 * c - 1)}
    common = {'seed': int(seed), 'gap_diagnostics': learner.gap_diagnostics}
    if learner.tuning == 'manual':
        kwargs = dict(T=learner.T, K=learner.K, c=c, alpha=learner.alpha, zeta=learner.zeta,
                      eta=learner.eta, D_theta=D_theta, D_beta=D_beta, **common)
        if learner.setting == AVERAGE:
            kwargs['xi'] = learner.xi
        config = ops.config_class(
            constants=ops.constants(bounds, D_theta, D_beta, c, **lambda_kwargs), **kwargs)
    elif learner.T:
        config = ops.tune(bounds, D_theta, D_beta, c, T=learner.T, **lambda_kwargs, **common)
    elif learner.epsilon:
        config = ops.tune(bounds, D_theta, D_beta, c, epsilon=learner.epsilon,
                          **lambda_kwargs, **common)
    elif dataset_conf.num_samples:
        config = ops.tune_for_budget(bounds, D_theta, D_beta, c, dataset_conf.num_samples,
                                     **lambda_kwargs, **common)
    else:
        raise ConfigException(
            "auto tuning needs LearnerConfig.T, LearnerConfig.epsilon or DatasetConfig.num_samples")
    eval_every = learner.eval_every or max(1, config.T // TRACE_ROWS)
    return replace(config, eval_every=eval_every).validate()


@dataclass
class RunArtifacts:
    """Everything one run produced, for persistence and diagnostics."""
    summary: dict
    trace: List
    mdp: LinearMDP = None
    behavior: Policy = None
    comparator: Policy = None
    covariance: object = None
    config: object = None
    result: object = None
    dataset: object = None


def execute_run(experiment, seed):
    """Run one experiment for one seed without writing anything."""
    echo = experiment.to_dict(seed)
    learner = experiment.LearnerConfig
    dataset_conf = experiment.DatasetConfig
    setting, c = learner.setting, learner.c

    with stage('mdp', echo):
        mdp = build_mdp(experiment.MdpConfig)
    with stage('oracle', echo):
        comparator, optimum = optimal_policy(mdp, setting)
        behavior, behavior_spec = build_behavior(mdp, experiment.BehaviorConfig, comparator)
        _, exact_covariance = behavior_occupancy(mdp, behavior, setting)
        oracle = Oracle(mdp, behavior, comparator, setting, exact_covariance)
    with stage('coverage', echo):
        target_name = experiment.CoverageConfig.target
        coverage = safe_coverage(
            mdp, behavior, target_policy(target_name, mdp, comparator, behavior), setting)
        if target_name == 'optimal':
            comparator_coverage = coverage
        else:
            comparator_coverage = safe_coverage(mdp, behavior, comparator, setting)
    with stage('tune', echo):
        D_theta = learner.D_theta or default_theta_radius(mdp, setting, [comparator, behavior])
        coverage_ratio = comparator_coverage.ratio(c) if comparator_coverage else None
        if learner.D_beta:
            D_beta = learner.D_beta
        elif comparator_coverage:
            D_beta = comparator_coverage.beta_radius(c)
        else:
            D_beta = 1.0
            PKG_LOGGER.warning("no coverage ratio to derive D_beta from; using %s", D_beta)
        if coverage_ratio is not None:
            PKG_LOGGER.info("D_beta=%.4g, coverage ratio C_phi_c=%.4g", D_beta, coverage_ratio)
            if D_beta < comparator_coverage.beta_radius(c):
                PKG_LOGGER.warning(
                    "D_beta=%.4g is below the coverage ratio %.4g; the guarantee does not apply",
                    D_beta, coverage_ratio)
        tuning_covariance = exact_covariance if dataset_conf.lambda_source == 'exact' else None
        config = solver_config(
            learner, dataset_conf, ProblemBounds.from_features(mdp.feature_map()),
            D_theta, D_beta, tuning_covariance, seed)
    with stage('dataset', echo):
        dataset = None
        if dataset_conf.path:
            dataset = DatasetGroup.load_dataset(dataset_conf.path, mdp)
            source = dataset
        elif dataset_conf.mode == 'stream':
            source = StreamingSampler(mdp, behavior, setting, seed)
        else:
            dataset = draw_dataset(
                mdp, behavior, dataset_conf.num_samples or config.samples_needed, seed,
                setting, dataset_conf.source, dataset_conf.burn_in or None, behavior_spec)
            source = dataset
        if dataset_conf.lambda_source == 'empirical':
            covariance = empirical_lambda(dataset, mdp)
        else:
            covariance = exact_covariance
    with stage('solve', echo):
        features = mdp.feature_map()
        result = SOLVERS[setting].run(features, source, config, oracle=oracle,
                                      covariance=covariance)
    with stage('output', echo):
        index = int(seeded_rng(seed, OUTPUT_STREAM).integers(result.T))
        output_return = policy_return(mdp, result.policy(features, index), setting)

    ops = SOLVERS[setting]
    summary = {
        'setting': setting,
        'seed': int(seed),
        'mdp_digest': mdp.digest(),
        'num_states': mdp.num_states,
        'num_actions': mdp.num_actions,
        'dim': mdp.dim,
        'optimal_return': optimum,
        'mixture_return': result.mixture_return,
        'suboptimality': result.suboptimality,
        'output_policy_index': index,
        'output_return': output_return,
        'gap_report': result.gap_report.to_dict() if result.gap_report else None,
        'coverage_target': target_name,
        'coverage': coverage.to_dict() if coverage else None,
        'coverage_ratio': coverage_ratio,
        'D_theta': D_theta,
        'D_beta': D_beta,
        'D_beta_covers': None if coverage_ratio is None
        else bool(D_beta >= comparator_coverage.beta_radius(c)),
        'solver': config.to_dict(),
        'regret_bounds': ops.regret_bounds(config),
        'theoretical_bound': ops.theoretical_bound(config),
        'samples_used': result.samples_used,
        'dataset_size': len(dataset) if dataset is not None else None,
        'lambda_source': dataset_conf.lambda_source,
        'lambda_used': result.metadata['lambda'],
        'wall_clock': result.metadata['wall_clock'],
        'config': echo,
    }
    PKG_LOGGER.info("%s seed %d: suboptimality %.4g", setting, seed, result.suboptimality)
    return RunArtifacts(
        summary=summary, trace=result.trace, mdp=mdp, behavior=behavior,
        comparator=comparator, covariance=exact_covariance, config=config, result=result,
        dataset=dataset)


def run_name(setting, seed, tag=None):
    name = '%s_seed%d' % (setting, seed)
    return '%s_%s' % (name, tag) if tag else name


def write_run(out_dir, name, summary, trace, dataset=None):
    run_dir = os.path.join(out_dir, name)
    os.makedirs(run_dir, exist_ok=True)
    TraceGroup.dump_trace_csv(trace, os.path.join(run_dir, TRACE_FILE))
    dump_json(summary, os.path.join(run_dir, SUMMARY_FILE))
    if dataset is not None:
        DatasetGroup.dump_dataset(dataset, os.path.join(run_dir, DATASET_FILE))
    PKG_LOGGER.info("wrote run %s to %s", name, run_dir)
    return run_dir


def run_experiment(experiment, seed=None, out_dir=None, tag=None):
    """Run, write trace CSV and summary JSON under `out_dir`, return the summary."""
    if seed is None:
        seed = (experiment.BaseConfig.seeds or [0])[0]
    artifacts = execute_run(experiment, seed)
    if out_dir:
        dataset = artifacts.dataset if experiment.DatasetConfig.dump else None
        with stage('persist', artifacts.summary['config']):
            write_run(out_dir, run_name(artifacts.summary['setting'], seed, tag),
                      artifacts.summary, artifacts.trace, dataset)
    return artifacts.summary


# Sweeps

SWEEP_AXES = [
    ('num_samples', 'num_samples', 'n'),
    ('epsilons', 'behavior_epsilon', 'eps'),
    ('cs', 'c', 'c'),
]


def sweep_points(sweep_conf):
    axes = [(key, getattr(sweep_conf, attr)) for attr, key, _ in SWEEP_AXES
            if getattr(sweep_conf, attr)]
    if not axes:
        raise ConfigException("sweep needs at least one of SweepConfig.num_samples, "
                              "SweepConfig.epsilons or SweepConfig.cs")
    keys = [key for key, _ in axes]
    return [dict(zip(keys, values)) for values in itertools.product(*[v for _, v in axes])]


def point_tag(point):
    shorts = {key: short for _, key, short in SWEEP_AXES}
    return '_'.join('%s%s' % (shorts[key], value) for key, value in point.items())


def point_config(base, point):
    config = copy.deepcopy(base)
    if 'num_samples' in point:
        config['DatasetConfig']['num_samples'] = int(point['num_samples'])
    if 'behavior_epsilon' in point:
        config['BehaviorConfig'].update(kind='eps_mix', epsilon=float(point['behavior_epsilon']))
    if 'c' in point:
        config['LearnerConfig']['c'] = float(point['c'])
    return config


def sweep_worker(config_dict, seed):
    """Runs in a worker process; returns plain data only."""
    try:
        artifacts = execute_run(config_from_dict(config_dict), seed)
    except Exception as exc:
        return {'ok': False, 'error': '%s: %s' % (exc.__class__.__name__, exc)}
    return {'ok': True, 'summary': artifacts.summary, 'trace': artifacts.trace}


def sweep_threads():
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError as exc:
            raise ConfigException("%s must be an integer, got %r" % (THREADS_ENV, value)) from exc
    return os.cpu_count() or 1


@dataclass
class SweepOutcome:
    summaries: List[dict]
    rows: List[dict]
    failures: List[dict]


def sweep(experiment, out_dir=None):
    """
    One run per grid point and seed. Output is ordered grid-major, seed-minor
    whatever order the runs finish in. Failed runs are recorded and left out
    of the aggregate rows.
    """
    points = sweep_points(experiment.SweepConfig)
    seeds = experiment.BaseConfig.seeds or [0]
    base = experiment.to_dict(sections=['LogConfig'] + EXPERIMENT_SECTIONS)
    jobs = [(p, seed) for p in range(len(points)) for seed in seeds]
    PKG_LOGGER.info("sweep: %d points x %d seeds", len(points), len(seeds))

    outcomes = [None] * len(jobs)
    workers = min(sweep_threads(), len(jobs))
    progress = tqdm(total=len(jobs), disable=log_stream_quiet(), desc='sweep runs')
    if workers <= 1:
        for job, (p, seed) in enumerate(jobs):
            outcomes[job] = sweep_worker(point_config(base, points[p]), seed)
            progress.update()
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(sweep_worker, point_config(base, points[p]), seed): job
                for job, (p, seed) in enumerate(jobs)
            }
            for future in concurrent.futures.as_completed(futures):
                outcomes[futures[future]] = future.result()
                progress.update()
    progress.close()

    summaries, rows, failures = [], [], []
    point_stats = []
    for p, point in enumerate(points):
        point_rows = []
        for seed in seeds:
            outcome = outcomes[jobs.index((p, seed))]
            tag = point_tag(point)
            if not outcome['ok']:
                PKG_LOGGER.error("sweep point %s seed %d failed: %s", tag, seed, outcome['error'])
                failures.append({'point': p, 'tag': tag, 'seed': seed, 'error': outcome['error']})
                continue
            summary = outcome['summary']
            summaries.append(summary)
            if out_dir:
                write_run(out_dir, run_name(summary['setting'], seed, tag), summary,
                          outcome['trace'])
            point_rows.append({
                'point': p,
                'num_samples': point.get('num_samples'),
                'behavior_epsilon': point.get('behavior_epsilon'),
                'c': point.get('c'),
                'seed': seed,
                'suboptimality': summary['suboptimality'],
                'mixture_return': summary['mixture_return'],
                'optimal_return': summary['optimal_return'],
                'gap': (summary['gap_report'] or {}).get('gap'),
                'coverage_ratio': summary['coverage_ratio'],
                'samples_used': summary['samples_used'],
                'T': summary['solver']['T'],
                'K': summary['solver']['K'],
            })
        stats = {'point': p, 'tag': point_tag(point), 'runs': len(point_rows)}
        if point_rows:
            q1, median, q3 = np.percentile([row['suboptimality'] for row in point_rows],
                                           [25, 50, 75])
            stats.update(subopt_median=float(median), subopt_iqr=float(q3 - q1))
            for row in point_rows:
                row.update(subopt_median=stats['subopt_median'], subopt_iqr=stats['subopt_iqr'])
        point_stats.append(stats)
        rows.extend(point_rows)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        SweepGroup.dump_sweep_csv(rows, os.path.join(out_dir, SWEEP_FILE))
        dump_json({
            'grid': points,
            'seeds': list(seeds),
            'points': point_stats,
            'failures': failures,
        }, os.path.join(out_dir, SWEEP_SUMMARY_FILE))
    return SweepOutcome(summaries=summaries, rows=rows, failures=failures)


# Command handlers

def out_dir_for(experiment):
    return experiment.BaseConfig.out_path or DEFAULT_OUT_DIR


def emit_json(data, out_path=None):
    if out_path:
        dump_json(data, out_path)
        PKG_LOGGER.info("wrote %s", out_path)
    else:
        print(json.dumps(data, indent=1, sort_keys=True))


def command_gen_mdp(experiment):
    seed = None
    config = experiment.config
    if hasattr(config, 'source_has') and config.source_has('BaseConfig', 'seeds'):
        seed = experiment.BaseConfig.seeds[0]
    mdp = build_mdp(experiment.MdpConfig, seed)
    if experiment.BaseConfig.out_path:
        dump_mdp(mdp, experiment.BaseConfig.out_path)
        PKG_LOGGER.warning("saved MDP %s to %s", mdp.digest(), experiment.BaseConfig.out_path)
    else:
        print(json.dumps(mdp.to_dict(), indent=1, sort_keys=True))
    return mdp


def command_solve(experiment):
    out_dir = out_dir_for(experiment)
    summaries = [run_experiment(experiment, seed, out_dir)
                 for seed in experiment.BaseConfig.seeds or [0]]
    print(SummaryGroup.dump_summaries_table(summaries))
    return summaries


def command_sweep(experiment):
    outcome = sweep(experiment, out_dir_for(experiment))
    print(SweepGroup.dump_sweep_table(outcome.rows))
    if outcome.failures:
        PKG_LOGGER.warning("%d sweep runs failed, see %s", len(outcome.failures), SWEEP_SUMMARY_FILE)
    return outcome


def command_coverage(experiment):
    setting = experiment.LearnerConfig.setting
    with stage('coverage', experiment.to_dict()):
        mdp = build_mdp(experiment.MdpConfig)
        comparator, _ = optimal_policy(mdp, setting)
        behavior, _ = build_behavior(mdp, experiment.BehaviorConfig, comparator)
        target = target_policy(experiment.CoverageConfig.target, mdp, comparator, behavior)
        report = coverage_report(mdp, behavior, target, setting)
    emit_json(report.to_dict(), experiment.BaseConfig.out_path)
    return report


def diagnose_tables(artifacts):
    """Gap terms next to their bounds, coverage next to D_beta, estimator bias."""
    summary = artifacts.summary
    config = artifacts.config
    gap_report = summary['gap_report'] or {}
    bounds = summary['regret_bounds']
    gap_rows = [
        (term, gap_report.get(term), bounds.get(term, float('nan')) / config.T)
        for term in sorted(bounds)
    ]
    gap_rows.append(('gap', gap_report.get('gap'), summary['theoretical_bound']))
    gap_rows.append(('suboptimality', summary['suboptimality'], summary['theoretical_bound']))

    coverage_rows = [
        ('coverage ratio C_phi_c', summary['coverage_ratio']),
        ('D_beta', summary['D_beta']),
        ('D_beta covers', summary['D_beta_covers']),
        ('D_theta', summary['D_theta']),
    ]

    result = artifacts.result
    features = artifacts.mdp.feature_map()
    last = result.T - 1
    policy = result.policy(features, last)
    try:
        if result.setting == AVERAGE:
            bias = pd_average.estimator_bias_avg(
                artifacts.mdp, artifacts.behavior, policy, result.betas[last],
                result.thetas[last], float(result.rhos[last]), artifacts.covariance, config.c)
        else:
            bias = pd_discounted.estimator_bias(
                artifacts.mdp, artifacts.behavior, policy, result.betas[last],
                result.thetas[last], artifacts.covariance, config.c)
    except NearSingular as exc:
        PKG_LOGGER.warning("estimator bias check skipped: %s", exc)
        bias = {}
    bias_rows = [('bias %s' % name, value) for name, value in sorted(bias.items())]
    return {
        'gap': gap_rows,
        'coverage': coverage_rows,
        'bias': bias_rows,
    }


def command_diagnose(experiment):
    seed = (experiment.BaseConfig.seeds or [0])[0]
    artifacts = execute_run(experiment, seed)
    tables = diagnose_tables(artifacts)
    print(TraceGroup.dump_trace_table(artifacts.trace))
    print()
    print(dump_key_values_table(tables['gap'], headers=('term', 'average', 'bound')))
    print()
    print(dump_key_values_table(tables['coverage']))
    print()
    print(dump_key_values_table(tables['bias'], headers=('estimator', 'max abs bias')))
    if experiment.BaseConfig.out_path:
        out_dir = experiment.BaseConfig.out_path
        write_run(out_dir, run_name(artifacts.summary['setting'], seed, 'diagnose'),
                  artifacts.summary, artifacts.trace)
        dump_json(tables, os.path.join(out_dir, 'diagnose.json'))
    return tables


COMMAND_HANDLERS = {
    'gen-mdp': command_gen_mdp,
    'solve': command_solve,
    'sweep': command_sweep,
    'coverage': command_coverage,
    'diagnose': command_diagnose,
}

VALIDATION_ERRORS = (ValidationError, TraitError, ConfigFileNotFound, FileNotFoundError)


def report_error(exc):
    message = str(exc)
    print(message, file=sys.stderr)
    ROOT_LOGGER.critical(message)


def exit_code(exc):
    if isinstance(exc, ExperimentError):
        exc = exc.cause
    return 1 if isinstance(exc, VALIDATION_ERRORS) else 2


def main(argv=None):
    """ main. Returns the process exit code. """
    setup_logging()
    loader = get_argparse_loader()
    try:
        experiment = load_config(argv, loader=loader)
    except ArgumentError as exc:
        report_error(exc)
        loader.print_usage()
        return 1
    except VALIDATION_ERRORS as exc:
        report_error(exc)
        return 1
    setup_logging(**experiment.LogConfig.trait_dict())
    try:
        COMMAND_HANDLERS[experiment.command](experiment)
    except Exception as exc:
        report_error(exc)
        return exit_code(exc)
    return 0


if __name__ == '__main__':
    sys.exit(main())
