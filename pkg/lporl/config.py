"""
Configuration.

Classes for parsing configuration files and command line arguments.

Config merge order:
- proto config  (config provided initially to load_config)
- file config   (the JSON file named by --config, relative to config_dir)
- cli config    (command line arguments)
"""

import argparse
import logging
import os
import pprint

from traitlets import (Bool, Dict, Float, Integer, List, TraitError, Unicode,
                       validate)
from traitlets.config.loader import (Config, ConfigFileNotFound,
                                     JSONFileConfigLoader)

from . import DESCRIPTION, DISCOUNTED, PKG_NAME, SETTINGS
from .exceptions import ValidationError
from .helper import TraitValidation, expand_relative_path
from .log import PKG_LOGGER, ROOT_LOGGER, log_level_quiet, setup_logging
from .rich_traitlets import (RichArgParseConfigLoader, RichConfig,
                             RichConfigurable)
from .sampling import EXACT_CATEGORICAL, SOURCES

GENERATORS = ('random-tabular', 'random-linear', 'cycle2')
BEHAVIORS = ('uniform', 'eps_mix')
TARGETS = ('optimal', 'uniform', 'behavior')
DATASET_MODES = ('fixed', 'stream')
LAMBDA_SOURCES = ('exact', 'empirical')
TUNINGS = ('auto', 'manual')


class ConfigException(ValidationError):
    pass


class LogConfig(RichConfigurable):
    stream_log_level = Unicode(
        "WARNING",
        help="Set custom message output level"
    ).tag(config=True, switch="verbosity", metavar='LEVEL')
    file_log_level = Unicode(
        "DEBUG",
        help=argparse.SUPPRESS
    ).tag(config=True, metavar='LEVEL')
    log_dir = Unicode(
        help="Directory containing log files"
    ).tag(config=True, metavar='PATH')
    log_path = Unicode(
        help=argparse.SUPPRESS
    ).tag(config=True, metavar='PATH')


class BaseConfig(RichConfigurable):
    command = Unicode(
        help="Subcommand being run"
    ).tag(config=True, cli=False)

    config_dir = Unicode(
        help="Directory containing config files"
    ).tag(config=True, metavar="PATH")

    config_path = Unicode(
        help="Load extra config from file relative to config_dir if provided"
    ).tag(config=True, switch='config', metavar='PATH')

    out_path = Unicode(
        help="Output directory for solve, sweep and diagnose; output file for gen-mdp and coverage"
    ).tag(config=True, switch='out', metavar='PATH')

    seeds = List(
        Integer(), default_value=[0],
        help="Run seeds (dataset, solver and output draws); gen-mdp uses the first as MDP seed"
    ).tag(config=True, switch='seed', metavar='SEED')


class MdpConfig(RichConfigurable):
    path = Unicode(
        help="MDP JSON file, relative to config_dir if provided"
    ).tag(config=True, switch='mdp', metavar='PATH')
    generator = Unicode(
        'random-tabular',
        help="Generator used when no MDP file or inline MDP is given: %s" % '|'.join(GENERATORS)
    ).tag(config=True, metavar='NAME')
    num_states = Integer(
        5, help="Number of states for generated MDPs"
    ).tag(config=True, switch='states', metavar='N')
    num_actions = Integer(
        2, help="Number of actions for generated MDPs"
    ).tag(config=True, switch='actions', metavar='N')
    dim = Integer(
        0, help="Feature dimension for random-linear MDPs (0 means one per pair)"
    ).tag(config=True, metavar='D')
    seed = Integer(
        11, help="Seed of the MDP generator"
    ).tag(config=True, switch='mdp-seed', metavar='SEED')
    discount = Float(
        0.9, help="Discount factor of generated MDPs"
    ).tag(config=True, switch='gamma', metavar='GAMMA')
    inline = Dict(
        help="MDP given inline in the MDP file format"
    ).tag(config=True)

    @validate('path')
    def _valid_path(self, proposal):
        if proposal['value']:
            TraitValidation.path_exists(proposal['value'], 'MdpConfig.path')
        return proposal['value']

    @validate('generator')
    def _valid_generator(self, proposal):
        TraitValidation.one_of(proposal['value'], GENERATORS, 'MdpConfig.generator')
        return proposal['value']

    @validate('num_states', 'num_actions')
    def _valid_size(self, proposal):
        TraitValidation.positive(proposal['value'], 'MdpConfig.%s' % proposal['trait'].name)
        return proposal['value']

    @validate('dim')
    def _valid_dim(self, proposal):
        TraitValidation.non_negative(proposal['value'], 'MdpConfig.dim')
        return proposal['value']

    @validate('discount')
    def _valid_discount(self, proposal):
        TraitValidation.in_unit_interval(
            proposal['value'], 'MdpConfig.discount', closed_right=False)
        return proposal['value']


class BehaviorConfig(RichConfigurable):
    kind = Unicode(
        'uniform',
        help="Behavior policy: %s" % '|'.join(BEHAVIORS)
    ).tag(config=True, switch='behavior', metavar='KIND')
    epsilon = Float(
        0.5,
        help="Uniform weight of the eps_mix behavior (1 is uniform, 0 is the optimal policy)"
    ).tag(config=True, switch='behavior-epsilon', metavar='EPS')

    @validate('kind')
    def _valid_kind(self, proposal):
        TraitValidation.one_of(proposal['value'], BEHAVIORS, 'BehaviorConfig.kind')
        return proposal['value']

    @validate('epsilon')
    def _valid_epsilon(self, proposal):
        TraitValidation.in_unit_interval(proposal['value'], 'BehaviorConfig.epsilon')
        return proposal['value']


class DatasetConfig(RichConfigurable):
    num_samples = Integer(
        0,
        help="Dataset size (0 means exactly what the solver consumes)"
    ).tag(config=True, switch='samples', metavar='N')
    source = Unicode(
        EXACT_CATEGORICAL,
        help="Sampling mechanism: %s" % '|'.join(SOURCES)
    ).tag(config=True, metavar='SOURCE')
    burn_in = Integer(
        0,
        help="Rollout burn-in for the average setting (0 means 10 per state)"
    ).tag(config=True, metavar='STEPS')
    mode = Unicode(
        'fixed',
        help="Draw a fixed dataset up front or stream fresh samples: %s" % '|'.join(DATASET_MODES)
    ).tag(config=True, switch='dataset-mode', metavar='MODE')
    lambda_source = Unicode(
        'exact',
        help="Feature covariance given to the solver: %s" % '|'.join(LAMBDA_SOURCES)
    ).tag(config=True, switch='lambda', metavar='SOURCE')
    path = Unicode(
        help="Load the dataset from this CSV (with its JSON sidecar) instead of drawing it"
    ).tag(config=True, switch='dataset', metavar='PATH')
    dump = Bool(
        False,
        help="Write the dataset CSV and sidecar next to the trace"
    ).tag(config=True, switch='dump-dataset', metavar='BOOL')

    @validate('num_samples', 'burn_in')
    def _valid_count(self, proposal):
        TraitValidation.non_negative(proposal['value'], 'DatasetConfig.%s' % proposal['trait'].name)
        return proposal['value']

    @validate('source')
    def _valid_source(self, proposal):
        TraitValidation.one_of(proposal['value'], SOURCES, 'DatasetConfig.source')
        return proposal['value']

    @validate('mode')
    def _valid_mode(self, proposal):
        TraitValidation.one_of(proposal['value'], DATASET_MODES, 'DatasetConfig.mode')
        return proposal['value']

    @validate('lambda_source')
    def _valid_lambda_source(self, proposal):
        TraitValidation.one_of(proposal['value'], LAMBDA_SOURCES, 'DatasetConfig.lambda_source')
        return proposal['value']

    @validate('path')
    def _valid_path(self, proposal):
        if proposal['value']:
            TraitValidation.path_exists(proposal['value'], 'DatasetConfig.path')
        return proposal['value']


class LearnerConfig(RichConfigurable):
    setting = Unicode(
        DISCOUNTED, help="Objective: %s" % '|'.join(SETTINGS)
    ).tag(config=True, metavar='SETTING')
    tuning = Unicode(
        'auto',
        help="Derive rates and K from the problem constants, or take them as given: %s"
        % '|'.join(TUNINGS)
    ).tag(config=True, metavar='MODE')
    T = Integer(0, help="Outer rounds (0 lets auto tuning choose)").tag(config=True, metavar='T')
    K = Integer(0, help="Inner steps per round (manual tuning)").tag(config=True, metavar='K')
    c = Float(1.0, help="Reparametrization exponent, 0.5 or 1").tag(config=True, metavar='C')
    alpha = Float(0.0, help="Policy step size (manual tuning)").tag(config=True, metavar='RATE')
    zeta = Float(0.0, help="beta step size (manual tuning)").tag(config=True, metavar='RATE')
    eta = Float(0.0, help="theta step size (manual tuning)").tag(config=True, metavar='RATE')
    xi = Float(0.0, help="rho step size (manual tuning, average setting)").tag(config=True, metavar='RATE')
    D_theta = Float(
        0.0, help="theta ball radius (0 derives it from the exact MDP)"
    ).tag(config=True, metavar='RADIUS')
    D_beta = Float(
        0.0, help="beta ball radius (0 derives it from the coverage ratio)"
    ).tag(config=True, metavar='RADIUS')
    epsilon = Float(
        0.0, help="Target accuracy for auto tuning (0 means unused)"
    ).tag(config=True, switch='target-accuracy', metavar='EPS')
    eval_every = Integer(
        0, help="Trace row cadence in outer rounds (0 means about 100 rows)"
    ).tag(config=True, metavar='ROUNDS')
    gap_diagnostics = Bool(
        True, help="Track the exact duality gap while solving"
    ).tag(config=True, metavar='BOOL')

    @validate('setting')
    def _valid_setting(self, proposal):
        TraitValidation.one_of(proposal['value'], SETTINGS, 'LearnerConfig.setting')
        return proposal['value']

    @validate('tuning')
    def _valid_tuning(self, proposal):
        TraitValidation.one_of(proposal['value'], TUNINGS, 'LearnerConfig.tuning')
        return proposal['value']

    @validate('c')
    def _valid_c(self, proposal):
        TraitValidation.one_of(proposal['value'], (0.5, 1.0), 'LearnerConfig.c')
        return float(proposal['value'])

    @validate('T', 'K', 'eval_every', 'alpha', 'zeta', 'eta', 'xi', 'D_theta', 'D_beta', 'epsilon')
    def _valid_non_negative(self, proposal):
        TraitValidation.non_negative(proposal['value'], 'LearnerConfig.%s' % proposal['trait'].name)
        return proposal['value']


class CoverageConfig(RichConfigurable):
    target = Unicode(
        'optimal',
        help="Target policy of the coverage report: %s" % '|'.join(TARGETS)
    ).tag(config=True, metavar='POLICY')

    @validate('target')
    def _valid_target(self, proposal):
        TraitValidation.one_of(proposal['value'], TARGETS, 'CoverageConfig.target')
        return proposal['value']


class SweepConfig(RichConfigurable):
    num_samples = List(
        Integer(), help="Sample budgets to sweep"
    ).tag(config=True, switch='sweep-samples', metavar='N')
    epsilons = List(
        Float(), help="eps_mix behavior weights to sweep"
    ).tag(config=True, switch='sweep-epsilons', metavar='EPS')
    cs = List(
        Float(), help="Reparametrization exponents to sweep"
    ).tag(config=True, switch='sweep-c', metavar='C')

    @validate('num_samples')
    def _valid_num_samples(self, proposal):
        for value in proposal['value']:
            TraitValidation.positive(value, 'SweepConfig.num_samples')
        return proposal['value']

    @validate('epsilons')
    def _valid_epsilons(self, proposal):
        for value in proposal['value']:
            TraitValidation.in_unit_interval(value, 'SweepConfig.epsilons')
        return proposal['value']

    @validate('cs')
    def _valid_cs(self, proposal):
        for value in proposal['value']:
            TraitValidation.one_of(value, (0.5, 1.0), 'SweepConfig.cs')
        return [float(value) for value in proposal['value']]


CONFIG_CLASSES = [
    LogConfig, BaseConfig, MdpConfig, BehaviorConfig, DatasetConfig,
    LearnerConfig, CoverageConfig, SweepConfig,
]
EXPERIMENT_SECTIONS = ['MdpConfig', 'BehaviorConfig', 'DatasetConfig', 'LearnerConfig',
                       'CoverageConfig']

COMMANDS = {
    'gen-mdp': {
        'help': "Generate an MDP and write it as JSON",
        'classes': [LogConfig, BaseConfig, MdpConfig],
    },
    'solve': {
        'help': "Run the solver once per seed and write traces and summaries",
        'classes': [LogConfig, BaseConfig, MdpConfig, BehaviorConfig, DatasetConfig,
                    LearnerConfig, CoverageConfig],
    },
    'sweep': {
        'help': "Run a grid of experiments and write the aggregate CSV",
        'classes': CONFIG_CLASSES,
    },
    'coverage': {
        'help': "Report the coverage ratios of a target policy under the behavior policy",
        'classes': [LogConfig, BaseConfig, MdpConfig, BehaviorConfig, LearnerConfig,
                    CoverageConfig],
    },
    'diagnose': {
        'help': "Solve and compare the gap decomposition with its bounds",
        'classes': [LogConfig, BaseConfig, MdpConfig, BehaviorConfig, DatasetConfig,
                    LearnerConfig, CoverageConfig],
    },
}


def get_argparse_loader():
    commands = {}
    for command, spec in COMMANDS.items():
        aliases = {}
        for config_class in spec['classes']:
            aliases.update(config_class.trait_argparse_aliases())
        commands[command] = {'help': spec['help'], 'aliases': aliases}
    return RichArgParseConfigLoader(
        commands=commands,
        flags={
            'debug': {
                'value': ({'LogConfig': {'stream_log_level': 'DEBUG'}}, 'display debug messages'),
                'add_args': ['-d', '--debug'],
            },
            'verbose': {
                'value': ({'LogConfig': {'stream_log_level': 'INFO'}}, 'display extra information messages'),
                'add_args': ['-v', '--verbose'],
            },
            'quiet': {
                'value': ({'LogConfig': {'stream_log_level': 'ERROR'}}, 'suppress warning messages'),
                'add_args': ['-q', '--quiet'],
            },
        },
        description=DESCRIPTION,
    )


def config_quiet(config):
    return log_level_quiet(config.LogConfig.get('stream_log_level', logging.WARNING))


def load_cli_config(argv=None, loader=None):
    if loader is None:
        loader = get_argparse_loader()
    cli_config = loader.load_config(argv)
    setup_logging(**cli_config.LogConfig)
    ROOT_LOGGER.info("cli config is \n%s", pprint.pformat(cli_config))
    return cli_config


def load_single_file_config(config_path):
    _, extension = os.path.splitext(config_path)
    if extension != '.json':
        raise ConfigException(
            "invalid config file extension (must be .json) in file %s" % config_path)
    loader = JSONFileConfigLoader(os.path.basename(config_path), path=os.path.dirname(config_path))
    try:
        return loader.load_config()
    except ValueError as exc:
        raise ConfigException("config file %s is not valid JSON: %s" % (config_path, exc))


def validate_config_path(config_path, config=None):
    """
    Return an expanded config path relative to config_dir if provided in config.BaseConfig
    """
    if not config_path:
        return
    if config is None:
        config = Config()
    config_dir = config.BaseConfig.get('config_dir')
    config_path = expand_relative_path(config_path, config_dir)
    if not os.path.exists(config_path):
        raise ConfigFileNotFound(
            "config_path %s does not exist under config_dir %s" % (
                config_path, config_dir
            )
        )
    return config_path


def load_file_config(config=None):
    if config is None:
        config = Config()
    file_config = Config()
    config_path = validate_config_path(config.BaseConfig.get('config_path'), config)
    if config_path:
        new_config = load_single_file_config(config_path)
        ROOT_LOGGER.info("merging file config \n%s", pprint.pformat(new_config))
        file_config.merge(new_config)
    return file_config


def resolve_paths(config):
    """Expand file paths in MdpConfig and DatasetConfig relative to config_dir."""
    config_dir = config.BaseConfig.get('config_dir')
    for section in ['MdpConfig', 'DatasetConfig']:
        if section in config and config[section].get('path'):
            config[section].path = expand_relative_path(config[section].path, config_dir)


class ExperimentConfig(object):
    """Validated configurables of one invocation, one attribute per section."""

    def __init__(self, config):
        self.config = config
        for config_class in CONFIG_CLASSES:
            setattr(self, config_class.__name__, config_class(config=config))

    @property
    def command(self):
        return self.BaseConfig.command

    def section_dict(self, name):
        return getattr(self, name).trait_dict()

    def to_dict(self, seed=None, sections=None):
        """Plain dict in the config file layout. Re-running it reproduces the run."""
        if sections is None:
            sections = EXPERIMENT_SECTIONS
        response = {name: self.section_dict(name) for name in sections}
        if seed is not None:
            response['BaseConfig'] = {'seeds': [int(seed)]}
        return response


def validate_config(config):
    """Reject unknown sections and keys, then instantiate every section."""
    known = {config_class.__name__: config_class for config_class in CONFIG_CLASSES}
    for section in list(config.keys()):
        if section.startswith('_') or not section[:1].isupper():
            continue
        if section not in known:
            raise ConfigException("unknown config section %s" % section)
        allowed = set(known[section].class_trait_names(config=True))
        unknown = sorted(set(config[section].keys()) - allowed)
        if unknown:
            raise ConfigException("unknown keys in %s: %s" % (section, ', '.join(unknown)))
    experiment = ExperimentConfig(config)
    learner = experiment.LearnerConfig
    if learner.tuning == 'manual' and (learner.T < 1 or learner.K < 1):
        raise ConfigException("manual tuning needs LearnerConfig.T and LearnerConfig.K")
    if experiment.DatasetConfig.mode == 'stream' and experiment.DatasetConfig.lambda_source == 'empirical':
        raise ConfigException("an empirical covariance needs a fixed dataset")
    return experiment


def load_config(argv=None, proto_config=None, loader=None):
    """
    Successively merge config from different sources, overriding the previous,
    and validate the result. Returns an ExperimentConfig.
    """
    if proto_config is None:
        proto_config = Config()
    config = RichConfig()
    config.merge_source('proto', proto_config)
    setup_logging(**config.LogConfig)
    cli_config = load_cli_config(argv, loader)
    for trait, group in [
        ('config_path', 'BaseConfig'),
        ('config_dir', 'BaseConfig'),
        ('stream_log_level', 'LogConfig')
    ]:
        if trait in cli_config[group]:
            config[group][trait] = cli_config[group][trait]
    file_config = load_file_config(config)
    config.merge_source('file', file_config)
    config.merge_source('cli', cli_config)
    resolve_paths(config)
    try:
        experiment = validate_config(config)
    except TraitError as exc:
        raise ConfigException(str(exc))
    if not config_quiet(config):
        ROOT_LOGGER.info("config is \n%s", pprint.pformat(config))
    PKG_LOGGER.debug("loaded %s config for command %s", PKG_NAME, experiment.command)
    return experiment


def config_from_dict(data):
    """Validate a plain dict in the config file layout."""
    try:
        return validate_config(RichConfig(data))
    except TraitError as exc:
        raise ConfigException(str(exc))
