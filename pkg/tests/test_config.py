"""
Test config loading, merge order and validation.
"""

import os

from traitlets.config.loader import ArgumentError

from lporl.config import (ConfigException, config_from_dict, load_config,
                          load_single_file_config)

from .test_core import AbstractLporlTestCase


class ConfigTestCase(AbstractLporlTestCase):
    def test_file_config(self):
        self.assertEqual(self.conf.command, 'solve')
        self.assertEqual(self.conf.MdpConfig.generator, 'cycle2')
        self.assertEqual(self.conf.MdpConfig.discount, 0.5)
        self.assertEqual(self.conf.LearnerConfig.tuning, 'manual')
        self.assertEqual(self.conf.LearnerConfig.T, 1)
        self.assertEqual(self.conf.BaseConfig.seeds, [0])

    def test_defaults(self):
        conf = load_config(['coverage'])
        self.assertEqual(conf.MdpConfig.generator, 'random-tabular')
        self.assertEqual(conf.LearnerConfig.c, 1.0)
        self.assertEqual(conf.DatasetConfig.lambda_source, 'exact')
        self.assertEqual(conf.CoverageConfig.target, 'optimal')


class CliOverrideTestCase(AbstractLporlTestCase):
    override_args = 'solve --gamma 0.8 --seed 1 2 --samples 50 --lambda empirical -d'

    def test_cli_beats_file(self):
        self.assertEqual(self.conf.MdpConfig.discount, 0.8)
        self.assertEqual(self.conf.MdpConfig.generator, 'cycle2')
        self.assertEqual(self.conf.BaseConfig.seeds, [1, 2])
        self.assertEqual(self.conf.DatasetConfig.num_samples, 50)
        self.assertEqual(self.conf.DatasetConfig.lambda_source, 'empirical')
        self.assertEqual(self.conf.LogConfig.stream_log_level, 'DEBUG')
        self.assertTrue(self.conf.config.source_has('BaseConfig', 'seeds'))
        self.assertFalse(self.conf.config.source_has('MdpConfig', 'seed'))

    def test_echo_round_trip(self):
        echo = self.conf.to_dict(seed=3)
        self.assertEqual(echo['BaseConfig'], {'seeds': [3]})
        again = config_from_dict(echo)
        for section in ['MdpConfig', 'DatasetConfig', 'LearnerConfig']:
            self.assertEqual(again.section_dict(section), self.conf.section_dict(section))


class ConfigValidationTestCase(AbstractLporlTestCase):
    def test_unknown_section(self):
        with self.assertRaises(ConfigException):
            config_from_dict({'SolverConfig': {'T': 1}})

    def test_unknown_key(self):
        with self.assertRaises(ConfigException):
            config_from_dict({'MdpConfig': {'states': 3}})

    def test_manual_needs_rounds(self):
        with self.assertRaises(ConfigException):
            config_from_dict({'LearnerConfig': {'tuning': 'manual', 'T': 3}})

    def test_stream_with_empirical_lambda(self):
        with self.assertRaises(ConfigException):
            config_from_dict({'DatasetConfig': {'mode': 'stream', 'lambda_source': 'empirical'}})

    def test_bad_values(self):
        for data in [
            {'LearnerConfig': {'c': 0.7}},
            {'LearnerConfig': {'setting': 'finite-horizon'}},
            {'MdpConfig': {'discount': 1.0}},
            {'MdpConfig': {'num_states': 0}},
            {'BehaviorConfig': {'epsilon': 1.5}},
            {'SweepConfig': {'num_samples': [10, 0]}},
        ]:
            with self.assertRaises(ConfigException, msg=str(data)):
                config_from_dict(data)

    def test_missing_mdp_file(self):
        with self.assertRaises(ConfigException):
            load_config(['solve', '--mdp', os.path.join(self.out_dir, 'missing.json')])

    def test_file_extension(self):
        path = self.write_config({}, 'experiment.yaml')
        with self.assertRaises(ConfigException):
            load_single_file_config(path)

    def test_invalid_json(self):
        path = os.path.join(self.out_dir, 'broken.json')
        with open(path, 'w') as broken:
            broken.write('{"MdpConfig": ')
        with self.assertRaises(ConfigException):
            load_config(['solve', '--config', path])

    def test_usage_errors(self):
        with self.assertRaises(ArgumentError):
            load_config([])
        with self.assertRaises(ArgumentError):
            load_config(['solve', '--no-such-flag'])
