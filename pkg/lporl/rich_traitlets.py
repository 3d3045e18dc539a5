import argparse
import re
from copy import copy

from traitlets import Bool, Dict, Float, Integer, List
from traitlets.config.configurable import Configurable
from traitlets.config.loader import ArgumentError, Config


def parse_bool(value):
    lowered = str(value).lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise argparse.ArgumentTypeError("expected a boolean, got %r" % (value,))


def trait_arg_type(trait_obj):
    """argparse `type` and `nargs` for a trait."""
    if isinstance(trait_obj, List):
        item_trait = getattr(trait_obj, '_trait', None)
        item_type, _ = trait_arg_type(item_trait) if item_trait is not None else (str, None)
        return item_type, '+'
    if isinstance(trait_obj, Bool):
        return parse_bool, None
    if isinstance(trait_obj, Integer):
        return int, None
    if isinstance(trait_obj, Float):
        return float, None
    return str, None


class RichArgumentParser(argparse.ArgumentParser):
    """Raises ArgumentError on usage errors instead of exiting."""

    def error(self, message):
        raise ArgumentError(message)


class RichArgParseConfigLoader(object):
    """
    argparse front end with one subparser per command.

    Parameters
    ----------
    commands : dict
        Command name to `{'help': str, 'aliases': dict}`, where the aliases
        are in the form returned by `RichConfigurable.trait_argparse_aliases`.
    flags : dict
        Flags shared by every command. Values are a dict which contains the
        flag value as a `(config_dict, help)` tuple and any extra arguments
        that should be passed to `argparse.add_argument`.
        Of the form:
        ```python
        {
            'flag' : {
                'value': ({'Section': {'trait': 'value'}}, 'help text'),
                'add_args': ['-f', '--flag'],
            }
        }
        ```
    """

    def __init__(self, commands, flags=None, description=None, command_trait='BaseConfig.command'):
        self.commands = commands
        self.flags = flags or {}
        self.command_trait = command_trait
        self.parser = RichArgumentParser(description=description)
        self.subparsers = {}
        subparsers = self.parser.add_subparsers(dest='_command', metavar='COMMAND')
        subparsers.required = True
        for name, spec in commands.items():
            subparser = subparsers.add_parser(name, help=spec.get('help'), description=spec.get('help'))
            self._add_flag_arguments(subparser)
            self._add_alias_arguments(subparser, spec.get('aliases', {}))
            self.subparsers[name] = subparser

    def _add_flag_arguments(self, parser):
        for key, values in self.flags.items():
            value, help = values['value']
            add_args = values.get('add_args') or ['--' + key]
            parser.add_argument(
                *add_args, dest='_flags', action='append_const', const=value, help=help)

    def _add_alias_arguments(self, parser, aliases):
        for key, values in aliases.items():
            add_args = values.get('add_args') or (['-' + key] if len(key) == 1 else ['--' + key])
            add_kwargs = {
                'dest': values['trait'],
                'default': argparse.SUPPRESS,
            }
            add_kwargs.update(values.get('add_kwargs', {}))
            parser.add_argument(*add_args, **add_kwargs)

    def load_config(self, argv=None):
        namespace = self.parser.parse_args(argv)
        config = Config()
        for flag_value in getattr(namespace, '_flags', None) or []:
            config.merge(Config(flag_value))
        for dest, value in vars(namespace).items():
            if dest.startswith('_'):
                continue
            section, trait = dest.split('.', 1)
            config[section][trait] = value
        section, trait = self.command_trait.split('.', 1)
        config[section][trait] = namespace._command
        return config

    def print_usage(self, command=None):
        parser = self.subparsers.get(command, self.parser)
        parser.print_usage()


class RichConfigurable(Configurable):
    @classmethod
    def trait_argparse_aliases(cls):
        """
        Command line aliases for every config trait of this class.

        Trait metadata controls the alias: `switch` renames the flag (default
        is the trait name with dashes), `cli=False` leaves the trait file-only,
        and everything else (help, metavar) goes to `add_argument`.
        """
        aliases = {}
        for key, trait_obj in sorted(cls.class_traits(config=True).items()):
            if isinstance(trait_obj, Dict):
                continue
            trait_meta = copy(trait_obj.metadata)
            trait_meta.pop('config', None)
            if not trait_meta.pop('cli', True):
                continue
            alias_key = trait_meta.pop('switch', re.sub('_', '-', key))
            arg_type, nargs = trait_arg_type(trait_obj)
            add_kwargs = {'type': arg_type}
            if nargs:
                add_kwargs['nargs'] = nargs
            add_kwargs.update(trait_meta)
            default = trait_obj.default_value
            if default not in ('', None) and add_kwargs.get('help') not in (None, argparse.SUPPRESS):
                add_kwargs['help'] = '%s (default: %s)' % (add_kwargs['help'], default)
            aliases[alias_key] = {
                'trait': "%s.%s" % (cls.__name__, key),
                'add_kwargs': add_kwargs,
            }
        return aliases

    def trait_dict(self):
        return {key: getattr(self, key) for key in self.class_trait_names(config=True)}


class RichConfig(Config):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        dict.__setattr__(self, '_sources', {})

    def merge_source(self, name, other):
        self._sources[name] = other
        self.merge(other)

    def source_has(self, section, trait):
        """True when any merged source set `section.trait` explicitly."""
        return any(
            section in source and trait in source[section]
            for source in self._sources.values()
        )
