import math
import os

import numpy as np
from traitlets import TraitError


class TraitValidation(object):
    @classmethod
    def path_exists(cls, path, name=None):
        if not os.path.exists(path):
            raise TraitError('%spath %s does not exist' % (
                ('%s ' % name) if name else "",
                path
            ))

    @classmethod
    def positive(cls, value, name=None):
        if not value > 0:
            raise TraitError('value %sshould be positive, got %r' % (
                ("%s " % name) if name else "", value)
            )

    @classmethod
    def non_negative(cls, value, name=None):
        if value < 0:
            raise TraitError('value %sshould be non-negative, got %r' % (
                ("%s " % name) if name else "", value)
            )

    @classmethod
    def in_unit_interval(cls, value, name=None, closed_right=True):
        upper_ok = value <= 1 if closed_right else value < 1
        if not (value >= 0 and upper_ok):
            raise TraitError('value %sshould be in [0, 1%s, got %r' % (
                ("%s " % name) if name else "",
                ']' if closed_right else ')',
                value
            ))

    @classmethod
    def one_of(cls, value, choices, name=None):
        if value not in choices:
            raise TraitError('value %sshould be one of %s, got %r' % (
                ("%s " % name) if name else "", list(choices), value)
            )


def expand_relative_path(path, dir):
    path = os.path.expandvars(path)
    path = os.path.normpath(path)
    path = os.path.expanduser(path)
    if not os.path.isabs(path) and dir:
        dir = os.path.expandvars(dir)
        dir = os.path.normpath(dir)
        dir = os.path.expanduser(dir)
        path = os.path.join(dir, path)
    return os.path.abspath(path)


class SanitationUtils(object):
    @classmethod
    def to_jsonable(cls, thing):
        """Convert numpy scalars and arrays, nested in containers, to plain Python."""
        if isinstance(thing, dict):
            return {str(key): cls.to_jsonable(value) for key, value in thing.items()}
        if isinstance(thing, (list, tuple)):
            return [cls.to_jsonable(value) for value in thing]
        if isinstance(thing, np.ndarray):
            return cls.to_jsonable(thing.tolist())
        if isinstance(thing, np.bool_):
            return bool(thing)
        if isinstance(thing, np.integer):
            return int(thing)
        if isinstance(thing, (np.floating, float)):
            value = float(thing)
            return value if math.isfinite(value) else None
        return thing

    @classmethod
    def to_cell(cls, thing):
        """CSV cell text: empty for missing values, repr for floats."""
        if thing is None:
            return ''
        if isinstance(thing, (np.floating, float)):
            value = float(thing)
            return repr(value) if math.isfinite(value) else ''
        if isinstance(thing, np.integer):
            return str(int(thing))
        return str(thing)
