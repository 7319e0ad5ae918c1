"""
This module contains the configuration variables and implements their
initialisation, loading, and saving in a file.

Values are looked up in this order: command line flags, the VOLLEY_SLOTS
environment variable (slots only), the configuration file, the defaults
below.

Example usage:
from volley import config
...
conf = config.Config()
conf.settings_load_real()
run = conf.run_config(slots=options.slots)
"""

import logging
import os
from configparser import RawConfigParser

from volley import consts, misc
from volley.errors import UsageError


logger = logging.getLogger(__name__)


class ConfigParser(RawConfigParser):
    """Override the default configuration parser with specific loader"""

    def getlist(self, section, name, sep=","):
        """Get a list of values, separated by `sep`"""
        value = self.get(section, name)
        return [v.strip() for v in value.split(sep) if v.strip()]

    def getlistint(self, section, name, sep=","):
        return [int(v) for v in self.getlist(section, name, sep)]

    def getlistfloat(self, section, name, sep=","):
        return [float(v) for v in self.getlist(section, name, sep)]


class Serializer:
    """Helper to serialize specific values."""

    @staticmethod
    def list(value, sep=","):
        return sep.join(str(s) for s in value)
    listint = list

    @staticmethod
    def listfloat(value, sep=","):
        # repr keeps the 17 significant digits of a double
        return sep.join(repr(float(s)) for s in value)


class RunConfig:
    """Validated settings of one command run"""

    __slots__ = ['slots', 'seed', 'tolerance', 'output', 'workers']

    def __init__(self, slots=consts.DEFAULT_SLOTS, seed=consts.DEFAULT_SEED,
                 tolerance=consts.DEFAULT_TOLERANCE, output="-",
                 workers=consts.DEFAULT_WORKERS):
        if not misc.is_power_of_two(slots):
            raise UsageError("slot count must be a power of two, got %r" % (slots,))
        if not tolerance > 0:
            raise UsageError("tolerance must be positive, got %r" % (tolerance,))
        if seed < 0:
            raise UsageError("seed must be non-negative, got %r" % (seed,))
        if workers < 1:
            raise UsageError("workers must be at least 1, got %r" % (workers,))
        self.slots = slots
        self.seed = seed
        self.tolerance = tolerance
        self.output = output
        self.workers = workers

    def __repr__(self):
        return "<RunConfig slots=%d seed=%d tolerance=%g output=%r workers=%d>" % (
            self.slots, self.seed, self.tolerance, self.output, self.workers)


class Config:
    """This class contains the configuration variables as attributes.

    Each variable is described in _options by its section, its key in the
    file, its type and its default value.
    """

    CONFIG_PATH = os.path.expanduser('~/.config/volley/volleyrc')

    def __init__(self, path=None):
        if path is not None:
            self.CONFIG_PATH = path

        self._options = {
            'run': {
                'slots': ('slots', 'int', consts.DEFAULT_SLOTS),
                'seed': ('seed', 'int', consts.DEFAULT_SEED),
                'tolerance': ('tolerance', 'float', consts.DEFAULT_TOLERANCE),
                'workers': ('workers', 'int', consts.DEFAULT_WORKERS)},
            'quadgrad': {
                'epsilon': ('epsilon', 'float', consts.EPSILON),
                'adagrad_epsilon': ('adagrad_epsilon', 'float', consts.EPSILON)},
        }
        for attributes in self._options.values():
            for attribute, (opt_key, type, default) in attributes.items():
                setattr(self, attribute, default)

    def settings_load_real(self):
        """Load configuration from file"""

        conf = ConfigParser()
        conf.read(self.CONFIG_PATH)

        for section, attributes in self._options.items():
            for attribute, (opt_key, type, default) in attributes.items():
                if conf.has_option(section, opt_key):
                    try:
                        value = getattr(conf, 'get' + type)(section, opt_key)
                    except ValueError:
                        value = default
                        logger.warning(
                            "Can't load %r from section %r (as %s). Value is %r",
                            opt_key, section, type if type else "str",
                            conf.get(section, opt_key))
                else:
                    value = default
                setattr(self, attribute, value)

        env_slots = misc.volley_env_vars()
        if env_slots is not None:
            self.slots = env_slots

    def settings_save_real(self):
        """Save configuration in file"""

        conf = ConfigParser()
        for section, attributes in self._options.items():
            if not conf.has_section(section):
                conf.add_section(section)
            for attribute, (name, type, default) in attributes.items():
                value = getattr(self, attribute)
                if hasattr(Serializer, type):
                    value = getattr(Serializer, type)(value)
                conf.set(section, name, str(value))

        misc.create_dir(os.path.dirname(self.CONFIG_PATH))
        try:
            with open(self.CONFIG_PATH, 'w', encoding="utf-8") as rc:
                conf.write(rc)
        except IOError as e:
            logger.warning("Couldn't write configuration into %r: %s",
                           self.CONFIG_PATH, e)

    def run_config(self, slots=None, seed=None, tolerance=None, output="-",
                   workers=None):
        """Merge command line overrides (None means unset) into a RunConfig"""
        return RunConfig(
            slots=self.slots if slots is None else slots,
            seed=self.seed if seed is None else seed,
            tolerance=self.tolerance if tolerance is None else tolerance,
            output=output,
            workers=self.workers if workers is None else workers)
