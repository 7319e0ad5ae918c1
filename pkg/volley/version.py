"""Version of the Volley sources.

The build writes volley/genversion.py; a source checkout asks git; anything
else falls back to the last release.
"""

import os
from subprocess import Popen, PIPE

try:
    from volley.genversion import VERSION
    build_ver = VERSION
except ImportError:
    build_ver = None

# Should be the most recent release
default_version = "v0.3.0"


def _git_describe():
    here = os.path.dirname(__file__)
    try:
        out = Popen(["git", "describe", "--tags", "--abbrev=4", "HEAD"],
                    cwd=here, stdout=PIPE,
                    stderr=PIPE).communicate()[0].decode('utf-8')
    except OSError:
        return None
    return out.strip() or None


def _version():
    '''Get the version number of the sources, without the leading "v".'''
    version = build_ver or _git_describe() or default_version
    return version[1:] if version.startswith('v') else version


def version_tuple(text):
    """Numeric part of a version string: '0.3.0-2-gabcd' -> (0, 3, 0)"""
    head = text.split('-')[0]
    return tuple(int(part) for part in head.split('.') if part.isdigit())


version = _version()
