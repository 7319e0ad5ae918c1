#!/usr/bin/env python

import sys
if sys.version_info < (3, 8):
    sys.stderr.write("Volley requires Python 3.8+\n")
    sys.exit(1)

import os
from setuptools import setup
from volley.version import version


versionfile = open("volley/genversion.py", "wt")
versionfile.write("""
# generated by setup.py
VERSION = 'v%s'
""" % version)
versionfile.close()


data_files = [
    ('share/volley', ['README.rst', 'DESIGN.md']),
]


setup(
    name='Volley',
    version=version,
    description='Slot-vector simulator of Volley Revolver packed homomorphic '
                'encryption, with quadratic-gradient logistic regression.',
    classifiers=[
        'Development Status :: 4 - Beta',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Mathematics',
        'Topic :: Security :: Cryptography',
    ],
    packages=["volley", "volley.tests"],
    package_dir={"volley": "volley"},
    data_files=data_files,
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.4',
        'scikit-learn>=0.24',
    ],
    entry_points={
        'console_scripts': [
            'volley=volley.launcher:run',
        ]
    },
    test_suite='volley.tests',
)
try:
    os.remove("volley/genversion.py")
    os.remove("volley/genversion.pyc")
except OSError:
    pass
