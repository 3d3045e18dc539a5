"""
A setuptools based setup module.

See:
https://packaging.python.org/en/latest/distributing.html
https://github.com/pypa/sampleproject
"""

import re
from io import open
from os import path

# Always prefer setuptools over distutils
from setuptools import find_packages, setup

HERE = path.abspath(path.dirname(__file__))
PKG_NAME = 'lporl'

# Get the long description from the README file
with open(path.join(HERE, 'README.md'), encoding='utf-8') as readme_file:
    LONG_DESCRIPTION = readme_file.read()

VERSION = ""
DESCRIPTION = ""
with open(path.join(HERE, '%s/__init__.py' % PKG_NAME), encoding='utf-8') as init_file:
    init_file_contents = init_file.read()
    VERSION = re.search(r"^__version__\s*=\s*['\"]([^'\"]*)['\"]", init_file_contents, re.MULTILINE).group(1)
    DESCRIPTION = re.search(r"^DESCRIPTION\s*=\s*['\"]([^'\"]*)['\"]", init_file_contents, re.MULTILINE).group(1)

setup(
    name=PKG_NAME,
    version=VERSION,
    description=DESCRIPTION,
    long_description=LONG_DESCRIPTION,
    long_description_content_type='text/markdown',

    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
    ],

    keywords='reinforcement-learning offline-rl linear-mdp primal-dual',

    packages=find_packages(exclude=['contrib', 'docs', 'tests', 'benchmarks']),

    python_requires='>=3.8',

    install_requires=[
        'numpy>=1.17',
        'scipy>=1.4',
        'traitlets>=5',
        'coloredlogs>=10.0',
        'tqdm>=4.23.4',
        'tabulate>=0.8.2',
    ],

    extras_require={
        'dev': ['check-manifest'],
        'test': ['pytest', 'pytest-cov', 'coverage', 'mock'],
    },

    # Provides the `lporl` command
    entry_points={
        'console_scripts': [
            '{0}={0}.core:main'.format(PKG_NAME),
        ],
    },
)
