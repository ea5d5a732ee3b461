#!/usr/bin/env python3
"""
Setup script for the black-box communication workbench

Usage:
    pip install -e .                    # Development install
    pip install -e .[test]              # With the test suite tooling
    pip install .                       # Regular install
"""

from setuptools import setup, find_packages
import os
import sys

# Ensure Python version compatibility
if sys.version_info < (3, 10):
    raise RuntimeError("This package requires Python 3.10 or higher")

# Read long description from README
def read_long_description():
    """Read the README file for long description"""
    readme_path = os.path.join(os.path.dirname(__file__), 'README.md')
    if os.path.exists(readme_path):
        with open(readme_path, 'r', encoding='utf-8') as f:
            return f.read()
    return "Finite-alphabet workbench for communicating sources over black-box channels"

# Read requirements from requirements files
def read_requirements(filename):
    """Read requirements from a requirements file"""
    filepath = os.path.join(os.path.dirname(__file__), filename)
    if os.path.exists(filepath):
        with open(filepath, 'r', encoding='utf-8') as f:
            return [line.strip() for line in f if line.strip() and not line.startswith('#')]
    return []

requirements = read_requirements('requirements.txt')

# Testing requirements
test_requirements = [
    'pytest>=7.4.0',
    'pytest-cov>=4.1.0',
]

# Additional development requirements
dev_requirements = test_requirements + [
    'black>=23.0.0',
    'flake8>=6.0.0',
    'isort>=5.12.0',
    'mypy>=1.5.0',
]

# Plotting is part of the default install; the extra pins the backend explicitly
plot_requirements = [
    'matplotlib>=3.8.0',
]

setup(
    # Basic package information
    name="blackbox-comm-lab",
    version="0.1.0",
    description="Finite-alphabet workbench: rate-distortion solvers, random codes and layered "
                "communication over black-box channels",
    long_description=read_long_description(),
    long_description_content_type="text/markdown",

    # Package discovery
    packages=find_packages(include=['blackbox_comm', 'blackbox_comm.*']),
    include_package_data=True,
    package_data={
        '': ['*.md', '*.json'],
    },

    # Entry points for command-line tools
    entry_points={
        'console_scripts': [
            'bbcomm=blackbox_comm.cli.main:main',
        ],
    },

    # Requirements
    python_requires=">=3.10",
    install_requires=requirements,

    # Extra requirements for different use cases
    extras_require={
        'dev': dev_requirements,
        'test': test_requirements,
        'plot': plot_requirements,
        'all': dev_requirements + plot_requirements,
    },

    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3 :: Only",
        "Environment :: Console",
    ],
    keywords=[
        "information-theory", "rate-distortion", "blahut-arimoto", "channel-coding",
        "joint-typicality", "monte-carlo", "compound-channel",
    ],
    zip_safe=False,
)
