#!/usr/bin/env python
# -*- coding: utf-8 -*-

import os
import sys

from setuptools import setup

import starflow


if sys.argv[-1] == 'publish':
    os.system('python setup.py sdist upload')
    sys.exit()

def open_file(filename):
    """Open and read the file *filename*."""
    with open(filename) as f:
        return f.read()

readme = open_file('README.rst')
history = open_file('HISTORY.rst').replace('.. :changelog:', '')

setup(
    name='Star Flow',
    version=starflow.__version__,
    description=('Star Flow predicts citywide crowd inflow and outflow with '
                 'a single residual network'),
    long_description=readme + '\n\n' + history,
    author='Thomas Roten',
    author_email='thomas@roten.us',
    url='https://github.com/tsroten/starflow',
    packages=['starflow', 'starflow.tests'],
    package_dir={'starflow': 'starflow'},
    include_package_data=True,
    package_data={'starflow': ['data/*.json'],
                  'starflow.tests': ['data/*']},
    install_requires=[
        'numpy>=1.17',
        'fcache>=0.4.7',
    ],
    entry_points={
        'console_scripts': ['starflow = starflow.cli:main'],
    },
    license='BSD',
    keywords=['starflow', 'crowd flow', 'traffic', 'prediction',
              'trajectories', 'residual network', 'forecasting'],
    classifiers=[
        'Development Status :: 2 - Pre-Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],
    test_suite='starflow.tests',
)
