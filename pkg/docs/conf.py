#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# Star Flow documentation build configuration file.

import os
import sys

sys.path.insert(0, os.path.abspath('..'))

import starflow  # noqa: E402

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.viewcode',
]

source_suffix = '.rst'
master_doc = 'index'

project = 'Star Flow'
copyright = '2014, Thomas Roten'

release = starflow.__version__
version = '.'.join(release.split('.')[:2])

exclude_patterns = ['_build']
pygments_style = 'sphinx'

html_theme = 'default'
htmlhelp_basename = 'StarFlowdoc'

man_pages = [
    ('index', 'starflow', 'Star Flow Documentation', ['Thomas Roten'], 1),
]

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
}

autoclass_content = 'both'
autodoc_member_order = 'bysource'
