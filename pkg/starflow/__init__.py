# -*- coding: utf-8 -*-
"""Citywide crowd-flow prediction with a single residual network."""

__version__ = '0.1.0'
