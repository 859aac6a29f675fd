# -*- coding: utf-8 -*-
"""Unit tests for the starflow package."""
