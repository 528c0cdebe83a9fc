"""Toolkit for building and evaluating RGB-thermal foundation-model pipelines at desk scale."""

from pathlib import Path

__version__ = "0.1.0"
SUMMARY_SCHEMA = 1

MINI_DATASET = Path(__file__).parent / "data" / "mini"
