"""Orchestration of expert policies in tabular MDPs via adversarial learners."""

__version__ = "0.1.0"
