"""Continual rare-class recognition: joint general/specialized training with
correlation penalties, EVT rejection thresholds, stream-time recognition, and
word-cover interpretability analysis."""

from . import (coverage, dataset, evaluation, featurize, objective,
               recognizer, rejection, trainer)

__all__ = ["coverage", "dataset", "evaluation", "featurize", "objective",
           "recognizer", "rejection", "trainer"]

__version__ = "0.1.0"
