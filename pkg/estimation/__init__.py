"""Estimation engine: stage-1 scoring, empirical Bayes, ranking, panels."""

from estimation import eb_univariate, longitudinal, ranking, simulation, stage1

__all__ = ["stage1", "eb_univariate", "ranking", "longitudinal", "simulation"]
