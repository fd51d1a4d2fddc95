"""Benchmark of propensity-based and representation-based treatment effect
estimators under mislabeled covariate roles."""

__version__ = "0.1.0"
