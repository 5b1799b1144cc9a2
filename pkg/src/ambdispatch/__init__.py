"""Ambulance dispatch simulation, heuristics and optimization."""

__version__ = "0.1.0"
