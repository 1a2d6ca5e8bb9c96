"""Simulated quantum mining of frequent 1- and 2-itemsets."""

__version__ = "0.1.0"
