"""Compact vision-language pipeline: region extractor, fusion transformer, cost model."""

__version__ = "0.1.0"
