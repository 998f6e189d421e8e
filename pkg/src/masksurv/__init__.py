"""Discrete-time survival prediction on tabular data with missing values.

A transformer encoder treats each feature as a token and masks missing ones
out of attention and pooling, so no imputation is needed. Imputation +
Cox / MLP pipelines are included for comparison.
"""
__version__ = "0.1.0"
