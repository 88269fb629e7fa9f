"""Piecewise-linear model of the bipolar, amacrine and ganglion retinal layers."""

__version__ = "0.1.0"
