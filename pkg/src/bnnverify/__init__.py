"""Local-robustness toolkit for binarized traffic-sign classifiers."""

__version__ = "0.1.0"
