"""Fact-tree question answering over n-ary knowledge graphs."""

__version__ = "0.1.0"
