"""Benchmark toolkit for block-based multi-bit image watermarking."""

__version__ = "0.1.0"
