"""Simulator and analysis toolkit for backlog-adaptive erasure-coded storage access."""

from fecsim.model import ClassSpec, CodeChoice, DelayParams, SystemSpec

__version__ = "0.1.0"

__all__ = ["ClassSpec", "CodeChoice", "DelayParams", "SystemSpec", "__version__"]
