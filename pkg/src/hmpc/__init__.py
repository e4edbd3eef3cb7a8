"""Hybrid-sampling MPC: simulate and verify controllers whose sampling time
is decoupled from the discretization time of their prediction model."""

__version__ = "0.1.0"
