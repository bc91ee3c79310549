"""Finite-window (superstate) approximations of POMDPs: filtering, planning, learning and error bounds."""

__version__ = "0.1.0"
