"""Planar quadrotor optimal-control dataset, policy network and a
min-snap/flatness baseline, with closed-loop delay and benchmark tools."""

__version__ = "0.1.0"
