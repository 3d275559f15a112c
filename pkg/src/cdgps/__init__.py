"""Carrier-phase differential GPS relative navigation.

Library for simulating and estimating the relative state of two
formation-flying spacecraft from GPS code and carrier observables, with
integer ambiguity resolution optionally aided by inter-satellite range and
bearing sensors.
"""

__version__ = "0.1.0"
