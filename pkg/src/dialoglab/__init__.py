"""Slot-filling dialog policy learning with a learned user simulator,
hindsight dialog stitching, and an adaptive simulation-budget coordinator."""

__version__ = "0.1.0"
