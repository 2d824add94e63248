"""Desk-scale beam-hardening CT laboratory.

Subpackages: :mod:`streaklab.model` (value types, grids, file formats),
:mod:`streaklab.geometry` (convex shapes, support functions, phantoms),
:mod:`streaklab.xray` (projectors and filtered backprojection),
:mod:`streaklab.beamhardening` (polychromatic data models),
:mod:`streaklab.specfilter` (invertible pre-reconstruction filters),
:mod:`streaklab.streaks` (streak-line prediction and measurement),
:mod:`streaklab.cli` (the ``streaklab`` command).
"""

__version__ = "0.1.0"
