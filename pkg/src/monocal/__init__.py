"""Monodomain left-ventricle activation modelling and conductivity calibration.

The package covers the full loop used in the validation studies: mesh and
fiber generation, monodomain simulation with a minimal ventricular ionic
model, activation-map extraction, registration of catheter measurements
onto the mesh, and direct-search calibration of the conductivity triple.
"""

from __future__ import annotations

__version__ = "0.1.0"
