"""Adoption estimation and forecasting for spatially networked
transportation services.

Subpackages:

- ``model``: zones, supply timeline, persons, panel expansion, sampling weights
- ``destination``: destination-choice MNL and logsum accessibility
- ``lccm``: dynamic latent-class adoption model, EM estimation
- ``bass``: aggregate diffusion baseline
- ``forecast``: calibration, scenario forecasts, bootstrap bands, holdout
- ``synthgen``: synthetic data generator
- ``io`` / ``cli`` / ``report``: file formats, command line, reporting
"""

from __future__ import annotations

__version__ = "0.1.0"
