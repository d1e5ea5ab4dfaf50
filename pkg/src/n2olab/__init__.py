"""Plant-wide activated-sludge N2O emission laboratory.

Simulates a nitrogen-removal plant (4 anoxic + 3 aerobic completely mixed
tanks between two ideal clarifiers) with mechanistic N2O production
pathways, generates synthetic monitoring-campaign datasets, computes
signal-dynamics statistics and benchmarks soft-sensor regression models
with permutation feature importance.
"""

__version__ = "0.1.0"

from . import biokinetics, components, parameters  # noqa: F401
