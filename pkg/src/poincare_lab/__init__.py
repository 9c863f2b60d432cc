"""Grid laboratory for fractional and weighted Poincare-type inequalities."""

__version__ = "0.1.0"

from .lattice import (Cube, Grid, ScalarField, CellMeasure, WeightField, CellSet,
                      InequalityParams, ProbeParams, make_grid, sample_field, sample_measure)
from ._parallel import set_threads, get_threads

__all__ = ["Cube", "Grid", "ScalarField", "CellMeasure", "WeightField", "CellSet",
           "InequalityParams", "ProbeParams", "make_grid", "sample_field", "sample_measure",
           "set_threads", "get_threads", "__version__"]
