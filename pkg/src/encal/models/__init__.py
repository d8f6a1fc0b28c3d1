from .backend import HAVE_COMPILED, active_backend, get_kernel
from .markers import (BeatMarkers, apd_field, beat_windows, cell_feasibility,
                      count_upcrossings, extract_apd, extract_lat, lat_field,
                      output_labels, s1s2_fields, s1s2_markers, s1s2_outputs)
from .mms import (CellParams, Geometry, PacingProtocol, SimulationTrace,
                  TissueParams, default_cable, default_sheet, simulate_cell,
                  simulate_tissue, stable_dt)
from .toy import TOY_LABELS, TOY_TRUTH, TOY_X, toy_forward

__all__ = [
    "HAVE_COMPILED", "active_backend", "get_kernel",
    "BeatMarkers", "apd_field", "beat_windows", "cell_feasibility",
    "count_upcrossings", "extract_apd", "extract_lat", "lat_field",
    "output_labels", "s1s2_fields", "s1s2_markers", "s1s2_outputs",
    "CellParams", "Geometry", "PacingProtocol", "SimulationTrace",
    "TissueParams", "default_cable", "default_sheet", "simulate_cell",
    "simulate_tissue", "stable_dt",
    "TOY_LABELS", "TOY_TRUTH", "TOY_X", "toy_forward",
]
