"""Staggered-adoption difference-in-differences toolkit for zone-based
place policies: stacked event studies with population-corrective weights,
spatial-HAC inference, synthetic DiD with placebo inference, pre-trend
sensitivity, single-year dynamics recovery, and spillover decay analysis,
validated against a built-in synthetic-data oracle.
"""

__version__ = "0.1.0"
