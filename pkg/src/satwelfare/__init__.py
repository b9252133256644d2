"""Estimate program effects on household wealth from satellite-derived housing quality.

Pipeline: ingest census, survey, building polygons and a night-light grid;
classify roofs; aggregate to grid cells; regress outcomes on treatment
intensity with Conley errors; fit Engel curves on matched households; and
scale proxy effects into welfare effects.
"""

__version__ = "0.1.0"
