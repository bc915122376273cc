"""Earliest occupancy maps for safety-aware motion prediction."""
