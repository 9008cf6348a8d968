"""imfkit: adaptive intent management for a simulated network slice.

A goal-conditioned hierarchy drives slice knobs toward intent targets: tabular
lower-level agents own single knobs, a recurrent supervisor hands them KPI
sub-goals, and a run-time utility-context pathway lets the supervisor react to
re-weighted or re-shaped intent expectations without retraining.
"""

__version__ = "0.1.0"
