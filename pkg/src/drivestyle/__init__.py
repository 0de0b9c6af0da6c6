"""Driving-style segmentation with a sticky HDP-HMM, urgency ranking of the
resulting clusters, and mapping of scene features onto the ranking."""
from .ingest import DrivingSeries, derive_accel, parse_csv, parse_oxts, serialize_csv, standardize
from .kernels import BACKEND
from .ranking import Level, assign_level, rank_clusters
from .sticky import Hyperparameters, extract_segments, fit, summarize_clusters

__version__ = "0.1.0"
