"""Hierarchical aggregation for point cloud instance segmentation.

Pipeline: shift points by predicted center offsets, group them with a fixed
bandwidth, let large groups absorb nearby fragments with a size- and
class-dependent bandwidth, then mask, score and rank the result.
"""
from .core import (
    Cluster,
    InstanceSet,
    PointCloud,
    SpatialHashGrid,
    UnionFind,
    build_spatial_hash,
    centroid,
    connected_components,
    neighbors_within,
)
from .errors import ConfigError, GenerationError, HaisError, InputError, InvariantViolation, ParseError
from .pipeline import PipelineResult, run_pipeline
from .point_aggregation import PerPointPrediction, apply_shift, point_aggregate, point_aggregate_bruteforce
from .set_aggregation import (
    AggregationConfig,
    compute_class_radii,
    dynamic_bandwidth,
    set_aggregate,
    split_primary_fragments,
)

__version__ = "0.1.0"
