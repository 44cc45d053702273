"""Read-only query layers over a fused-table snapshot.

Three layers: place-name and admin-region reasoning (gazetteer,
regions), text-based feature screening (screening), and dual-mode data
retrieval (retrieval). The HTTP surface in service ties them together
over one immutable snapshot.
"""

from terrafuse.query.gazetteer import Gazetteer, GazetteerEntry, GeocodeNotFound, Geocoder
from terrafuse.query.regions import AdminRegion, RegionError, admin_hierarchy, load_regions, point_in_polygon
from terrafuse.query.screening import (
    FeatureEmbedding,
    build_feature_index,
    cosine,
    embed_text,
    screen_features,
    tokenize,
)
from terrafuse.query.retrieval import (
    BBox,
    QueryError,
    TooManyFeatures,
    query_feature_distribution,
    query_samples,
)

__all__ = [
    "AdminRegion",
    "BBox",
    "FeatureEmbedding",
    "Gazetteer",
    "GazetteerEntry",
    "GeocodeNotFound",
    "Geocoder",
    "QueryError",
    "RegionError",
    "TooManyFeatures",
    "admin_hierarchy",
    "build_feature_index",
    "cosine",
    "embed_text",
    "load_regions",
    "point_in_polygon",
    "query_feature_distribution",
    "query_samples",
    "screen_features",
    "tokenize",
]
