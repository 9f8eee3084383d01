"""sketchcache: approximate sliding-window aggregation for monitoring.

Summaries are kept in time-decomposed buckets so any sub-window of the
retained span can be answered in milliseconds with bounded error:

* quantiles / min / max    -> EhKll      (bucketed quantile sketches)
* distinct / entropy / L2 / top-k -> EhUniv (bucketed universal sketches)
* count / sum / avg / stddev / stdvar -> SampleWindow (uniform samples)

The SketchCache registry maps rule expressions to per-series instances;
the query engine answers a small range-query language from the cache with
exact fallback; the HTTP service exposes ingest/query/rules/stats.
"""

from .cache import CacheInstance, CacheMiss, ExactStore, RuleSpec, SketchCache
from .ehkll import EhKll
from .ehuniv import EhUniv
from .errors import (
    DuplicateLabel,
    EmptyRange,
    EmptySketch,
    EmptyWindow,
    InsufficientSamples,
    MismatchedConfig,
    OutOfOrder,
    ParseError,
    QueryOutsideWindow,
    SketchCacheError,
    UnknownRule,
    UnsupportedFunction,
)
from .kernels import BACKEND
from .kll import KllSketch
from .model import (
    DataSample,
    Family,
    SeriesId,
    SketchConfig,
    TimeWindow,
    canonicalize,
    default_gsum_config,
    default_quantile_config,
)
from .query import QueryExpr, QueryResult, evaluate, exact_eval, parse
from .sampler import SampleWindow
from .universal import UnivSketch

__version__ = "1.0.0"

__all__ = [
    "BACKEND",
    "CacheInstance",
    "CacheMiss",
    "DataSample",
    "DuplicateLabel",
    "EhKll",
    "EhUniv",
    "EmptyRange",
    "EmptySketch",
    "EmptyWindow",
    "ExactStore",
    "Family",
    "InsufficientSamples",
    "KllSketch",
    "MismatchedConfig",
    "OutOfOrder",
    "ParseError",
    "QueryExpr",
    "QueryOutsideWindow",
    "QueryResult",
    "RuleSpec",
    "SampleWindow",
    "SeriesId",
    "SketchCache",
    "SketchCacheError",
    "SketchConfig",
    "TimeWindow",
    "UnivSketch",
    "UnknownRule",
    "UnsupportedFunction",
    "canonicalize",
    "default_gsum_config",
    "default_quantile_config",
    "evaluate",
    "exact_eval",
    "parse",
    "__version__",
]
