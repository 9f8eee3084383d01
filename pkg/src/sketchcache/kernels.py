"""Kernel backend selection.

Imports the compiled Cython kernels when available, otherwise the
pure-Python twins. ``SKETCHCACHE_PURE_PYTHON=1`` forces the fallback
(useful for benchmarking and for debugging the reference path). The two
backends are bit-identical by contract; ``tests/test_kernels.py`` holds
them to it.
"""

from __future__ import annotations

import os

if os.environ.get("SKETCHCACHE_PURE_PYTHON"):
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _pykernels as _impl  # type: ignore[no-redef]

BACKEND: str = _impl.BACKEND


def available_backends() -> dict[str, object]:
    """Importable kernel modules by name (for the backend benchmark)."""
    from . import _pykernels

    found: dict[str, object] = {_pykernels.BACKEND: _pykernels}
    try:
        from . import _ckernels  # type: ignore[attr-defined]

        found[_ckernels.BACKEND] = _ckernels
    except ImportError:
        pass
    return found


hash64 = _impl.hash64
hash64_many = _impl.hash64_many
sample_depth = _impl.sample_depth
sample_depth_many = _impl.sample_depth_many
cs_update_est = _impl.cs_update_est
cs_estimate = _impl.cs_estimate
cs_estimate_many = _impl.cs_estimate_many
admit_one = _impl.admit_one
admit_mask = _impl.admit_mask
