"""Kernel backend selection.

The compiled extension (``activetrack._core``) is preferred when it
imported cleanly; the pure-Python fallback (``activetrack._pure``) is
used otherwise, or when ``ACTIVETRACK_PURE=1`` is set. Both expose the
same three functions with bit-identical results:

    clear_fraction(cam, pts, boxes) -> float
    segment_clear(x0, y0, z0, x1, y1, z1, boxes) -> bool
    astar_grid(occ, sr, sc, gr, gc) -> int32 (n, 2) path

``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _pure

_force_pure = os.environ.get("ACTIVETRACK_PURE", "").strip() not in ("", "0")

_ext = None
if not _force_pure:
    try:
        from . import _core as _ext
    except ImportError:
        _ext = None

_impl = _ext if _ext is not None else _pure

BACKEND = "ext" if _ext is not None else "pure"

clear_fraction = _impl.clear_fraction
segment_clear = _impl.segment_clear
astar_grid = _impl.astar_grid


def get_backend(name):
    """Return the named kernel module ("ext" or "pure") for benchmarks/tests."""
    if name == "pure":
        return _pure
    if name == "ext":
        if _ext is None:
            raise RuntimeError("compiled kernels are not available")
        return _ext
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ("ext", "pure") if _ext is not None else ("pure",)
