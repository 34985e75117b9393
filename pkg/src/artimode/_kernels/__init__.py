"""Geometry kernel backend selection.

The compiled extension is preferred when present; set ARTIMODE_PURE_PY=1 to
force the numpy fallback (useful for debugging and for the backend
agreement tests).
"""

import os

if os.environ.get("ARTIMODE_PURE_PY", "") not in ("", "0"):
    from . import _slow as _backend
else:
    try:
        from . import _fast as _backend  # type: ignore[attr-defined]
    except ImportError:
        from . import _slow as _backend

BACKEND = _backend.NAME
BOX = 0
CYLINDER = 1

scene_sdf_batch = _backend.scene_sdf_batch
sphere_trace = _backend.sphere_trace
tsdf_fuse_view = _backend.tsdf_fuse_view


def backends():
    """Both implementations, for the agreement tests and the benchmark."""
    from . import _slow
    mods = {"numpy": _slow}
    try:
        from . import _fast
        mods["cython"] = _fast
    except ImportError:
        pass
    return mods
