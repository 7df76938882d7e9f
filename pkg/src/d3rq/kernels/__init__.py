"""Hot kernels with a compiled backend and a numpy fallback.

The compiled module is used when it imports cleanly; set ``D3RQ_PURE=1``
to force the fallback. ``BACKEND`` names whichever was picked.
"""

import os

from . import _pure

if os.environ.get("D3RQ_PURE", "") in ("", "0"):
    try:
        from . import _ext as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _pure
        BACKEND = "pure"
else:
    _impl = _pure
    BACKEND = "pure"

project = _impl.project
shift_crop = _impl.shift_crop
nstep_walk = _impl.nstep_walk


def backends():
    """Return every importable backend as a name -> module mapping."""
    found = {"pure": _pure}
    try:
        from . import _ext
        found["compiled"] = _ext
    except ImportError:
        pass
    return found
