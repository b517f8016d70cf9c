"""Optional numba acceleration.

Set ``WALKBO_DISABLE_JIT=1`` to run every hot loop as plain Python/numpy.
The flag is read once at import time.
"""

import os

JIT_DISABLED = os.environ.get("WALKBO_DISABLE_JIT", "0").lower() in ("1", "true", "yes")

if not JIT_DISABLED:
    try:
        import numba as nb
    except ImportError:  # pragma: no cover
        JIT_DISABLED = True


def njit(*args, **kwargs):
    if JIT_DISABLED:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda func: func
    kwargs.setdefault("cache", True)
    return nb.njit(*args, **kwargs)
