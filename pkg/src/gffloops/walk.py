"""Random-walk oracle kernel, compiled when available.

The compiled extension ``gffloops._walk`` is used when it was built; the
numpy implementation in ``gffloops._walk_py`` is the fallback.  Callers
pick a kernel explicitly with ``backend="numpy"`` or ``"compiled"``.
"""

from . import _walk_py

MODE_FPS = _walk_py.MODE_FPS
MODE_TVS = _walk_py.MODE_TVS
MODE_CLUSTER = _walk_py.MODE_CLUSTER

try:
    from . import _walk as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "numpy"


def walk_batch(bit_generator, n_paths, dt, mode, a, b, gap, t_max, bridge=False, v=0.0, L=0.0,
               backend=None):
    """Dispatch to the selected kernel; ``backend`` overrides the import-time choice."""
    use = backend or BACKEND
    if use == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled walk kernel is not available")
        return _compiled.walk_batch(bit_generator, int(n_paths), float(dt), int(mode), float(a),
                                    float(b), float(gap), float(t_max), bool(bridge), float(v),
                                    float(L))
    return _walk_py.walk_batch(bit_generator, int(n_paths), float(dt), int(mode), float(a),
                               float(b), float(gap), float(t_max), bool(bridge), float(v), float(L))
