"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback
takes over. Set ``DESLOC_PURE_PYTHON=1`` to force the fallback. Both backends
are bit-identical, so the choice only affects speed.
"""

from __future__ import annotations

import os

from desloc import _fallback

try:
    if os.environ.get("DESLOC_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from desloc import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def backend(name: str | None = None):
    """Return a kernel namespace: ``"compiled"``, ``"python"`` or the default."""
    if name is None:
        name = BACKEND
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    if name == "python":
        return _fallback
    raise ValueError(f"unknown kernel backend {name!r}")


_active = backend()
mean_rows = _active.mean_rows
clip_rows = _active.clip_rows
clip_rows_norm = _active.clip_rows_norm
row_norms = _active.row_norms
rosenbrock_grad = _active.rosenbrock_grad
quadratic_grad = _active.quadratic_grad
adam_step = _active.adam_step
adopt_step = _active.adopt_step
sgdm_step = _active.sgdm_step
