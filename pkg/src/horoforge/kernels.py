"""Kernel selection: the compiled extension when importable, else pure Python.

Set ``HOROFORGE_KERNEL=python`` to force the fallback.
"""

import os

from . import _kernel_py

BACKEND = "python"
_impl = _kernel_py
if os.environ.get("HOROFORGE_KERNEL", "").lower() != "python":
    try:
        from . import _kernel as _impl  # noqa: F811

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernel_py

FIELD_PLANE = _kernel_py.FIELD_PLANE
FIELD_NECK = _kernel_py.FIELD_NECK
SEG_LINE = _kernel_py.SEG_LINE
SEG_ARC = _kernel_py.SEG_ARC
SEG_LOG = _kernel_py.SEG_LOG

rk4_segment = _impl.rk4_segment
rk4_batch = _impl.rk4_batch


def get_backend(name):
    """Return the kernel module for ``name`` in {"compiled", "python"}."""
    if name == "python":
        return _kernel_py
    from . import _kernel

    return _kernel
