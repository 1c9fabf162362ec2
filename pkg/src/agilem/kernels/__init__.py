"""Hot kernels with two interchangeable lanes.

A compiled Cython extension (``agilem.kernels._core``) is preferred when it
built successfully; otherwise a pure NumPy fallback is used. Both lanes
produce identical results. Set ``AGILEM_KERNELS=python`` to force the
fallback, or ``AGILEM_KERNELS=compiled`` to require the extension.
"""

import os

from agilem.kernels import fallback as _fallback

_choice = os.environ.get("AGILEM_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "compiled", "python"):
    raise ValueError(f"AGILEM_KERNELS must be auto, compiled, or python, got {_choice!r}")

if _choice == "python":
    _impl = _fallback
else:
    try:
        from agilem.kernels import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _fallback

BACKEND: str = "compiled" if _impl is not _fallback else "python"

siphash64 = _impl.siphash64
siphash64_many = _impl.siphash64_many
margin_from_probs = _impl.margin_from_probs

__all__ = ["BACKEND", "siphash64", "siphash64_many", "margin_from_probs", "fallback"]
