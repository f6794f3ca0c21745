"""Backend selection for the grid sampling core.

The compiled extension is preferred; set BLURFIELD_BACKEND=numpy to force the
pure-python fallback (or =compiled to require the extension).
"""

import os

_choice = os.environ.get("BLURFIELD_BACKEND", "").strip().lower()

if _choice == "numpy":
    from . import _gridnp as _impl
    BACKEND = "numpy"
elif _choice == "compiled":
    from . import _gridcore as _impl
    BACKEND = "compiled"
elif _choice == "":
    try:
        from . import _gridcore as _impl
        BACKEND = "compiled"
    except ImportError:
        from . import _gridnp as _impl
        BACKEND = "numpy"
else:
    raise ImportError(f"BLURFIELD_BACKEND must be 'compiled' or 'numpy', got {_choice!r}")

vm_forward = _impl.vm_forward
vm_backward = _impl.vm_backward
