"""Select the VM kernel at import time.

The compiled extension is used when it was built; set ``SELFWATCH_PURE=1``
to force the pure-Python kernel.
"""

import os

if os.environ.get("SELFWATCH_PURE"):
    from . import _vmcore_py as kernel
    BACKEND = "python"
else:
    try:
        from . import _vmcore as kernel
        BACKEND = "cython"
    except ImportError:
        from . import _vmcore_py as kernel
        BACKEND = "python"

__all__ = ["kernel", "BACKEND"]
