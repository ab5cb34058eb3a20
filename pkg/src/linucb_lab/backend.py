"""Trial-loop backend, chosen once at import.

The compiled ``_kernel`` is used when importable; set ``LINUCB_LAB_BACKEND``
to ``python`` to force the reference loop (or ``compiled`` to fail loudly when
the extension is missing).
"""
import os

from . import _pykernel

_choice = os.environ.get("LINUCB_LAB_BACKEND", "auto").lower()

try:
    from . import _kernel as _compiled
except ImportError:  # extension not built
    _compiled = None

if _choice == "python" or (_choice == "auto" and _compiled is None):
    run_loop = _pykernel.run_loop
    NAME = "python"
elif _compiled is None:
    raise ImportError("LINUCB_LAB_BACKEND=compiled but linucb_lab._kernel is not built")
else:
    run_loop = _compiled.run_loop
    NAME = "compiled"

python_loop = _pykernel.run_loop
compiled_loop = None if _compiled is None else _compiled.run_loop
