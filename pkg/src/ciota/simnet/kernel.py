"""Backend selection for the epoch kernel.

The compiled kernel is used when the extension was built; otherwise the
pure-Python implementation is used.  ``CIOTA_KERNEL=python`` forces the
fallback.
"""
import os

from ciota.simnet._pykernel import PyEpochKernel

CEpochKernel = None
if os.environ.get("CIOTA_KERNEL", "").lower() != "python":
    try:
        from ciota.simnet._ckernel import CEpochKernel
    except ImportError:  # extension not built
        CEpochKernel = None

EpochKernel = CEpochKernel if CEpochKernel is not None else PyEpochKernel
BACKEND = EpochKernel.backend


def get_kernel(backend: str = "auto"):
    if backend == "python":
        return PyEpochKernel
    if backend == "cython":
        if CEpochKernel is None:
            raise RuntimeError("compiled kernel is not available; rebuild the package")
        return CEpochKernel
    return EpochKernel
