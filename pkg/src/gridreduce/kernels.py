"""Backend selection for the machine kernels.

The compiled Cython module is used when it was built; otherwise the numpy
implementation.  Both expose ``currents``, ``rhs_rows``, ``rhs_all``,
``rk4_step``, ``rk4_step_staged`` and ``affine_rk4_step`` with identical
signatures.
"""
from __future__ import annotations

from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS: dict[str, ModuleType | None] = {"python": _pykernels, "compiled": _ckernels}
_active: ModuleType = _ckernels if _ckernels is not None else _pykernels


def available() -> list[str]:
    return [name for name, mod in _BACKENDS.items() if mod is not None]


def get(name: str | None = None) -> ModuleType:
    """Return a backend module by name, or the active one."""
    if name is None:
        return _active
    try:
        mod = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(_BACKENDS)}") from None
    if mod is None:
        raise RuntimeError(f"backend {name!r} is not available (extension not built)")
    return mod


def active_name() -> str:
    return "compiled" if _active is _ckernels and _ckernels is not None else "python"


def set_backend(name: str) -> None:
    """Select the process-wide default backend."""
    global _active
    _active = get(name)
