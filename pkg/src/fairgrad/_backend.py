"""Pick the compiled epoch kernel when it is importable.

``FAIRGRAD_BACKEND`` overrides the choice: ``python`` forces the pure-numpy
loop, ``compiled`` fails loudly if the extension is missing, ``auto`` (the
default) uses the extension when present.
"""
import os

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

HAVE_COMPILED = _kernels is not None


def resolve(name: str | None = None) -> str:
    name = (name or os.environ.get("FAIRGRAD_BACKEND") or "auto").lower()
    if name == "auto":
        return "compiled" if HAVE_COMPILED else "python"
    if name == "compiled" and not HAVE_COMPILED:
        raise ImportError("fairgrad._kernels is not built; run `pip install -e .` or set FAIRGRAD_BACKEND=python")
    if name not in ("python", "compiled"):
        raise ValueError(f"unknown backend {name!r}")
    return name


def kernels():
    return _kernels
