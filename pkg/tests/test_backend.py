import subprocess
import sys

import pytest

from fairgrad import _backend


def test_resolve_explicit_and_env(monkeypatch):
    monkeypatch.delenv("FAIRGRAD_BACKEND", raising=False)
    assert _backend.resolve("python") == "python"
    assert _backend.resolve() == ("compiled" if _backend.HAVE_COMPILED else "python")
    monkeypatch.setenv("FAIRGRAD_BACKEND", "python")
    assert _backend.resolve() == "python"
    assert _backend.resolve("auto") == ("compiled" if _backend.HAVE_COMPILED else "python")
    with pytest.raises(ValueError):
        _backend.resolve("gpu")


def test_missing_extension(monkeypatch):
    monkeypatch.setattr(_backend, "HAVE_COMPILED", False)
    assert _backend.resolve("auto") == "python"
    with pytest.raises(ImportError, match="FAIRGRAD_BACKEND=python"):
        _backend.resolve("compiled")


def test_fallback_when_extension_cannot_import():
    # block the extension module before the package imports it
    code = (
        "import sys\n"
        "class Block:\n"
        "    def find_spec(self, name, path=None, target=None):\n"
        "        if name == 'fairgrad._kernels':\n"
        "            raise ImportError(name)\n"
        "sys.meta_path.insert(0, Block())\n"
        "import numpy as np\n"
        "import fairgrad\n"
        "from fairgrad.data import biased_benchmark\n"
        "from fairgrad.trainer import TrainConfig, train\n"
        "tr, va, _ = biased_benchmark(200, 0)\n"
        "r = train(TrainConfig(epochs=1), tr, va, fairgrad.AP)\n"
        "print(fairgrad.HAVE_COMPILED, r.backend)\n"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "python"]
