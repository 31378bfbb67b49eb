"""Build script for the optional compiled rainflow kernel.

The package works without the extension (a pure-Python backend is selected
at import time), so a failed compile downgrades to a warning instead of
aborting the install.
"""

import warnings

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    extensions = cythonize(
        [
            Extension(
                "shm_agents.kernels._rainflow",
                sources=["src/shm_agents/kernels/_rainflow.pyx"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - env without cython/compiler
    warnings.warn(f"building without compiled kernels: {exc}")
    extensions = []

setup(ext_modules=extensions)
