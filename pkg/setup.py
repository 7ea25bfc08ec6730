"""Build script: compiles the optional accelerator extension.

The package is fully functional without the extension (a pure-Python
fallback is selected at import time), so a failed compile only costs
speed, never functionality.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/activetrack/_core.pyx"],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(
        f"warning: skipping compiled kernels ({exc}); "
        "the pure-Python fallback will be used\n"
    )

setup(ext_modules=ext_modules)
