"""Build script: compiles the Cython stepping kernels when possible.

The package works without the extension (a vectorized NumPy fallback is
selected at import time), so a failed extension build is downgraded to a
warning rather than aborting the install.
"""

import warnings

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "driftwalk._kernels._core",
                ["src/driftwalk/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    warnings.warn(f"Cython kernels not built ({exc}); pure-Python backend will be used")
    extensions = []

setup(ext_modules=extensions)
