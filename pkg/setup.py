"""Build script for the optional compiled event-simulator kernel.

The package is fully functional without the extension (a pure-numpy
reference implementation is selected at import time), so a failed
compile downgrades to a warning instead of aborting the install.
"""

import warnings

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "ceoptics._kernels._evsim",
                ["src/ceoptics/_kernels/_evsim.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
    warnings.warn(f"building without compiled kernels ({exc})")
    extensions = []

setup(ext_modules=extensions)
