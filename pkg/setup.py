"""Build script: compiles the optional thinning kernel extension.

The package works without the extension (a pure-Python fallback is selected
at import time); building it makes large Monte Carlo sweeps much faster.
The kernel calls numpy's C distribution functions, which live in the static
libraries numpy ships next to its headers.
"""
import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    np_root = os.path.dirname(numpy.__file__)
    ext_modules = cythonize(
        [
            Extension(
                "tramflow._thinning",
                ["src/tramflow/_thinning.pyx"],
                include_dirs=[numpy.get_include()],
                library_dirs=[
                    os.path.join(np_root, "random", "lib"),
                    os.path.join(np_root, "_core", "lib"),
                    os.path.join(np_root, "core", "lib"),  # numpy < 2
                ],
                libraries=["npyrandom", "npymath"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
