"""Build script for the compiled kernel extension.

The package works without the extension (a pure-Python fallback is selected
at import time); building it is strongly recommended for realistic scenario
sizes.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "cavesim.kernels._core",
        ["src/cavesim/kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
