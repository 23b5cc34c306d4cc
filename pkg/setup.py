import os

import numpy
from setuptools import Extension, setup

# The compiled kernel is optional: set SPLINEHAZ_NO_EXT=1 to install the
# pure-numpy build (the package falls back automatically at import time).
if os.environ.get("SPLINEHAZ_NO_EXT"):
    ext_modules = []
else:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "splinehaz._kernels._core",
                ["src/splinehaz/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
