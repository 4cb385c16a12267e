"""Build script: compiles the optional kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so extension build failures only cost speed, not function.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "eqa_forge._kernels._core",
        ["src/eqa_forge/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        # -ffp-contract=off: keep float results bit-identical to the numpy
        # fallback (no FMA contraction differences between the two paths).
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
