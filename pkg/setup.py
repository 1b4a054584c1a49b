import os
import sys

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

openmp = [] if sys.platform == "darwin" or os.environ.get("DESLOC_NO_OPENMP") else ["-fopenmp"]

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "desloc._kernels",
                ["src/desloc/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no -ffast-math / FMA contraction: results must match the numpy fallback bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off", *openmp],
                extra_link_args=openmp,
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
