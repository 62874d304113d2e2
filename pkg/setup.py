import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the package falls back to numpy kernels
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("NEUMANN_MCF_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "neumann_mcf._kernels",
                ["src/neumann_mcf/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
