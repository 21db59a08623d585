"""Build script for the optional compiled kernel core.

The package is fully functional without the extension: snapsde.backend
falls back to the numpy implementation when `snapsde._ckern` is missing.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "snapsde._ckern",
                ["src/snapsde/_ckern.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
