"""Build script: compiles the optional stencil-sum extension.

The package works without the extension (a numpy/FFT fallback is selected
at import), so any build failure here only costs speed.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "triquat._kernels._ballsum",
                ["src/triquat/_kernels/_ballsum.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
