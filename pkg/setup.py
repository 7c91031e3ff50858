"""Builds the optional compiled kernel extension.

The package works without it (a pure-NumPy fallback is selected at import);
the extension is only skipped when Cython or a C compiler is unavailable.
"""

import os

from setuptools import setup

ext_modules = []
try:
    if not os.path.exists("src/thrusterquad/_kernels.pyx"):
        raise ImportError
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "thrusterquad._kernels",
                ["src/thrusterquad/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
