"""Build the optional compiled transport kernel.

If Cython or a C compiler is unavailable the package still installs and falls
back to the pure-Python kernel at import time.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("HOROFORGE_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "horoforge._kernel",
                    ["src/horoforge/_kernel.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
