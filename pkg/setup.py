import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "tractgraph._geomcore",
                ["src/tractgraph/_geomcore.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # Pure-Python geometry fallback is selected at import time, so the
    # package still works without the compiled core.
    ext_modules = []

setup(ext_modules=ext_modules)
