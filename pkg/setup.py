import os

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

compiler_directives = {
    "boundscheck": False,
    "wraparound": False,
    "cdivision": True,
    "language_level": "3",
}

numpy_random_lib = os.path.join(os.path.dirname(numpy.random.__file__), "lib")

ext_modules = [
    Extension(
        "asiplab._kernels",
        ["src/asiplab/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        library_dirs=[numpy_random_lib],
        libraries=["npyrandom"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(ext_modules, compiler_directives=compiler_directives))
