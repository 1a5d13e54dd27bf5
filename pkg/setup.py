import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "pqxplain.kernels._convolve",
                ["src/pqxplain/kernels/_convolve.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython available: install the pure-numpy backend only.
    extensions = []

setup(ext_modules=extensions)
