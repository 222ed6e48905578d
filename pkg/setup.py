import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    # Optional: the package falls back to the pure-numpy kernels if the
    # extension is missing or fails to build.
    ext_modules = cythonize(
        [
            Extension(
                "rotdet._kernels_cy",
                ["src/rotdet/_kernels_cy.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
