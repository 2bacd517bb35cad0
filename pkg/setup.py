import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "histvae._kernels._cext",
        ["src/histvae/_kernels/_cext.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        optional=True,  # the numpy backend keeps the package usable without it
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
