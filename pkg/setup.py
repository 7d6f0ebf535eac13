"""Build script for the optional compiled convolution kernels.

The package is pure Python plus one Cython extension holding the conv
forward/backward inner loops. If the extension cannot be built (no
compiler, no Cython), installation still succeeds and the numpy
fallback kernels are used at import time.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """build_ext that degrades to a pure-Python install on failure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, broken toolchain
            warnings.warn(f"compiled kernels skipped: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernels skipped ({ext.name}): {exc}")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        warnings.warn(f"compiled kernels skipped: {exc}")
        return []
    ext = Extension(
        "shrinkexpand.engine._convcore",
        ["src/shrinkexpand/engine/_convcore.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
