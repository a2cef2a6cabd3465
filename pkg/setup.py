"""Builds the optional compiled slot loop; the package works without it."""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # no compiler or no Cython
            print(f"warning: compiled kernel not built ({exc}); using fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc}); using fallback")


def extensions():
    if os.environ.get("QAMIMO_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    # no fast-math: the compiled loop must match the fallback bit for bit
    ext = Extension("qamimo._kernels", ["src/qamimo/_kernels.pyx"],
                    extra_compile_args=["-O3", "-ffp-contract=off"])
    return cythonize([ext], language_level=3, quiet=True)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
