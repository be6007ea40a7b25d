"""Builds the optional Cython kernels; the package still installs without them."""
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, Cython missing, ...
            print(f"warning: compiled kernels not built ({exc}); using the Python fallback",
                  file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc})", file=sys.stderr)


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    exts = [
        Extension("deepvc._kernels._cfuzzy", ["src/deepvc/_kernels/_cfuzzy.pyx"],
                  include_dirs=[np.get_include()], extra_compile_args=["-O3"]),
        Extension("deepvc._kernels._clayout", ["src/deepvc/_kernels/_clayout.pyx"],
                  extra_compile_args=["-O3"]),
    ]
    try:
        return cythonize(exts, compiler_directives={"language_level": "3"})
    except Exception as exc:
        print(f"warning: cythonize failed ({exc}); using the Python fallback", file=sys.stderr)
        return []


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})
