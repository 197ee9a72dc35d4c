"""Build script for the optional compiled kernels.

The package is pure Python by default.  If Cython and a C compiler are
available, ``prognote.kernels._fast`` is built and picked up at import
time; otherwise the numpy fallback in ``prognote.kernels.pure`` is used.
A failed extension build is downgraded to a warning so that
``pip install`` never fails on machines without a toolchain.
"""

import warnings

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """build_ext that warns instead of failing when compilation breaks."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, broken headers, ...
            warnings.warn(
                "could not build the compiled kernels (%s); "
                "falling back to the pure numpy implementation" % exc
            )

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(
                "could not compile %s (%s); the numpy fallback will be used"
                % (ext.name, exc)
            )


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        warnings.warn("Cython not installed; skipping the compiled kernels")
        return []
    from setuptools import Extension

    ext = Extension(
        "prognote.kernels._fast",
        sources=["src/prognote/kernels/_fast.pyx"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
