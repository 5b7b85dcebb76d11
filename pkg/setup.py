"""Build the optional compiled kernels; the package works without them."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("CMREG_NO_EXT", "") in ("", "0"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("cmreg._ckernels", ["src/cmreg/_ckernels.pyx"],
                       include_dirs=[numpy.get_include()],
                       extra_compile_args=["-O3", "-ffp-contract=off"])],
            compiler_directives={"language_level": "3", "boundscheck": False,
                                 "wraparound": False, "cdivision": True},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
