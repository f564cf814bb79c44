"""Build the optional Cython kernel extension.

If Cython or a C compiler is missing the package still installs and
``msif.kernels`` falls back to the numpy implementations.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("MSIF_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("msif._ckernels", ["src/msif/_ckernels.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
