"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a vectorized NumPy fallback is
selected at import time), so any failure here is downgraded to a warning
rather than aborting the install.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext = Extension(
        "perfhom._kernels",
        ["src/perfhom/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pragma: no cover - depends on toolchain
    import warnings

    warnings.warn(f"Cython kernel extension not built ({exc}); using pure-Python kernels")

setup(ext_modules=ext_modules)
