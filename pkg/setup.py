"""Build script: compiles the optional binary-matmul extension.

The extension is marked optional; if no compiler (or Cython) is
available the install still succeeds and the package falls back to the
pure-numpy kernels at import time.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "spikeformer.kernels._binmat",
                ["src/spikeformer/kernels/_binmat.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ]
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
