"""Build the optional compiled integrator.

If Cython or a C compiler is missing the extension is skipped and the
package falls back to the pure-Python kernels at import time.
"""
from setuptools import setup, Extension

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "shilnikov._kernels",
                ["src/shilnikov/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
