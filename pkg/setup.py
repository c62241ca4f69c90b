"""Build hook for the optional compiled kernel core.

The package is pure Python by default; when Cython is available at build
time the pixel kernels are compiled (`dtr1._kernels._masks_c`) and picked
up automatically at import. Without Cython the numpy fallback is used.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "dtr1._kernels._masks_c",
                ["src/dtr1/_kernels/_masks_c.pyx"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
