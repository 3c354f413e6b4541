"""Build script.

The compiled extension is optional: if Cython or a C compiler is
unavailable the package installs anyway and falls back to the pure
numpy kernels at import time.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "pedroute._core",
                sources=["src/pedroute/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # noqa: BLE001 - any build-chain problem means "no extension"
    import sys

    print(f"pedroute: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
