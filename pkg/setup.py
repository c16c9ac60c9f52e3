"""Builds the optional compiled kernel core.

If Cython or a C toolchain is unavailable the package still installs; the
pure-Python kernel module is selected at import time instead.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "meshkit._kernels",
                ["src/meshkit/_kernels.pyx"],
                # -ffp-contract=off keeps the compiled kernels bit-identical
                # to the pure-Python fallback (no FMA contraction).
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
