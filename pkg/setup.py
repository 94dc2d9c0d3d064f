import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# The compiled kernels are optional: if the build fails the package installs
# anyway and falls back to the pure-Python implementations at import time.
extensions = [
    Extension(
        "loamkit.kernels._native",
        ["src/loamkit/kernels/_native.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # fp-contract off: distances must round exactly like numpy's
        # mul-then-add so ties break identically in both kernel backends
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
)
