"""Build script for the optional compiled kernel extension.

The package works without the extension (pure-numpy fallback selected at
import time); building it just makes the planner's hot loops faster.
Set TRAFFICWEAVE_NO_EXT=1 to skip compilation entirely.
"""

import os

import numpy as np
from setuptools import setup

ext_modules = []
if not os.environ.get("TRAFFICWEAVE_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/trafficweave/kernels/_ckernels.pyx"],
        language_level="3",
        compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True},
    )

setup(
    ext_modules=ext_modules,
    include_dirs=[np.get_include()],
)
