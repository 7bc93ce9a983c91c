import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("AIRFLUX_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "airflux._kernels",
                    ["src/airflux/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no -ffast-math: kernels must round exactly like numpy
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
