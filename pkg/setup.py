import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DECODER_BCD_NO_EXT", "0") in ("", "0"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "decoder_bcd._rollout_ext",
                sources=["src/decoder_bcd/_rollout_ext.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
