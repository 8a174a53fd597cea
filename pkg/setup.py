import os

import numpy as np
from setuptools import Extension, setup

# FEDEL_NO_EXT=1 skips the compiled selector kernel; the package then runs on
# the pure-Python fallback.
ext_modules = []
if not os.environ.get("FEDEL_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "fedel._dp",
                [os.path.join("src", "fedel", "_dp.pyx")],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
