import os

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    USE_CYTHON = os.environ.get("GVGROUND_NO_EXT", "") in ("", "0")
except ImportError:
    USE_CYTHON = False

ext_modules = []
if USE_CYTHON:
    ext_modules = cythonize(
        [
            Extension(
                "gvground._ckernels",
                sources=["src/gvground/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # keep a*b+c unfused so results track the numpy fallback
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
