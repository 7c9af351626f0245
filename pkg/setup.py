import numpy as np
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "roadex._dirscan",
                ["src/roadex/_dirscan.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

# The extension is an accelerator only: roadex.labels falls back to the
# pure-Python scan when roadex._dirscan is absent.
setup(ext_modules=ext_modules)
