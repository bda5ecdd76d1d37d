"""Build the optional compiled walk kernel.

The package works without it: ``gffloops.walk`` falls back to a vectorized
numpy implementation when the extension is missing.
"""

import os

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:  # pragma: no cover - build without the compiled core
    pass
else:
    random_lib = os.path.join(np.get_include(), "..", "..", "random", "lib")
    extensions = [
        Extension(
            "gffloops._walk",
            ["src/gffloops/_walk.pyx"],
            include_dirs=[np.get_include()],
            library_dirs=[os.path.abspath(random_lib)],
            libraries=["npyrandom"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
