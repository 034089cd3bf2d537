"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension: ``amgtheta._backend``
falls back to numpy/scipy twins of every kernel when the import fails.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    extensions = [
        Extension(
            "amgtheta._kernels",
            ["src/amgtheta/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    ext_modules = cythonize(extensions, language_level="3")

setup(ext_modules=ext_modules)
