"""Build script for the optional compiled kernel core.

The package is pure Python plus one optional Cython extension holding the
hot numeric kernels (matmul, softmax, layer norm, GELU, Adam). When Cython
or a C compiler is unavailable the extension is skipped and the package
falls back to the numpy kernels at import time.

Build in place for development:

    python setup.py build_ext --inplace
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "energytl.kernels._core",
                ["src/energytl/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    print("Cython not available; building without the compiled kernel core")

setup(ext_modules=ext_modules)
