"""Build script for the optional compiled kernel extension.

The package works without it: yieldnet.tensor.backend falls back to the
numpy kernels when the extension is missing, so a failed compile only
costs speed, never correctness.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "yieldnet.tensor._convkern",
                ["src/yieldnet/tensor/_convkern.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
    for ext in ext_modules:
        ext.optional = True
except ImportError:
    pass

setup(ext_modules=ext_modules)
