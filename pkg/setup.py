import os

from setuptools import Extension, setup

# The compiled kernel is optional: without Cython the package falls back to
# selfwatch._vmcore_py at import time.
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "selfwatch._vmcore",
                [os.path.join("src", "selfwatch", "_vmcore.pyx")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
