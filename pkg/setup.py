from setuptools import Extension, setup

from Cython.Build import cythonize

extensions = [
    Extension(
        "advsim._kernels",
        ["src/advsim/_kernels.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(extensions, language_level=3),
    zip_safe=False,
)
