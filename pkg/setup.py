import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

# name/packages repeated here so legacy `setup.py develop` installs
# (pre-PEP-621 setuptools) resolve the src layout correctly
setup(
    name="ctoqw",
    version="0.1.0",
    packages=["ctoqw"],
    package_dir={"": "src"},
    install_requires=["numpy>=1.24", "scipy>=1.10"],
    entry_points={"console_scripts": ["ctoqw = ctoqw.cli:main"]},
    ext_modules=cythonize(
        [
            Extension(
                "ctoqw._pathkernel",
                ["src/ctoqw/_pathkernel.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    ),
)
