import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

compile_args = ["-O3", "-fopenmp-simd", "-fno-math-errno", "-fno-trapping-math"]
if not os.environ.get("FFORMATION_PORTABLE"):
    compile_args += ["-march=native", "-mprefer-vector-width=512"]

ext = Extension(
    "fformation.neuralnet._kernels",
    ["src/fformation/neuralnet/_kernels.pyx"],
    depends=["src/fformation/neuralnet/lstm_core.h", "src/fformation/neuralnet/lstm_core_impl.h"],
    include_dirs=[numpy.get_include(), "src/fformation/neuralnet"],
    extra_compile_args=compile_args,
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

# A missing compiler or Cython leaves the pure NumPy backend in charge.
if cythonize is None or os.environ.get("FFORMATION_NO_EXT"):
    setup()
else:
    setup(ext_modules=cythonize([ext], language_level="3"), )
