"""amgtheta: algebraic multigrid with a learned strong-connection threshold.

Subpackages by layer:

- :mod:`amgtheta.sparse` -- CSR matrices and kernels (compiled or numpy/scipy
  backend, see :func:`amgtheta.backend_name`).
- :mod:`amgtheta.io_mm` -- Matrix Market reading and writing.
- :mod:`amgtheta.problems` -- model PDE discretizations.
- :mod:`amgtheta.amg` -- strength graph, C/F splitting, interpolation,
  V-cycle solver.
- :mod:`amgtheta.gpr` -- Gaussian process regression over composite kernels.
- :mod:`amgtheta.metrics` -- regression quality metrics.
- :mod:`amgtheta.pipeline` -- threshold sweeps, dataset building, and the
  end-to-end experiment.
- :mod:`amgtheta.cli` -- command-line entry point.
"""

from amgtheta._backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
