"""Parallel rank-adaptive low-rank integrators for matrix ODEs.

Library layout:

* ``dlra.lowrank``      - factored matrices, augmentation, truncation.
* ``dlra.odesolve``     - explicit substep solvers.
* ``dlra.rhs``          - right-hand-side interface and synthetic problems.
* ``dlra.integrators``  - the adaptive steppers and the time loop.
* ``dlra.planesource``  - the slab-geometry transport benchmark.
* ``dlra.harness``      - run/compare/convergence drivers behind the CLI.
"""

from .lowrank import (
    AugmentedBasis,
    FactoredMatrix,
    TruncationResult,
    assemble_truncated,
    frobenius_distance,
    orthonormalize_augment,
    truncate_svd,
)
from .odesolve import NumericalBlowupError, OdeMethod, solve_matrix_ode
from .rhs import (
    RhsOperator,
    SylvesterProblem,
    TangentialProblem,
    consistency_check,
    dense_reference_solve,
)
from .integrators import (
    StepConfig,
    StepFailureError,
    StepResult,
    Trajectory,
    bug_step,
    check_rejection,
    compute_eta,
    integrate,
    parallel_serial_s11_step,
    parallel_step,
)
from .planesource import (
    PlanesourceProblem,
    ScalarFluxField,
    cfl_step_size,
    initial_condition,
    scalar_flux,
)

__version__ = "0.1.0"
