"""Reconstruction of spectrally sparse signals by low-rank Hankel completion.

The package provides matrix-free Hankel operators (FFT based), rank-r
tangent-space algebra, the IHT and FIHT solvers with their initializations,
multi-level Hankel lifts for d-dimensional arrays, and an experiment harness.
"""

from .errors import (
    DegenerateSignalError,
    DivergenceError,
    GenerationError,
    HankelRecError,
    MemoryBudgetError,
    OracleScaleError,
    PartialSVDError,
    UndefinedResidualError,
)
from .hankel import (
    HankelShape,
    adjoint_rank_one,
    apply_pseudo_inverse,
    hankel_adjoint_dense,
    hankel_dense,
    hankel_matvec,
    hankel_matvec_adjoint,
    make_shape,
    project_samples,
    sample_counts,
)
from .lowrank import (
    LowRankFactor,
    TangentCoeffs,
    dense_hard_threshold,
    partial_svd_hankel,
    project_tangent_dense,
    retract_rank_r,
    tangent_coeffs,
)
from .ndhankel import (
    NdHankelShape,
    NdMode,
    NdSignal,
    generate_nd_signal,
    make_nd_shape,
    nd_adjoint_rank_one,
    nd_fiht_solve,
    nd_hankel_dense,
    nd_hankel_matvec,
    nd_hankel_matvec_adjoint,
    nd_vandermonde_factors,
)
from .solvers import (
    IterRecord,
    SolverConfig,
    SolveResult,
    fiht_solve,
    iht_solve,
    init_one_step,
    init_resampled,
    observed_residual,
    trim,
)
from .spectral import (
    Mode,
    SampleSet,
    SignalGenConfig,
    SpectralSignal,
    generate_signal,
    incoherence_estimate,
    default_amplitudes,
    sample_indices,
    vandermonde_factors,
)

__version__ = "0.1.0"
