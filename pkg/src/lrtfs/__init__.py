"""Low-rank time-frequency synthesis.

Signals are modelled as ``x = Phi alpha + e`` over a tight Gabor frame, with
synthesis coefficients whose variances follow a low-rank nonnegative
factorization ``|alpha|^2 ~ WH``.
"""

from .errors import ParameterError, WavFormatError
from .gabor import (
    GaborDictionary,
    MatrixDictionary,
    analysis,
    build_tight_gabor,
    synthesis,
    spectral_norm_sq,
)
from .isnmf import NMFModel, init_svd, is_divergence, mm_update, run_nmf, wiener_masks
from .solver import (
    LRTFSSolution,
    SolverConfig,
    isa_solve,
    lambda_grid,
    objective_cjl,
    reconstruct_components,
    solve,
)
from .multilayer import LayerSpec, SLRConfig, SLRSolution, joint_isa_step, objective_cslr, solve_slr
from .compressive import (
    CSConfig,
    CSResult,
    MeasurementOperator,
    cs_l1,
    cs_lrtfs,
    cs_oracle,
    cs_sbl,
    sense,
    sweep,
)
from .signals import (
    SignalBuffer,
    SyntheticSpec,
    add_noise,
    output_snr_db,
    preset,
    read_wav,
    synthesize,
    write_wav,
)

__version__ = "0.1.0"
