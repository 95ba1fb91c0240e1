"""fODF reconstruction from scattered light imaging patterns on the HEALPix sphere."""

from . import config, io  # noqa: F401
from .baseline import (  # noqa: F401
    Peak,
    PeakSet,
    pick_peaks,
    polar_line_profile,
    slix_directions,
    slix_fodf,
)
from .errors import *  # noqa: F403
from .estimation import (  # noqa: F401
    LossBreakdown,
    LossWeights,
    SolveOptions,
    SolveResult,
    loss_gradient,
    nonnegativity_loss,
    pcc,
    reconstruction_loss,
    solve_direct,
    sparsity_loss,
    total_loss,
)
from .forward_model import (  # noqa: F401
    FODF,
    EllipsoidKernelParams,
    FibreKernel,
    FibreOrientation,
    KernelBank,
    build_kernel_bank,
    fibre_kernel,
    mixture_directions,
    quadric_value,
    reconstruct,
)
from .harmonics import (  # noqa: F401
    SHBasis,
    SHCoeffs,
    SHSmoother,
    SphericalSignal,
    basis_matrix,
    evaluate,
    fit_coeffs,
)
from .healpix import (  # noqa: F401
    CapMask,
    GridResolution,
    HealpixGrid,
    ang2pix,
    build_grid,
    cap_mask,
    children,
    neighbors,
    parent,
    pix2ang,
)
from .metrics import acc, equivariance_defect, extract_fodf_peaks, jsd  # noqa: F401
from .network import (  # noqa: F401
    ChebConv,
    NetParams,
    SphereGraph,
    SphericalUNet,
    TrainConfig,
    build_graph,
    cheb_conv,
    forward,
    pool,
    predict,
    predict_stack,
    train,
    unpool,
)
from .projection import (  # noqa: F401
    MicroscopeGeometry,
    PatternCentroid,
    ScatteringPattern,
    find_centroid,
    inverse_gnomonic,
    project_to_sphere,
)
from .synthetic import (  # noqa: F401
    SynthConfig,
    SyntheticSpec,
    generate_synthetic,
    groundtruth_fodf,
)

__version__ = "0.1.0"
