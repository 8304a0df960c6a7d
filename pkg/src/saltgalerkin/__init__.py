"""Spectral Galerkin simulation of SALT Navier-Stokes on the periodic torus."""

__version__ = "0.1.0"

from .spectral import (  # noqa: E402
    VELOCITY_LADDER,
    VORTICITY_LADDER,
    AliasingError,
    ModeSet,
    SobolevLadder,
    SpectralField,
    curl,
    dual_pairing,
    from_grid,
    grid_transform,
    leray_project,
    sobolev_inner,
    sobolev_norm,
    stokes_apply,
)
from .operators import (  # noqa: E402
    Form,
    NoiseSquare,
    OperatorBundle,
    advect,
    biot_savart,
    drift,
    ito_drift_correction,
    lie_bracket,
    stretch,
    transport_noise,
)
from .noise import BrownianPath, NoiseModel, XiKind, build_xi_family, sample_increments  # noqa: E402
from .galerkin import (  # noqa: E402
    Cause,
    EigenBasis,
    Ensemble,
    GalerkinConfig,
    ItoCorrection,
    Scheme,
    TrajectoryRecord,
    auto_R,
    cutoff_fR,
    galerkin_system,
    project,
    run,
    step,
)
