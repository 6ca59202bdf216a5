"""FEM approximation of semilinear parabolic SPDEs with interpolated grid noise."""

from . import backend
from .errors import (ConfigurationError, KernelNotPsdError, LocationError,
                     NotEmbeddableError, NumericError)
from .geometry import (Mesh, UniformGrid, dodecagon_hierarchy, dodecagon_mesh,
                       locate, refine, unit_square_grid)
from .kernels import (CustomStationaryKernel, KernelMetadata, KernelSpec,
                      RatePrediction, bessel_k, eval_lag, kernel_eval, metadata,
                      predict_rates)
from .noise import (CirculantSpectrum, NoiseStream, SubsampledStream,
                    build_spectrum, dense_sampler, subsample)
from .fem import (DofMap, EllipticCoefficients, FemField, GridToMeshTransfer,
                  SparseSpd, assemble_mass, assemble_stiffness,
                  hs_norm_interpolated, l2_norm, l2_project, load_advection,
                  load_semilinear, make_dofmap, prolong,
                  scaled_laplacian_plus_identity, solve_spd, transfer_noise)
from .stepper import AssembledSpde, SpdeProblem, StepperState
from .sobolev import (SeminormEstimate, interpolation_rate_study, lp_norm,
                      slobodeckij_seminorm_mc, w1p_seminorm)
from .harness import (ErrorReport, ExperimentConfig, emit_csv, fit_rate,
                      parse_csv, preset, run_convergence_study)

__version__ = "0.1.0"
