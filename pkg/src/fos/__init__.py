"""Analysis of functions on surfaces: diffeomorphic registration of
geometry and function, principal component analysis of both variability
types, and their co-variation."""

from .covariation import (BartlettTest, CcaResult, bartlett_test, cca,
                          covariation_sequence, regression_coefficients)
from .demons import (DemonsConfig, DemonsResult, SurfaceProjector, VertexMap,
                     groupwise_template, register_functions, surface_gradient,
                     vertex_gradient)
from .fpca import (FunctionalFpca, GeometricFpca, consistent_mass,
                   cotangent_stiffness, cross_validate_lambda,
                   functional_fpca, geometric_fpca, reconstruction_error)
from .georeg import (Diagnostics, RegistrationConfig, pull_back_function,
                     reencode_deformation, register_geometry,
                     register_geometry_fcurrent)
from .kernels import GaussianKernel, default_deformation_kernel, scalar_gaussian
from .lddmm import (GeodesicPath, InitialMomenta, ShootingError,
                    deform_mesh, deformation_energy, flow_points,
                    flow_points_inverse, load_momenta, path_energies,
                    save_momenta, shoot, shoot_gradient)
from .mesh import (MeshError, ScalarField, TriangleMesh, load_field,
                   load_mesh, save_field, save_mesh)
from .pipeline import (ConfigError, PipelineConfig, emit_covariation,
                       emit_mode_visualization, run_pipeline)
from .similarity import (SimilarityResult, current_distance,
                         current_distance_points, fcurrent_distance,
                         landmark_distance)
from .synthdata import (SimDataset, SimModes, SimSpec, c_shape_images,
                        ellipsoid_patch, generate_dataset, hemisphere,
                        icosphere, make_modes, make_template, refine_mesh)
from .tangent_fem import (FemError, FemSystem, TangentField, TangentFrameAtlas,
                          apply_dirichlet, assemble_connection_matrices,
                          assemble_data_matrices, build_frames, build_system,
                          solve_update)

__version__ = "0.1.0"
