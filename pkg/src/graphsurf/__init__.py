"""Graph hypersurfaces over fixed bases and empirical inequality constants."""
from .calculus import (
    TensorField,
    codazzi_residual,
    covariant_derivative,
    hessian_and_laplacian,
    integrate_dmu,
    iterated_covariant_derivative,
    laplacian,
    rough_laplacian,
    simons_residual,
)
from .errors import GraphSurfError
from .estimators import (
    ConstantEstimate,
    Inequality,
    cz_curvature_ratio,
    cz_function_ratio,
    estimate_cz_function_constant,
    estimate_gn_constant,
    estimate_morrey_constant,
    estimate_poincare_constant,
    estimate_sobolev_constant,
    gn_exponent,
    higher_cz_ratio,
    schauder_curvature_ratio,
    verify_gn_inequality,
)
from .family import FamilySpec, FamilySweepRecord, family_sweep, sample_height_field
from .geometry import (
    BaseKind,
    BaseManifold,
    GeometryBundle,
    HeightField,
    JacobianData,
    build_geometry,
    christoffel,
    embedded_graph_geometry,
    flat_graph_geometry,
    graph_map_jacobian,
    riemann_from_b,
    tubular_projection,
)
from .norms import gagliardo_seminorm, holder_norm, lp_norm, wkp_norm

__version__ = "0.1.0"
