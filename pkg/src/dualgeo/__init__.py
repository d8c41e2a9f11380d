"""Coordinate engine for algebroid geometry over dual vector bundles, with sampled-point certification."""
from .algebroid import AlgebroidSpec, Section, bracket_sections, check_algebroid, theta
from .connection import (
    ChartTransition,
    DistinguishedLinearConnection,
    DTensor,
    NonlinearConnection,
    adapted_frame,
    berwald,
    check_dlc_law,
    check_nlc_law,
    dual_adapted,
    h_cov_deriv,
    v_cov_deriv,
)
from .hamilton import (
    HamiltonFunction,
    TorsionPrescription,
    check_homogeneity,
    check_regularity,
    hessian_metric,
    levi_civita_normal,
    torsion_family,
    torsion_recover,
)
from .jets import Expr, ExprArray, Jet, Point, eval_jet, parse_expr
from .metric import (
    DeformationTensors,
    PseudoMetric,
    check_compatibility,
    classify,
    invert_metric,
    metrizable_berwald,
    metrizable_deformation,
    metrizable_family,
    metrizable_from,
    obata,
)
from .report import CheckReport
from .tangent import TangentSection, anchor_image, bracket_tangent, project_pi_bang

__version__ = "0.1.0"
