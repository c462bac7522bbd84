"""Small-maturity asymptotics for local-stochastic volatility models.

Library layout:

* :mod:`lsvsmile.model` - coefficient families, model construction, gauge
  quantities, assumption audits
* :mod:`lsvsmile.geometry` - metric, curvature, geodesics, Jacobi prefactor
* :mod:`lsvsmile.heatkernel` - drift work term, kernel factors, McKean kernel
* :mod:`lsvsmile.asymptotics` - call-price asymptote and two-term smile
* :mod:`lsvsmile.pricing` - Black-Scholes and Monte Carlo oracle
* :mod:`lsvsmile.cli` - the ``lsv-smile`` command line front end
"""

from .asymptotics import (
    CallAsymptote,
    SmilePoint,
    bs_timedep_asymptote,
    call_asymptote,
    otm_put_leading,
    put_smile_smalltime,
    sabr_smile_reference,
    smile_curve,
    smile_point,
)
from .exceptions import GeodesicError, LsvError, ModelConfigError, NumericalError
from .geometry import (
    LineGeodesic,
    MetricPoint,
    SabrReference,
    distance_point,
    gauss_curvature,
    jacobi_u0,
    metric_tensor,
    phi_second,
    sabr_reference,
    solve_line_geodesic,
    tail_distance_estimate,
)
from .heatkernel import (
    KernelFactors,
    bellaiche_density,
    kernel_factors,
    mckean_kernel,
    vvm_determinant,
    work_term_A,
)
from .model import (
    AuditGrid,
    AuditReport,
    ModelSpec,
    audit_assumptions,
    build_model,
    gauge_chi,
    gauge_potential,
    load_model,
    parse_model_config,
)
from .pricing import MCConfig, MCEstimate, bs_price, implied_vol, mc_price, mc_smile

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AuditGrid", "AuditReport", "ModelSpec", "audit_assumptions", "build_model",
    "gauge_chi", "gauge_potential", "load_model", "parse_model_config",
    "LineGeodesic", "MetricPoint", "SabrReference", "distance_point",
    "gauss_curvature", "jacobi_u0", "metric_tensor", "phi_second",
    "sabr_reference", "solve_line_geodesic", "tail_distance_estimate",
    "KernelFactors", "bellaiche_density", "kernel_factors", "mckean_kernel",
    "vvm_determinant", "work_term_A",
    "CallAsymptote", "SmilePoint", "bs_timedep_asymptote", "call_asymptote",
    "otm_put_leading", "put_smile_smalltime", "sabr_smile_reference",
    "smile_curve", "smile_point",
    "MCConfig", "MCEstimate", "bs_price", "implied_vol", "mc_price", "mc_smile",
    "LsvError", "ModelConfigError", "GeodesicError", "NumericalError",
]
