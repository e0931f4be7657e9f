"""Distribution-free outlier bounds with estimated mean and covariance.

The central result bounds, for N i.i.d. samples in n dimensions, the
probability that one more sample lies at squared Mahalanobis distance at
least lambda^2 from the sample mean (unbiased sample covariance):

    min{1, floor(n (N+1) (N^2 - 1 + N lambda^2) / (N^2 lambda^2)) / (N+1)}
"""

from .bounds import (
    BoundQuery,
    BoundValue,
    Formula,
    asymptotic_bound,
    classical_bound,
    counting_bound,
    empirical_bound,
    invert_bound,
    k_to_lambda,
    lambda_to_k,
    min_sample_size,
    safe_lambda_sq,
    saw_bound,
    simplified_bound,
    threshold_sq,
)
from .detector import DetectorConfig, OutlierVerdict, UpdatePolicy, detect_stream, explain_verdict
from .errors import *  # noqa: F401,F403
from .geometry import (
    CertificateReport,
    ConfidenceEllipsoid,
    cholesky,
    confidence_ellipsoid,
    mahalanobis_sq,
    theoretical_certificate,
    whiten,
)
from .stats import SampleStats, two_pass_covariance

__version__ = "0.1.0"
