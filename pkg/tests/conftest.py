"""Shared fixtures and brute-force oracles for the test suite.

The oracles here deliberately use the most transparent formulation
available (explicit inverses, dense log-determinants, naive sums) so
that agreement with the library is evidence, not circularity.
"""

from __future__ import annotations

import numpy as np
import pytest

from mwgp.covariance import CovParams, SpaceTimePoint, cov_matrix, cross_cov_vector
from mwgp.gaussian import YearBlock

# Canonical parameter set used across modules when the exact values
# are immaterial; chosen so no two scales coincide.
PARAMS = CovParams(phi=1.3, theta_lat=2.0, theta_lon=4.0, theta_t=7.0,
                   sigma2=0.4)


def random_block(rng, m, year=0, lat_span=6.0, lon_span=6.0, t_span=40.0,
                 value_scale=1.0, source_ids=None):
    """A YearBlock with uniform scatter; values are iid noise."""
    return YearBlock(
        year,
        rng.uniform(-lat_span, lat_span, m),
        rng.uniform(-lon_span, lon_span, m),
        rng.uniform(0.0, t_span, m),
        value_scale * rng.standard_normal(m),
        source_ids,
    )


def dense_mvn_loglik(y, cov):
    """Multivariate-normal log-density at zero mean by explicit inverse.

    Deliberately the naive formula (inverse + determinant), nothing
    shared with the library implementation.
    """
    y = np.asarray(y, dtype=float)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    quad = y @ np.linalg.inv(cov) @ y
    return -0.5 * (logdet + quad + y.size * np.log(2.0 * np.pi))


def explicit_conditional(target: SpaceTimePoint, block: YearBlock,
                         params: CovParams, spatial=False):
    """Conditional-Gaussian mean/variance for y* by explicit inverse."""
    K = cov_matrix(block.points, params, spatial)
    A = K + params.sigma2 * np.eye(block.m)
    k = cross_cov_vector(target, block.points, params, spatial)
    A_inv = np.linalg.inv(A)
    mean = k @ A_inv @ block.values
    var = params.phi + params.sigma2 - k @ A_inv @ k
    return float(mean), float(var)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
