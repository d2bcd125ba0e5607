import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.optimize import minimize

from perfhom.capacity import _element_data

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def flux_energy(g, n, rho, R, zmag, nodes):
    """Independent check of the discrete radial minimum.

    Minimises sum_k w_k g(s_k) over slopes s >= 0 with sum_k h_k s_k = zmag
    by scipy's SLSQP, in variables scaled so the linear profile is all ones.
    Slow and poorly conditioned on wide annuli, so keep nodes small.
    """
    r, h, w = _element_data(n, rho, R, nodes)
    sc = h.sum() / zmag
    res = minimize(
        lambda t: float(np.sum(w * g(t / sc))),
        np.ones(len(h)),
        jac=lambda t: w * g.d1(t / sc) / sc,
        bounds=[(0, None)] * len(h),
        constraints=[{"type": "eq", "fun": lambda t: h @ t / h.sum() - 1, "jac": lambda t: h / h.sum()}],
        method="SLSQP",
        options={"ftol": 1e-16, "maxiter": 5000},
    )
    t = res.x.clip(0)
    t *= h.sum() / (h @ t)
    return float(np.sum(w * g(t / sc)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
