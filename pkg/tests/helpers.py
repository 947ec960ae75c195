"""Shared model builders for the test suite."""

import numpy as np

from cpsrecover.models import SubsystemModel


def scalar_lti_model(a=1.0, b=1.0, c=1.0, q=0.0, r=0.0, dt=1.0, x0=0.0,
                     p0=1.0, model_id="lti"):
    """x_{k+1} = a x + b u, y = c x; handy scalar test system."""
    A = np.array([[a]])
    C = np.array([[c]])
    return SubsystemModel(
        id=model_id, n_x=1, n_y=1, n_u=1,
        f=lambda x, u: A @ x + np.array([b]) * u[0],
        g=lambda x, u: C @ x,
        jac_A=lambda x, u: A, jac_C=lambda x, u: C,
        Q=np.array([[q]]), R=np.array([[r]]), dt=dt,
        mu0=np.array([x0]), Sigma0=np.array([[p0]]))


def random_lti_model(rng, n=None, dt=1.0):
    """Random LTI system with identity measurement; returns (model, A, B)."""
    n = n if n is not None else int(rng.integers(1, 6))
    m = int(rng.integers(1, n + 1))
    A = rng.uniform(-1, 1, (n, n))
    B = rng.uniform(-1, 1, (n, m))
    C = np.eye(n)
    model = SubsystemModel(
        id="rand-lti", n_x=n, n_y=n, n_u=m,
        f=lambda x, u: A @ x + B @ u,
        g=lambda x, u: C @ x,
        jac_A=lambda x, u: A, jac_C=lambda x, u: C,
        Q=np.zeros((n, n)), R=np.zeros((n, n)), dt=dt)
    return model, A, B
