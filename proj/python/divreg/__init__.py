"""Incompressible diffeomorphic registration with divergence-conforming B-spline velocity fields."""

from ._divreg import *  # noqa: F401,F403

__version__ = "0.1.0"


def constraint_matrix(system):
    """The constraint matrix as a scipy.sparse CSR matrix."""
    from scipy.sparse import csr_matrix

    data, indices, indptr, shape = system.csr()
    return csr_matrix((data, indices, indptr), shape=shape)
