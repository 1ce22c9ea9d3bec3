"""Linearizers: invertible maps around a matrix, f(x) = g_y^-1(A g_x(x))."""
from .autograd import NumericError, ShapeError, Tensor, no_grad
from .cores import (BinaryDiagonalCore, DenseCore, DiagonalCore, HyperCore, LowRankCore,
                    interpolate_cores)
from .induced import InducedSpace, axiom_suite
from .maps import (ActNorm, AdditiveCoupling, AffineCoupling, AnalyticBijection, Composition,
                   HouseholderMixing, coupling_stack, identity_map)
from .operators import (ContractError, Linearizer, compose, idempotency_residual, penrose_residuals,
                        pinv, power, svd, transpose)

__version__ = "0.1.0"
