"""Time-harmonic viscoelastic forward modelling and shear modulus/viscosity reconstruction."""

from .fields import Grid, ScalarField, TensorField, VectorField
from .material import MaterialMap
from .pde import ForwardProblem, ForwardSolution, solve_adjoint, solve_forward, solve_poisson_vector

__version__ = "0.1.0"
