"""Carnot groups, homogeneous metrics, lp-sums and Pansu-type differentiation at desk scale."""

__version__ = "0.1.0"

from .carnot_group import (  # noqa: E402
    CarnotGroup,
    GroupElement,
    commutator,
    dilate,
    euclidean,
    free_carnot,
    heisenberg,
    in_first_layer,
    inverse,
    lcs_member,
    multiply,
    power,
    sigma,
)
from .errors import (  # noqa: E402
    BoundsError,
    CarnotLabError,
    ConfigError,
    DomainError,
    IncompatibleError,
    UnsupportedError,
)
from .free_lie import AlgebraVector, HallBasis, bch, bracket, hall_basis  # noqa: E402
from .homogeneous_metric import HomogeneousNorm, distance, norm  # noqa: E402
