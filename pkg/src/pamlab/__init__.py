"""pamlab: numerical laboratory for the parabolic Anderson model with |x-y|^-2 spatial covariance."""

__version__ = "0.1.0"
