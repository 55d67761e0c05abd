"""Exception hierarchy shared across the package."""


class SzegolabError(Exception):
    """Base class for all package errors."""


class ConfigError(SzegolabError):
    """Invalid parameters, config files or preconditions."""


class ModelError(SzegolabError):
    """Invalid ensemble / box / symmetry combinations."""


class NumericError(SzegolabError):
    """Numerical failure (eigensolver breakdown, singular fit, ...)."""


class DegenerateFitError(NumericError):
    """All sampled values below the numerical floor; no fit possible."""


class QuadratureError(NumericError):
    """Quadrature grid too coarse for the requested tolerance."""
