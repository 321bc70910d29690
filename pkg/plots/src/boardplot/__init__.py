"""boardplot: renders boardsim CSV outputs into figures."""

__version__ = "0.1.0"
