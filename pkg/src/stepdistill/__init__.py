"""Few-step diffusion students distilled from a multi-step teacher with
policy-gradient reinforcement learning, on low-dimensional toy data."""

__version__ = "0.1.0"

from .errors import DivergenceError, DomainError, ValidationError  # noqa: E402
