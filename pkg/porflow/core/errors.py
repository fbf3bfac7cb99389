"""Exception hierarchy for porflow.

Every concrete error also derives from a builtin (``ValueError`` or
``RuntimeError``) so callers that only catch builtins keep working.
"""

from typing import Any


class PorflowError(Exception):
    """Base class for all porflow errors."""


class ConfigError(PorflowError, ValueError):
    """Run configuration is missing, malformed or inconsistent."""


class MeshError(PorflowError, ValueError):
    """Base class for mesh problems."""


class MeshParseError(MeshError):
    """Mesh file does not follow the declared format."""


class MeshTopologyError(MeshError):
    """Mesh is not a conforming simplicial manifold."""


class DegenerateElementError(MeshError):
    """An element has zero (or numerically zero) volume."""

    def __init__(self, element: int, volume: float) -> None:
        super().__init__(f"Element {element} is degenerate (volume {volume:.3e})")
        self.element = element
        self.volume = volume


class ModelError(PorflowError, ValueError):
    """Base class for constitutive-model problems."""


class SaturationDomainError(ModelError):
    """Saturation argument outside [0, 1] beyond the allowed slack."""


class CapillaryRangeError(ModelError):
    """Capillary pressure outside range(p_c) beyond the clamping slack."""


class ModelAssumptionError(ModelError):
    """A structural assumption on the coefficients (mobility floor, bounds...) fails."""


class PermeabilityError(PorflowError, ValueError):
    """Permeability tensor is not symmetric positive definite on some element."""

    def __init__(self, element: int, reason: str) -> None:
        super().__init__(f"Permeability on element {element} is invalid: {reason}")
        self.element = element


class TimeGridError(PorflowError, ValueError):
    """Final time is not an integer multiple of the timestep."""


class SolverError(PorflowError, RuntimeError):
    """Base class for nonlinear/linear solver failures."""


class LinearSolveError(SolverError):
    """Newton linear system could not be solved."""

    def __init__(self, iterate: int, reason: str) -> None:
        super().__init__(f"Linear solve failed at Newton iterate {iterate}: {reason}")
        self.iterate = iterate


class NonConvergenceError(SolverError):
    """Newton did not converge after all timestep-halving fallbacks."""

    def __init__(self, message: str, step: int | None = None, **diagnostics: Any) -> None:
        prefix = f"Step {step}: " if step is not None else ""
        super().__init__(prefix + message)
        self.step = step
        self.diagnostics = diagnostics
