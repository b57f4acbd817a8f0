"""Error classes, grouped by the exit code the command line maps them to."""

from __future__ import annotations

import numpy as np


class FixAngleError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class ConfigError(FixAngleError, ValueError):
    """Invalid user configuration or invalid call parameters.

    Parameters
    ----------
    message : str
        Human readable description.
    path : str, optional
        Dotted path of the offending configuration field.
    """

    exit_code = 1

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CertificateError(FixAngleError):
    """A geometric or weight certificate did not pass."""

    exit_code = 2

    def __init__(self, message: str, certificate=None):
        self.certificate = certificate
        super().__init__(message)


class NumericalError(FixAngleError, RuntimeError):
    """Failure inside a numerical stage."""

    exit_code = 3

    def __init__(self, message: str, stage: str | None = None):
        self.stage = stage
        super().__init__(f"[{stage}] {message}" if stage else message)


class DegenerateMetricError(NumericalError):
    """The metric is not positive definite at some sample point."""

    def __init__(self, point, min_eigenvalue: float):
        self.point = np.asarray(point, dtype=float)
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"metric not positive definite at x={self.point.tolist()} "
            f"(min eigenvalue {self.min_eigenvalue:.3e})",
            stage="geometry",
        )


class IntegratorError(NumericalError):
    """Geodesic integration drifted off the unit-speed constraint."""

    def __init__(self, drift: float, ds: float):
        self.drift = float(drift)
        super().__init__(
            f"speed drift {drift:.2e} exceeds 1e-6 at ds={ds:g}; use a smaller ds",
            stage="eikonal",
        )


class CausticError(CertificateError):
    """The geodesic parametrization degenerates (Jacobian below threshold)."""

    def __init__(self, launch: float, t: float, jacobian: float, certificate=None):
        self.launch = float(launch)
        self.t = float(t)
        self.jacobian = float(jacobian)
        super().__init__(
            f"caustic: Jacobian {jacobian:.3e} at launch x'={launch:.6f}, t={t:.6f}",
            certificate,
        )


class ChartInversionError(NumericalError):
    """Newton inversion of the geodesic chart did not converge."""

    def __init__(self, point, residual: float):
        self.point = np.asarray(point, dtype=float)
        super().__init__(
            f"chart inversion failed at x={self.point.tolist()} (residual {residual:.2e})",
            stage="eikonal",
        )


class InstabilityError(NumericalError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, step: int, t: float):
        super().__init__(f"non-finite field at step {step} (t={t:.4f})", stage="wavesolver")


class QuadratureError(NumericalError):
    """Adaptive quadrature did not converge."""

    def __init__(self, point, message: str):
        self.point = np.asarray(point, dtype=float)
        super().__init__(f"quadrature failed at x={self.point.tolist()}: {message}", stage="carleman")
