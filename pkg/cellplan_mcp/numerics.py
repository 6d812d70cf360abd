"""Special functions, quadrature rules and the nonlinear solver.

Elliptic parameters follow scipy.special: ``m`` is the parameter (k**2), not
the modulus. A strip of length ``R`` maps onto the rectangle
``[0, 1] x [0, m_Q]`` with ``m = exp(-2*pi*R)`` and ``m_Q = K(1 - m) / (2*K(m))``.
"""

import functools
import logging
from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np
from scipy import integrate, special

from cellplan_mcp.errors import ConvergenceError, DomainError

logger = logging.getLogger("CellPlanMCP")

ComplexPoint = complex
ArrayLike = Union[float, complex, np.ndarray]

ELLIPTIC_CONVENTION = "m = exp(-2*pi*strip_length); module = K(1-m) / (2*K(m))"


def _check_parameter(m: float, allow_zero: bool = True) -> float:
    m = float(m)
    if not np.isfinite(m) or m >= 1.0 or m < 0.0 or (m == 0.0 and not allow_zero):
        raise DomainError(f"Elliptic parameter must lie in [0, 1), got {m}")
    return m


def incomplete_elliptic_f(phi: float, m: float, method: str = "agm") -> float:
    """Incomplete elliptic integral of the first kind F(phi | m).

    ``method="agm"`` uses the Carlson/AGM evaluation in scipy; ``"quad"`` integrates
    the defining integrand adaptively and serves as an independent oracle.
    """
    m = _check_parameter(m)
    phi = float(phi)
    if not np.isfinite(phi) or not 0.0 <= phi <= 0.5 * np.pi + 1e-15:
        raise DomainError(f"Amplitude must lie in [0, pi/2], got {phi}")
    if method == "agm":
        return float(special.ellipkinc(phi, m))
    if method == "quad":
        value, _ = integrate.quad(
            lambda t: 1.0 / np.sqrt(1.0 - m * np.sin(t) ** 2),
            0.0,
            phi,
            epsabs=1e-14,
            epsrel=1e-13,
            limit=400,
        )
        return float(value)
    raise DomainError(f"Unknown elliptic integral method '{method}'")


def complete_elliptic_k(m: float) -> float:
    return float(special.ellipk(_check_parameter(m)))


def complementary_k(m: float) -> float:
    """K(1 - m), accurate when m is tiny."""
    m = _check_parameter(m, allow_zero=False)
    return float(special.ellipkm1(m))


def jacobi_sn(kappa: ArrayLike, m: float) -> ArrayLike:
    """sn(kappa | m) for real arguments."""
    m = _check_parameter(m)
    kappa = np.asarray(kappa, dtype=float)
    if not np.all(np.isfinite(kappa)):
        raise DomainError("Argument of sn must be finite")
    sn = special.ellipj(kappa, m)[0]
    return float(sn) if sn.ndim == 0 else sn


def jacobi_sncndn(u: ArrayLike, m: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """sn, cn, dn for complex arguments via the imaginary-argument addition formulas."""
    m = _check_parameter(m)
    u = np.asarray(u, dtype=complex)
    s, c, d, _ = special.ellipj(u.real, m)
    s1, c1, d1, _ = special.ellipj(u.imag, 1.0 - m)
    den = c1 * c1 + m * (s * s1) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        sn = (s * d1 + 1j * c * d * s1 * c1) / den
        cn = (c * c1 - 1j * s * d * s1 * d1) / den
        dn = (d * c1 * d1 - 1j * m * s * c * s1) / den
    return sn, cn, dn


def module_from_strip_length(strip_length: float) -> float:
    """Conformal module of the rectangle reached from a strip of the given length."""
    if not strip_length > 0 or not np.isfinite(strip_length):
        raise DomainError(f"Strip length must be positive, got {strip_length}")
    m = float(np.exp(-2.0 * np.pi * strip_length))
    if m == 0.0:
        # K(1 - m) ~ pi * R + 2 ln 2 once m underflows
        return float((np.pi * strip_length + 2.0 * np.log(2.0)) / np.pi)
    return float(special.ellipkm1(m) / (2.0 * special.ellipk(m)))


def _log_parameter_for_module(module: float) -> float:
    # theta-series in the nome q = exp(-2 pi module); converges fast for module >= 1/2
    q = np.exp(-2.0 * np.pi * module)
    n = np.arange(0, 16)
    s2 = np.sum(q ** (n * (n + 1)))
    s3 = 1.0 + 2.0 * np.sum(q ** (n[1:] ** 2))
    return float(4.0 * np.log(2.0) - 2.0 * np.pi * module + 4.0 * np.log(s2) - 4.0 * np.log(s3))


def strip_length_from_module(module: float) -> float:
    """Inverse of :func:`module_from_strip_length`."""
    if not module > 0 or not np.isfinite(module):
        raise DomainError(f"Conformal module must be positive, got {module}")
    if module >= 0.5:
        return -_log_parameter_for_module(module) / (2.0 * np.pi)
    complementary = np.exp(_log_parameter_for_module(1.0 / (4.0 * module)))
    return float(-np.log1p(-complementary) / (2.0 * np.pi))


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on [-1, 1] for the weight (1 - x)**a (1 + x)**b."""

    nodes: np.ndarray
    weights: np.ndarray
    exponents: Tuple[float, float]

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return np.sum(self.weights * f(self.nodes))


@functools.lru_cache(maxsize=256)
def gauss_jacobi_rule(n: int, a: float, b: float) -> QuadratureRule:
    """n-point Gauss-Jacobi rule, exact for polynomials of degree 2n - 1."""
    if int(n) != n or n < 1:
        raise DomainError(f"Number of nodes must be a positive integer, got {n}")
    if a <= -1.0 or b <= -1.0:
        raise DomainError(f"Jacobi exponents must exceed -1, got ({a}, {b})")
    nodes, weights = special.roots_jacobi(int(n), float(a), float(b))
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights, exponents=(float(a), float(b)))


def _evaluate(residual: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> Tuple[np.ndarray, float]:
    r = np.atleast_1d(np.asarray(residual(x), dtype=float))
    if not np.all(np.isfinite(r)):
        return r, np.inf
    return r, float(np.max(np.abs(r)))


def numerical_jacobian(
    residual: Callable[[np.ndarray], np.ndarray], x: np.ndarray, r0: np.ndarray
) -> np.ndarray:
    """Forward-difference Jacobian with step 1e-7 * max(1, |x_j|)."""
    jac = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = 1e-7 * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += h
        jac[:, j] = (np.atleast_1d(np.asarray(residual(xp), dtype=float)) - r0) / h
    return jac


def solve_nonlinear_system(
    residual: Callable[[np.ndarray], np.ndarray],
    x0: ArrayLike,
    tol: float = 1e-10,
    max_iter: int = 200,
    max_halvings: int = 30,
    label: str = "nonlinear system",
) -> np.ndarray:
    """Damped Newton with a finite-difference Jacobian and step halving.

    Returns the first iterate whose residual max-norm is at most ``tol``.
    Raises ConvergenceError carrying the best iterate on stagnation or when the
    iteration limit is reached.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    r, norm = _evaluate(residual, x)
    if not np.isfinite(norm):
        raise ConvergenceError(f"{label}: residual is not finite at the initial guess", best=x)
    for iteration in range(1, max_iter + 1):
        if norm <= tol:
            logger.debug(f"{label}: converged after {iteration - 1} iterations, residual {norm:.3e}")
            return x
        jac = numerical_jacobian(residual, x, r)
        try:
            if jac.shape[0] != jac.shape[1]:
                raise np.linalg.LinAlgError("non-square Jacobian")
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        t = 1.0
        for _ in range(max_halvings + 1):
            x_try = x + t * step
            r_try, norm_try = _evaluate(residual, x_try)
            if norm_try < norm:
                break
            t *= 0.5
        else:
            raise ConvergenceError(
                f"{label}: Newton step stagnated", best=x, residual=norm, iterations=iteration
            )
        x, r, norm = x_try, r_try, norm_try
        logger.debug(f"{label}: iteration {iteration}, damping {t:.3g}, residual {norm:.3e}")
    if norm <= tol:
        return x
    raise ConvergenceError(
        f"{label}: iteration limit reached", best=x, residual=norm, iterations=max_iter
    )
