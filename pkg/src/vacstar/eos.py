"""Barotropic pressure laws: polytropes and the Chandrasekhar white-dwarf law.

Every law exposes the pressure and its first two derivatives, the specific
enthalpy ``i(s) = int_0^s p'(t)/t dt``, the pressure potential
``A(s) = int_0^s p(t)/t**2 dt`` and the two limiting exponents that control
the dynamics near vacuum (``gamma_bar``) and at high density (``kappa_limit``).

Densities are validated, never clamped: a negative density raises
:class:`DomainError`.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

__all__ = [
    "DomainError",
    "QuadratureError",
    "EquationOfState",
    "Polytrope",
    "WhiteDwarf",
    "StructureReport",
    "verify_structure_conditions",
    "make_eos",
]

FOUR_THIRDS = 4.0 / 3.0

# Gauss-Legendre rule on [0, 1], used for increments of p and A.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class DomainError(ValueError):
    """A density outside the domain of the pressure law."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested accuracy."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (error estimate {residual:.3e})")
        self.residual = residual


def _check_density(s):
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s < 0):
        bad = s[~(np.isfinite(s) & (s >= 0))].ravel()[0]
        raise DomainError(f"density must be finite and nonnegative, got {bad!r}")
    return s


def _scalar_or_array(template, value):
    if np.ndim(template) == 0:
        return float(value)
    return value


class EquationOfState(abc.ABC):
    """Abstract barotropic pressure law ``p(s)``.

    Subclasses provide :meth:`_p`, :meth:`_dp`, :meth:`_d2p` on validated
    arrays and the analytic constants :attr:`gamma_bar`, :attr:`kappa_limit`.
    Enthalpy and pressure potential default to adaptive quadrature; laws with
    a closed form override them.
    """

    kind: str = "abstract"

    @abc.abstractmethod
    def _p(self, s: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def _dp(self, s: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def _d2p(self, s: np.ndarray) -> np.ndarray: ...

    @property
    @abc.abstractmethod
    def gamma_bar(self) -> float:
        """Limit of ``s p'(s) / p(s)`` as ``s -> 0+``."""

    @property
    @abc.abstractmethod
    def kappa_limit(self) -> float:
        """Limit of ``s**(-4/3) p(s)`` as ``s -> inf`` (may be ``inf``)."""

    @abc.abstractmethod
    def params(self) -> dict: ...

    # public evaluation -------------------------------------------------

    def pressure(self, s):
        s = _check_density(s)
        return _scalar_or_array(s, self._p(s))

    def dp(self, s):
        s = _check_density(s)
        return _scalar_or_array(s, self._dp(s))

    def d2p(self, s):
        s = _check_density(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self._d2p(s)
        return _scalar_or_array(s, out)

    def enthalpy(self, s):
        return self.enthalpy_quadrature(s)

    def pressure_potential(self, s):
        return self.pressure_potential_quadrature(s)

    def inverse_enthalpy(self, h):
        """Density with enthalpy ``h``; ``h <= 0`` maps to vacuum."""
        h = np.asarray(h, dtype=float)
        out = np.zeros_like(h)
        flat_h, flat_o = h.ravel(), out.ravel()
        for k, hk in enumerate(flat_h):
            if hk <= 0:
                continue
            hi = 1.0
            while self.enthalpy(hi) < hk:
                hi *= 4.0
            flat_o[k] = _brentq(lambda s: self.enthalpy(s) - hk, 0.0, hi)
        return _scalar_or_array(h, out)

    # quadrature path ---------------------------------------------------

    def _singular_integral(self, f, s, rtol):
        """int_0^s f(t) dt for f ~ t**(gamma_bar - 2) near 0.

        Split at s/2; on the lower half substitute t = sigma**(1/(gb-1)),
        which makes the integrand bounded.
        """
        if s == 0.0:
            return 0.0
        e = 1.0 / (self.gamma_bar - 1.0)
        half = 0.5 * s

        def lower(sig):
            t = sig**e
            return f(t) * e * sig ** (e - 1.0) if t > 0 else 0.0

        a, err_a = integrate.quad(lower, 0.0, half ** (1.0 / e), epsabs=0.0,
                                  epsrel=rtol, limit=200)
        b, err_b = integrate.quad(f, half, s, epsabs=0.0, epsrel=rtol, limit=200)
        total, err = a + b, err_a + err_b
        if err > 100 * rtol * abs(total) + 1e-300:
            raise QuadratureError(f"integral to s={s:g} did not converge", err)
        return total

    def enthalpy_quadrature(self, s, rtol=1e-12):
        s = _check_density(s)

        def f(t):
            return float(self._dp(np.asarray(t))) / t

        out = np.vectorize(lambda x: self._singular_integral(f, x, rtol))(s)
        return _scalar_or_array(s, out)

    def pressure_potential_quadrature(self, s, rtol=1e-12):
        s = _check_density(s)

        def f(t):
            return float(self._p(np.asarray(t))) / (t * t)

        out = np.vectorize(lambda x: self._singular_integral(f, x, rtol))(s)
        return _scalar_or_array(s, out)

    # accurate increments ------------------------------------------------

    def pressure_increment(self, s, delta):
        """``p(s (1 + delta)) - p(s)`` without cancellation for small delta."""
        s = np.asarray(s, dtype=float)
        delta = np.asarray(delta, dtype=float)
        nodes = s[..., None] * (1.0 + delta[..., None] * _GL_X)
        return s * delta * (self._dp(nodes) @ _GL_W)

    def potential_bregman(self, s, delta):
        """``A(s') - A(s) + p(s) (1/s' - 1/s)`` with ``s' = s (1 + delta)``.

        This is the second-order remainder of the internal energy per unit
        mass about ``s``; it is nonnegative because ``p`` is increasing.
        """
        s = np.asarray(s, dtype=float)
        delta = np.asarray(delta, dtype=float)
        u = _GL_X[:, None]
        w = _GL_X[None, :]
        dl = delta[..., None, None]
        arg = s[..., None, None] * (1.0 + dl * u * w)
        integrand = u * self._dp(arg) / (1.0 + dl * u) ** 2
        inner = integrand @ _GL_W
        return delta**2 * (inner @ _GL_W)

    def to_config(self) -> dict:
        return {"kind": self.kind, **self.params()}


def _brentq(f, a, b):
    from scipy.optimize import brentq

    return brentq(f, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass(frozen=True)
class Polytrope(EquationOfState):
    """``p = kappa * s**gamma``."""

    kappa: float
    gamma: float
    kind = "polytrope"

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        # gamma > 1 keeps the enthalpy finite; the 4/3 threshold is a
        # stability condition checked by verify_structure_conditions.
        if not self.gamma > 1:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")

    def params(self):
        return {"kappa": self.kappa, "gamma": self.gamma}

    def _p(self, s):
        return self.kappa * s**self.gamma

    def _dp(self, s):
        return self.kappa * self.gamma * s ** (self.gamma - 1.0)

    def _d2p(self, s):
        g = self.gamma
        return self.kappa * g * (g - 1.0) * s ** (g - 2.0)

    @property
    def gamma_bar(self):
        return float(self.gamma)

    @property
    def kappa_limit(self):
        if self.gamma > FOUR_THIRDS:
            return math.inf
        if self.gamma == FOUR_THIRDS:
            return float(self.kappa)
        return 0.0

    def enthalpy(self, s):
        s = _check_density(s)
        g = self.gamma
        return _scalar_or_array(s, self.kappa * g / (g - 1.0) * s ** (g - 1.0))

    def pressure_potential(self, s):
        s = _check_density(s)
        g = self.gamma
        return _scalar_or_array(s, self.kappa / (g - 1.0) * s ** (g - 1.0))

    def inverse_enthalpy(self, h):
        h = np.asarray(h, dtype=float)
        g = self.gamma
        base = np.maximum(h, 0.0) * (g - 1.0) / (self.kappa * g)
        return _scalar_or_array(h, base ** (1.0 / (g - 1.0)))

    def pressure_increment(self, s, delta):
        s = np.asarray(s, dtype=float)
        delta = np.asarray(delta, dtype=float)
        return self.kappa * s**self.gamma * np.expm1(self.gamma * np.log1p(delta))


# series coefficients of int_0^x 8 t^4 / sqrt(1 + t^2) dt in odd powers x^(5+2k)
_WD_NTERMS = 30
_WD_COEF = np.array(
    [8.0 * special.binom(-0.5, k) / (5 + 2 * k) for k in range(_WD_NTERMS)]
)
_WD_SERIES_MAX = 0.5


def _wd_f(x):
    """x (2x^2 - 3) sqrt(x^2 + 1) + 3 asinh(x), cancellation-free for small x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < _WD_SERIES_MAX
    xs = x[small]
    x2 = xs * xs
    acc = np.zeros_like(xs)
    for c in _WD_COEF[::-1]:
        acc = acc * x2 + c
    out[small] = acc * xs**5
    xl = x[~small]
    out[~small] = xl * (2 * xl * xl - 3) * np.sqrt(xl * xl + 1) + 3 * np.arcsinh(xl)
    return out


@dataclass(frozen=True)
class WhiteDwarf(EquationOfState):
    """Chandrasekhar degenerate-electron law in parametric form.

    ``p(x) = gamma1 * (x (2x^2 - 3) sqrt(x^2 + 1) + 3 asinh x)`` with
    ``rho(x) = gamma2 * x**3``.
    """

    gamma1: float
    gamma2: float
    kind = "white_dwarf"

    def __post_init__(self):
        if not (self.gamma1 > 0 and self.gamma2 > 0):
            raise ValueError("gamma1 and gamma2 must be positive")

    def params(self):
        return {"gamma1": self.gamma1, "gamma2": self.gamma2}

    def x_of(self, s):
        return np.cbrt(np.asarray(s, dtype=float) / self.gamma2)

    def _p(self, s):
        return self.gamma1 * _wd_f(self.x_of(s))

    def _dp(self, s):
        x = self.x_of(s)
        return 8.0 * self.gamma1 / (3.0 * self.gamma2) * x * x / np.sqrt(1.0 + x * x)

    def _d2p(self, s):
        x = self.x_of(s)
        c = 8.0 * self.gamma1 / (3.0 * self.gamma2)
        return c * (2.0 + x * x) / (3.0 * self.gamma2 * x * (1.0 + x * x) ** 1.5)

    @property
    def gamma_bar(self):
        return 5.0 / 3.0

    @property
    def kappa_limit(self):
        return 2.0 * self.gamma1 * self.gamma2 ** (-FOUR_THIRDS)

    def enthalpy(self, s):
        s = _check_density(s)
        x2 = self.x_of(s) ** 2
        # 8 g1/g2 (sqrt(1+x^2) - 1), written without cancellation
        out = 8.0 * self.gamma1 / self.gamma2 * x2 / (np.sqrt(1.0 + x2) + 1.0)
        return _scalar_or_array(s, out)

    def pressure_potential(self, s):
        s = _check_density(s)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(s > 0, self.enthalpy(s) - self._p(s) / np.where(s > 0, s, 1.0), 0.0)
        return _scalar_or_array(s, out)

    def inverse_enthalpy(self, h):
        h = np.asarray(h, dtype=float)
        u = np.maximum(h, 0.0) * self.gamma2 / (8.0 * self.gamma1)
        x = np.sqrt(u * (u + 2.0))
        return _scalar_or_array(h, self.gamma2 * x**3)


@dataclass
class StructureReport:
    """Sampled check of the structure conditions on ``(0, s_max]``."""

    s: np.ndarray
    log_slope: np.ndarray  # s p'(s) / p(s)
    curvature: np.ndarray  # s p''(s) / p'(s)
    min_log_slope: float
    max_log_slope: float
    gamma_bar_empirical: float
    gamma_bar: float
    kappa_limit: float
    passed: bool
    message: str = ""


def verify_structure_conditions(eos, s_max, n_samples=200, decades=12.0, tol=1e-12):
    """Sample ``s p'/p`` and ``s p''/p'`` on a log grid in ``(0, s_max]``.

    Fails when ``s p'/p`` drops below 4/3 anywhere, or when ``p`` or ``p'``
    is not positive.
    """
    if not s_max > 0:
        raise ValueError("s_max must be positive")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    s = np.logspace(math.log10(s_max) - decades, math.log10(s_max), int(n_samples))
    s[-1] = s_max
    p, dp, d2p = eos._p(s), eos._dp(s), eos._d2p(s)
    slope = s * dp / p
    curv = s * d2p / dp
    problems = []
    if np.any(p <= 0) or np.any(dp <= 0):
        problems.append("p or p' not positive")
    if slope.min() < FOUR_THIRDS - tol:
        problems.append(f"s p'/p reaches {slope.min():.6g} < 4/3")
    return StructureReport(
        s=s,
        log_slope=slope,
        curvature=curv,
        min_log_slope=float(slope.min()),
        max_log_slope=float(slope.max()),
        gamma_bar_empirical=float(slope[0]),
        gamma_bar=eos.gamma_bar,
        kappa_limit=eos.kappa_limit,
        passed=not problems,
        message="; ".join(problems),
    )


def make_eos(kind, **params):
    """Build an equation of state from a config-style ``kind`` and parameters."""
    if kind == "polytrope":
        return Polytrope(float(params["kappa"]), float(params["gamma"]))
    if kind == "white_dwarf":
        return WhiteDwarf(float(params["gamma1"]), float(params["gamma2"]))
    raise ValueError(f"unknown eos kind {kind!r}")
