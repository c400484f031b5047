"""Van Genuchten-Mualem constitutive laws for unsaturated poromechanics.

Pointwise material laws shared by every linearization scheme:

* water retention      s_w(p) = (1 + (-a p)^n)^(-(n-1)/n)   for p <= 0, else 1,
* relative mobility    k_w(s) = (kappa/mu_w) sqrt(s) (1 - (1 - s^(n/(n-1)))^((n-1)/n))^2,
* equivalent pore pressure  p_E(p) = int_0^p s_w(xi) dxi,   so that dp_E = s_w dp,
* linear porosity update    phi = phi_0 + alpha d(div u) + (1/N) d(p_E).

All functions accept scalars or numpy arrays and are pure.  Calls to the two
derivative evaluators are counted globally so that derivative-free schemes can
assert that they never touch them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "InvalidInput",
    "QuadratureError",
    "VanGenuchtenModel",
    "PorosityLaw",
    "saturation",
    "saturation_derivative",
    "mobility",
    "mobility_derivative_wrt_p",
    "equivalent_pore_pressure",
    "porosity",
    "capillary_pressure",
    "derivative_call_counts",
    "reset_derivative_call_counts",
]

DERIVATIVE_CAP = 1e12


class InvalidInput(ValueError):
    """Raised for non-finite or out-of-range arguments to a material law."""


class QuadratureError(RuntimeError):
    """Raised when the pore-pressure quadrature does not reach its tolerance."""


# Instrumentation: number of calls to derivative evaluators.  The L-scheme
# family advertises that it is derivative-free; tests assert these stay at 0.
_derivative_calls = {"saturation_derivative": 0, "mobility_derivative_wrt_p": 0}


def derivative_call_counts() -> dict:
    return dict(_derivative_calls)


def reset_derivative_call_counts() -> None:
    for key in _derivative_calls:
        _derivative_calls[key] = 0


@dataclass(frozen=True)
class VanGenuchtenModel:
    """Parameter set of the van Genuchten-Mualem retention/mobility model.

    Attributes:
        a_vg: inverse air-suction scale (1/Pa), > 0.
        n_vg: pore-size distribution index (-), > 1.
        kappa: intrinsic permeability (m^2), > 0.
        mu_w: dynamic fluid viscosity (Pa s), > 0.
    """

    a_vg: float
    n_vg: float
    kappa: float
    mu_w: float

    def __post_init__(self):
        if not (self.a_vg > 0 and self.n_vg > 1 and self.kappa > 0 and self.mu_w > 0):
            raise InvalidInput(
                "require a_vg > 0, n_vg > 1, kappa > 0, mu_w > 0, got "
                f"a_vg={self.a_vg}, n_vg={self.n_vg}, kappa={self.kappa}, mu_w={self.mu_w}"
            )

    @property
    def m_vg(self) -> float:
        """Mualem exponent m = 1 - 1/n."""
        return (self.n_vg - 1.0) / self.n_vg

    @property
    def mobility_scale(self) -> float:
        """kappa / mu_w, the fully saturated mobility."""
        return self.kappa / self.mu_w

    def saturation_lipschitz(self) -> float:
        """Exact Lipschitz constant of p -> s_w(p).

        The derivative a (n-1) x^(n-1) (1+x^n)^(-(2n-1)/n) of the suction
        branch (x = -a p) is maximal at x^n = (n-1)/n; the closed form below
        evaluates it there.
        """
        n = self.n_vg
        x = ((n - 1.0) / n) ** (1.0 / n)
        return self.a_vg * (n - 1.0) * x ** (n - 1.0) * (1.0 + x**n) ** (-(2.0 * n - 1.0) / n)


@dataclass(frozen=True)
class PorosityLaw:
    """Linear porosity law phi = phi0 + alpha d(div u) + inv_n d(p_E).

    Attributes:
        phi0: initial porosity in (0, 1).
        alpha: Biot coefficient in (0, 1].
        inv_n: inverse Biot modulus 1/N (1/Pa), >= 0.
    """

    phi0: float
    alpha: float
    inv_n: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.phi0 < 1.0):
            raise InvalidInput(f"phi0 must lie in (0,1), got {self.phi0}")
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidInput(f"alpha must lie in (0,1], got {self.alpha}")
        if not self.inv_n >= 0.0:
            raise InvalidInput(f"inv_n must be >= 0, got {self.inv_n}")


def _as_array(p, name="p"):
    arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} must be finite")
    return arr, arr.ndim == 0


def _maybe_scalar(values, scalar):
    return float(values) if scalar else values


def saturation(p, vg: VanGenuchtenModel):
    """Water saturation s_w(p) in (0, 1]; equals 1 for p >= 0."""
    arr, scalar = _as_array(p)
    out = np.ones_like(arr, dtype=float)
    wet = arr < 0.0
    if np.any(wet):
        x = -vg.a_vg * arr[wet]
        out[wet] = (1.0 + x**vg.n_vg) ** (-vg.m_vg)
    return _maybe_scalar(out, scalar)


def saturation_derivative(p, vg: VanGenuchtenModel):
    """d s_w / d p.  Zero on the saturated branch; the value at p = 0 is the
    (left) limit, which vanishes for every n_vg > 1."""
    _derivative_calls["saturation_derivative"] += 1
    arr, scalar = _as_array(p)
    out = np.zeros_like(arr, dtype=float)
    wet = arr < 0.0
    if np.any(wet):
        n = vg.n_vg
        x = -vg.a_vg * arr[wet]
        out[wet] = vg.a_vg * (n - 1.0) * x ** (n - 1.0) * (1.0 + x**n) ** (-(vg.m_vg + 1.0))
    return _maybe_scalar(out, scalar)


def mobility(s, vg: VanGenuchtenModel):
    """Mualem mobility k_w(s) = (kappa/mu_w) sqrt(s) (1-(1-s^(n/(n-1)))^m)^2."""
    arr, scalar = _as_array(s, name="s")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidInput("saturation must lie in [0, 1]")
    n = vg.n_vg
    theta = 1.0 - arr ** (n / (n - 1.0))
    out = vg.mobility_scale * np.sqrt(arr) * (1.0 - theta**vg.m_vg) ** 2
    return _maybe_scalar(out, scalar)


def mobility_derivative_wrt_p(p, vg: VanGenuchtenModel, cap: float = DERIVATIVE_CAP):
    """d k_w(s_w(p)) / d p via the chain rule, clamped to +-cap.

    Near the transition p -> 0- the derivative behaves like |p|^(n-2) and is
    unbounded for n_vg < 2 (Hoelder-continuous mobility).  Overflowing values
    are clamped to the finite sentinel ``cap`` and flagged instead of
    producing NaN/inf, so Newton-type schemes fail by divergence detection
    rather than by arithmetic faults.

    Returns:
        (value, clamped): derivative and a boolean mask (scalar bool for
        scalar input) marking entries that hit the cap.
    """
    _derivative_calls["mobility_derivative_wrt_p"] += 1
    arr, scalar = _as_array(p)
    out = np.zeros_like(arr, dtype=float)
    wet = arr < 0.0
    if np.any(wet):
        n = vg.n_vg
        m = vg.m_vg
        big = n / (n - 1.0)
        x = -vg.a_vg * arr[wet]
        with np.errstate(over="ignore", divide="ignore"):
            xn = x**n
            s = (1.0 + xn) ** (-m)
            dsdp = vg.a_vg * (n - 1.0) * x ** (n - 1.0) * (1.0 + xn) ** (-(m + 1.0))
            # theta = 1 - s^(n/(n-1)) computed without cancellation:
            # s^(n/(n-1)) = 1/(1+x^n) exactly.
            theta = xn / (1.0 + xn)
            bracket = 1.0 - theta**m
            dkds = vg.mobility_scale * (
                bracket**2 / (2.0 * np.sqrt(s))
                + 2.0 * np.sqrt(s) * bracket * m * big * theta ** (m - 1.0) * s ** (big - 1.0)
            )
            out[wet] = dkds * dsdp
    clamped = ~np.isfinite(out) | (np.abs(out) > cap)
    if np.any(clamped):
        out[clamped] = np.sign(np.where(np.isnan(out[clamped]), 1.0, out[clamped])) * cap
        out[clamped & ~np.isfinite(out)] = cap
    if scalar:
        return float(out), bool(clamped)
    return out, clamped


# ----------------------------------------------------------------------
# Equivalent pore pressure
# ----------------------------------------------------------------------
#
# p_E(p) = int_0^p s_w(xi) dxi = p * int_0^1 s_w(p t) dt.  The integrand has a
# branch point at t = 0 (s_w is only C^1 there for non-integer n_vg), so the
# unit interval is split into geometrically graded panels accumulating at 0
# and a Gauss rule is applied per panel.  Nodes are fixed in t-space, which
# makes p -> p_E(p) an analytic function of p -- finite differences of the
# residuals stay clean.  A lower-order companion rule on the same panels
# provides the convergence estimate.

_GRADE_LEVELS = 44
_GAUSS_HI = 12
_GAUSS_LO = 8


def _panel_rule(order):
    xg, wg = np.polynomial.legendre.leggauss(order)
    uppers = 2.0 ** -np.arange(_GRADE_LEVELS)
    lowers = uppers / 2.0
    mid = (uppers + lowers) / 2.0
    half = (uppers - lowers) / 2.0
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    # closing stub [0, 2^-levels] by its midpoint; relative contribution ~1e-14
    stub = uppers[-1] / 2.0
    nodes = np.append(nodes, stub / 2.0)
    weights = np.append(weights, stub)
    return nodes, weights


_NODES_HI, _WEIGHTS_HI = _panel_rule(_GAUSS_HI)
_NODES_LO, _WEIGHTS_LO = _panel_rule(_GAUSS_LO)

# nodes^n cached per retention exponent; the per-point powers then reduce to
# an outer product (a |p|)^n * nodes^n, which dominates the evaluation cost
_node_pow_cache: dict = {}


def _rule_integral(pw, vg, nodes, weights, key):
    cache_key = (vg.n_vg, key)
    node_pow = _node_pow_cache.get(cache_key)
    if node_pow is None:
        node_pow = nodes**vg.n_vg
        _node_pow_cache[cache_key] = node_pow
    xn = (vg.a_vg * np.abs(pw)) ** vg.n_vg
    with np.errstate(over="ignore", invalid="ignore"):
        s_nodes = np.exp(-vg.m_vg * np.log1p(xn[:, None] * node_pow[None, :]))
    return np.nan_to_num(s_nodes, nan=0.0) @ weights


def equivalent_pore_pressure(p, vg: VanGenuchtenModel, rtol: float = 1e-10):
    """Equivalent pore pressure p_E(p) = int_0^p s_w(xi) dxi.

    Exactly p on the saturated branch (s_w = 1 there), continuous at p = 0.
    Raises QuadratureError if the graded-panel quadrature cannot certify the
    requested relative tolerance.
    """
    arr, scalar = _as_array(p)
    flat = np.atleast_1d(arr).astype(float)
    out = flat.copy()  # saturated branch: integrand is 1
    wet = flat < 0.0
    if np.any(wet):
        pw = flat[wet]
        hi = _rule_integral(pw, vg, _NODES_HI, _WEIGHTS_HI, "hi")
        lo = _rule_integral(pw, vg, _NODES_LO, _WEIGHTS_LO, "lo")
        err = np.abs(hi - lo) / np.maximum(np.abs(hi), 1e-300)
        if np.any(err > rtol):
            worst = int(np.argmax(err))
            raise QuadratureError(
                f"pore-pressure quadrature reached {err[worst]:.2e} relative "
                f"at p={pw[worst]:.6g}, requested {rtol:.1e}"
            )
        out[wet] = pw * hi
    out = out.reshape(arr.shape)
    return _maybe_scalar(out, scalar)


def porosity(law: PorosityLaw, div_u_increment, pE_increment):
    """Porosity from the linear update law, plus an admissibility flag.

    Returns:
        (phi, admissible): porosity value(s) and elementwise flag marking
        phi in [0, 1].  Out-of-range porosity is flagged, never raised.
    """
    divu = np.asarray(div_u_increment, dtype=float)
    dpe = np.asarray(pE_increment, dtype=float)
    phi = law.phi0 + law.alpha * divu + law.inv_n * dpe
    admissible = (phi >= 0.0) & (phi <= 1.0)
    if phi.ndim == 0:
        return float(phi), bool(admissible)
    return phi, admissible


def capillary_pressure(s, vg: VanGenuchtenModel):
    """Capillary pressure p_c(s) = -s_w^{-1}(s) >= 0 for s in (0, 1]."""
    arr, scalar = _as_array(s, name="s")
    if np.any(arr <= 0.0) or np.any(arr > 1.0):
        raise InvalidInput("saturation must lie in (0, 1]")
    x = np.maximum(arr ** (-1.0 / vg.m_vg) - 1.0, 0.0) ** (1.0 / vg.n_vg)
    return _maybe_scalar(x / vg.a_vg, scalar)
