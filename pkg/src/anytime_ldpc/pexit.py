"""SNR evolution on the time-expanded protograph and anytime-exponent bounds.

BP messages are modelled as outputs of binary-input AWGN channels whose
SNRs are tracked edge by edge. The check-node rule goes through the mutual
information function ``J`` and its dual ``M(rho) = J^-1(1 - J(rho))``.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy.interpolate import CubicSpline

from .protograph import ProtographSpec, TimeExpandedProtograph, _tail_fit, expand, systematic_degree_profile

RHO_MIN = 1e-12
RHO_MAX = 1e6
LN2 = math.log(2.0)

_GH_NODES = 64
_GH_X, _GH_W = np.polynomial.hermite.hermgauss(_GH_NODES)
_GH_W = _GH_W / math.sqrt(math.pi)
# trapezoid grid in the LLR variable; integrand poles sit at distance pi from the real axis
_TRAP_STEP = 0.2
_TRAP_Y = np.arange(-90.0, 90.0 + _TRAP_STEP / 2, _TRAP_STEP)
_TRAP_SOFTPLUS = np.logaddexp(0.0, -_TRAP_Y)
_GH_MAX_RHO = 1.0


class NotConverged(RuntimeWarning):
    pass


class NonlinearGrowth(RuntimeWarning):
    pass


class StablePlant(ValueError):
    pass


def _logcosh(x):
    a = np.abs(x)
    small = a < 1.0
    out = np.empty_like(a)
    out[small] = np.log1p(2.0 * np.sinh(a[small] / 2.0) ** 2)
    big = ~small
    out[big] = a[big] + np.log1p(np.exp(-2.0 * a[big])) - LN2
    return out


def log_j_pair(rho):
    """``(log J(rho), log(1 - J(rho)))`` evaluated without cancellation.

    For ``rho <= 1`` both come from 64-node Gauss-Hermite quadrature over the
    LLR density ``N(2 rho, 4 rho)``; ``J`` itself is integrated in its
    log-cosh form so that it keeps full relative accuracy as ``rho -> 0``.
    Above that the complement is integrated on a fixed LLR grid after pulling
    out the ``exp(-rho/2)`` factor, which resolves the softplus kink that
    Gauss-Hermite cannot.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    log_j = np.empty_like(rho)
    log_jc = np.empty_like(rho)
    if (rho <= 0).any():
        raise ValueError("log_j_pair needs rho > 0")
    lo = rho <= _GH_MAX_RHO
    if lo.any():
        r = rho[lo][:, None]
        y = 2.0 * r + np.sqrt(8.0 * r) * _GH_X[None, :]
        j = (rho[lo] - (_GH_W * _logcosh(y / 2.0)).sum(axis=1)) / LN2
        jc = (_GH_W * np.logaddexp(0.0, -y)).sum(axis=1) / LN2
        log_j[lo] = np.log(j)
        log_jc[lo] = np.log(jc)
    hi = ~lo
    if hi.any():
        r = rho[hi][:, None]
        expo = _TRAP_Y[None, :] / 2.0 - _TRAP_Y[None, :] ** 2 / (8.0 * r)
        s = (np.exp(expo) * _TRAP_SOFTPLUS[None, :]).sum(axis=1) * _TRAP_STEP
        lj = -rho[hi] / 2.0 - 0.5 * np.log(8.0 * math.pi * rho[hi]) - math.log(LN2) + np.log(s)
        log_jc[hi] = lj
        log_j[hi] = np.log1p(-np.exp(lj))
    return log_j, log_jc


def j_function(rho):
    """Mutual information between the input and output of a BI-AWGN channel with SNR ``rho``.

    ``J(0) = 0``. Scalars in, scalars out; arrays are evaluated elementwise.
    """
    arr = np.asarray(rho, dtype=float)
    if (arr < 0).any():
        raise ValueError("SNR must be nonnegative")
    flat = arr.ravel()
    out = np.zeros_like(flat)
    pos = flat > 0
    if pos.any():
        log_j, log_jc = log_j_pair(flat[pos])
        out[pos] = np.where(log_j < math.log(0.5), np.exp(log_j), -np.expm1(log_jc))
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


@numba.njit(cache=True)
def _invert_cells(xk, c, cell, target, n_bisect):
    out = np.empty(target.size)
    for i in range(target.size):
        k = cell[i]
        lo = 0.0
        hi = xk[k + 1] - xk[k]
        g = target[i]
        for _ in range(n_bisect):
            mid = 0.5 * (lo + hi)
            v = ((c[0, k] * mid + c[1, k]) * mid + c[2, k]) * mid + c[3, k]
            if v < g:
                lo = mid
            else:
                hi = mid
        out[i] = xk[k] + 0.5 * (lo + hi)
    return out


def _large_rho_offset():
    # G(rho) - rho/2 - log(8 pi rho)/2 - log(ln 2) -> -log S for rho -> inf
    s = (np.exp(_TRAP_Y / 2.0) * _TRAP_SOFTPLUS).sum() * _TRAP_STEP
    return math.log(LN2) - math.log(s)


class JTable:
    """Tabulated ``J`` for fast vectorized evaluation of ``J``, ``J^-1`` and ``M``.

    Stores the log-odds ``G(u) = log J - log(1 - J)`` against ``u = log rho``
    as a cubic spline; outside the grid the small- and large-SNR asymptotes
    of ``J`` take over. ``J^-1`` bisects the spline, and
    ``M(rho) = G^-1(-G(log rho))`` is an involution of the table itself.
    Working in ``u`` keeps ``M`` finite where ``rho`` itself would underflow.
    """

    def __init__(self, rho_lo=1e-13, rho_hi=2e6, step=0.005, rho_min=RHO_MIN, rho_max=RHO_MAX):
        u = np.arange(math.log(rho_lo), math.log(rho_hi) + step, step)
        log_j, log_jc = log_j_pair(np.exp(u))
        g = log_j - log_jc
        if not (np.diff(g) > 0).all():
            raise RuntimeError("tabulated J is not strictly increasing")
        self.u = u
        self.g = g
        self._spline = CubicSpline(u, g)
        self._c = np.ascontiguousarray(self._spline.c)
        self._hi_offset = _large_rho_offset()
        self.rho_min = rho_min
        self.rho_max = rho_max

    def log_odds_u(self, u):
        """``G`` as a function of ``u = log rho`` (``-inf`` maps to ``-inf``)."""
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        inside = (u >= self.u[0]) & (u <= self.u[-1])
        out[inside] = self._spline(u[inside])
        below = u < self.u[0]
        if below.any():
            # J = (rho/2 - rho^2/4) / ln 2 + O(rho^3)
            ub = u[below]
            r = np.exp(ub)
            out[below] = ub + np.log1p(-r / 2.0) - math.log(2.0 * LN2)
        above = u > self.u[-1]
        if above.any():
            r = np.exp(u[above])
            out[above] = r / 2.0 + 0.5 * np.log(8.0 * math.pi * r) + self._hi_offset
        return out

    def log_odds(self, rho):
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            return self.log_odds_u(np.log(rho))

    def g_inverse_u(self, g):
        """``u`` with ``G(u) = g``, for any real ``g`` (+-inf pass through)."""
        g = np.asarray(g, dtype=float)
        out = np.empty_like(g)
        inside = (g >= self.g[0]) & (g <= self.g[-1])
        if inside.any():
            gi = g[inside]
            cell = np.clip(np.searchsorted(self.g, gi, side="right") - 1, 0, self.u.size - 2)
            out[inside] = _invert_cells(self.u, self._c, cell, gi, 60)
        below = g < self.g[0]
        if below.any():
            gb = g[below]
            u0 = gb + math.log(2.0 * LN2)
            # one fixed-point pass on the series correction log1p(-rho/2)
            out[below] = u0 - np.log1p(-np.exp(u0) / 2.0)
        above = g > self.g[-1]
        if above.any():
            ga = g[above]
            fin = np.isfinite(ga)
            r = 2.0 * ga[fin]
            for _ in range(50):
                f = r / 2.0 + 0.5 * np.log(8.0 * math.pi * r) + self._hi_offset - ga[fin]
                r = r - f / (0.5 + 0.5 / r)
            res = np.full(ga.shape, np.inf)
            res[fin] = np.log(r)
            out[above] = res
        return out

    def j(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = np.zeros_like(rho)
        pos = rho > 0
        out[pos] = 1.0 / (1.0 + np.exp(-self.log_odds(rho[pos])))
        return out

    def j_inv(self, x):
        """Inverse of ``J`` by bisection on the table; ``x`` in [0, 1]."""
        x = np.asarray(x, dtype=float)
        if ((x < 0) | (x > 1)).any():
            raise ValueError("mutual information must lie in [0, 1]")
        out = np.zeros_like(x)
        out[x >= 1] = np.inf
        mid = (x > 0) & (x < 1)
        out[mid] = np.exp(self.g_inverse_u(np.log(x[mid]) - np.log1p(-x[mid])))
        return out

    def log_m_u(self, u):
        """``log M(e^u)``; ``u = -inf`` (SNR 0) gives ``+inf``."""
        return self.g_inverse_u(-self.log_odds_u(u))

    def m(self, rho):
        """``M(rho) = J^-1(1 - J(rho))`` clamped to ``[rho_min, rho_max]``; ``M(0) = rho_max``."""
        rho = np.asarray(rho, dtype=float)
        scalar = rho.ndim == 0
        rho = np.atleast_1d(rho)
        if (rho < 0).any():
            raise ValueError("SNR must be nonnegative")
        with np.errstate(divide="ignore", over="ignore"):
            out = np.exp(self.log_m_u(np.log(rho)))
        out = np.clip(out, self.rho_min, self.rho_max)
        return float(out[0]) if scalar else out


@functools.lru_cache(maxsize=1)
def default_table() -> JTable:
    return JTable()


def m_function(rho, table: JTable | None = None):
    return (table or default_table()).m(rho)


@numba.njit(cache=True)
def _leave_one_out_log(values, ptr):
    """Per segment, ``log sum exp`` of all other entries; empty -> -inf."""
    out = np.empty_like(values)
    for s in range(ptr.size - 1):
        a = ptr[s]
        b = ptr[s + 1]
        acc = -np.inf
        for e in range(a, b):
            out[e] = acc
            acc = np.logaddexp(acc, values[e])
        acc = -np.inf
        for e in range(b - 1, a - 1, -1):
            out[e] = np.logaddexp(out[e], acc)
            acc = np.logaddexp(acc, values[e])
    return out


@numba.njit(cache=True)
def _leave_one_out(values, ptr):
    """Per segment, the sum of all other entries (prefix + suffix, no cancellation)."""
    out = np.empty_like(values)
    for s in range(ptr.size - 1):
        a = ptr[s]
        b = ptr[s + 1]
        acc = 0.0
        for e in range(a, b):
            out[e] = acc
            acc += values[e]
        acc = 0.0
        for e in range(b - 1, a - 1, -1):
            out[e] += acc
            acc += values[e]
    return out


@dataclass
class SnrEvolutionState:
    """Per-edge SNRs after evolution; edges are ordered by check node."""

    t: int
    cn: np.ndarray
    vn: np.ndarray
    rho_ch: np.ndarray
    rho_v2c: np.ndarray
    rho_c2v: np.ndarray
    sweeps: int
    converged: bool
    monotone: bool
    n_vn: int


def evolve(
    proto: TimeExpandedProtograph,
    rho_ch,
    tol: float = 1e-8,
    max_sweeps: int = 10_000,
    table: JTable | None = None,
) -> SnrEvolutionState:
    """Iterate the check and variable SNR updates to a fixed point.

    ``rho_ch`` is a scalar or one channel SNR (linear) per protograph VN.
    Parallel edges are tracked as distinct edges.
    """
    table = table or default_table()
    n_vn = proto.n_vn
    rho_ch = np.broadcast_to(np.asarray(rho_ch, dtype=float), (n_vn,)).copy()
    if (rho_ch <= 0).any():
        raise ValueError("channel SNRs must be positive")
    cn, vn = proto.edges()
    order = np.lexsort((vn, cn))
    cn, vn = cn[order], vn[order]
    cn_ptr = np.searchsorted(cn, np.arange(proto.n_cn + 1))
    by_vn = np.argsort(vn, kind="stable")
    vn_ptr = np.searchsorted(vn[by_vn], np.arange(n_vn + 1))

    v2c = np.clip(rho_ch[vn], table.rho_min, table.rho_max)
    c2v = np.zeros_like(v2c)
    converged = False
    monotone = True
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        log_m = table.log_m_u(np.log(v2c))
        with np.errstate(over="ignore"):
            new_c2v = np.exp(table.log_m_u(_leave_one_out_log(log_m, cn_ptr)))
        new_c2v = np.clip(new_c2v, table.rho_min, table.rho_max)
        loo = np.empty_like(new_c2v)
        loo[by_vn] = _leave_one_out(new_c2v[by_vn], vn_ptr)
        new_v2c = np.clip(loo + rho_ch[vn], table.rho_min, table.rho_max)
        slack = 1e-12 * np.maximum(1.0, c2v)
        if (new_c2v < c2v - slack).any() or (new_v2c < v2c - 1e-12 * np.maximum(1.0, v2c)).any():
            monotone = False
        change = max(np.abs(new_c2v - c2v).max(initial=0.0), np.abs(new_v2c - v2c).max(initial=0.0))
        c2v, v2c = new_c2v, new_v2c
        if change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(NotConverged(f"SNR evolution did not converge in {max_sweeps} sweeps"))
    return SnrEvolutionState(
        t=proto.t,
        cn=cn,
        vn=vn,
        rho_ch=rho_ch,
        rho_v2c=v2c,
        rho_c2v=c2v,
        sweeps=sweeps,
        converged=converged,
        monotone=monotone,
        n_vn=n_vn,
    )


def output_snr(state: SnrEvolutionState) -> np.ndarray:
    """Decision-variable SNR per VN: channel SNR plus every incoming check SNR."""
    return state.rho_ch + np.bincount(state.vn, weights=state.rho_c2v, minlength=state.n_vn)


def min_systematic_output(out_snr, t: int, k0: int, n0: int):
    """``(delays, min output SNR)`` over the k0 systematic VNs of each delay 1..t."""
    out_snr = np.asarray(out_snr)
    delays = np.arange(1, t + 1)
    mins = np.array([out_snr[(t - d) * n0 : (t - d) * n0 + k0].min() for d in delays])
    return delays, mins


@dataclass(frozen=True)
class BetaFit:
    beta: float
    r_squared: float
    delays: np.ndarray
    min_output: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        """The finite-delay quantity ``min output SNR / (2 d)``."""
        return self.min_output / (2.0 * self.delays)


def beta_lower_bound(out_snr, t: int, k0: int, n0: int, gamma: float | None = None) -> BetaFit:
    """Lower bound on the anytime exponent from converged output SNRs.

    The ``d -> inf`` limit of ``min output / (2 d)`` is taken as half the
    least-squares slope of the minimum systematic output SNR against delay
    over the older half of the delays. When the systematic degree does not
    grow (``gamma == 0``) the output SNR is bounded and the limit is zero.
    """
    delays, mins = min_systematic_output(out_snr, t, k0, n0)
    if gamma is not None and gamma <= 0:
        return BetaFit(beta=0.0, r_squared=1.0, delays=delays, min_output=mins)
    sel = delays >= max(1, t // 2)
    slope, r2 = _tail_fit(delays[sel], mins[sel])
    beta = max(0.0, slope / 2.0)
    if abs(slope) < 1e-9 * max(1.0, float(mins.max())):
        beta, r2 = 0.0, 1.0
    elif r2 < 0.95:
        warnings.warn(NonlinearGrowth(f"output SNR is not linear in delay (R^2 = {r2:.3f})"))
    return BetaFit(beta=beta, r_squared=r2, delays=delays, min_output=mins)


def pe_upper_bound(min_output, k0: int, delays=None):
    """Chernoff/union bound ``(k0/2) exp(-min output SNR / 2)`` per delay."""
    min_output = np.asarray(min_output, dtype=float)
    if delays is None:
        delays = np.arange(1, min_output.size + 1)
    return np.asarray(delays), 0.5 * k0 * np.exp(-min_output / 2.0)


def pe_bound_closed_form(rho_ch: float, k0: int, gamma: float, delays):
    """Bound curve assuming the output SNR reaches its cap ``(gamma d + 1) rho_ch``."""
    delays = np.asarray(delays, dtype=float)
    return pe_upper_bound((gamma * delays + 1.0) * rho_ch, k0, delays)[1]


@dataclass(frozen=True)
class Threshold:
    rho_abar: float
    rho_star: float
    rho_star_db: float
    required_beta: float


def stabilization_threshold(gamma: float, A) -> Threshold:
    """Channel SNR above which ``beta = gamma rho / 2`` exceeds ``2 ln rho(|A|)``."""
    from .plant import spectral_radius_abs

    if gamma <= 0:
        raise ValueError("gamma must be positive for a finite threshold")
    rho_abar = spectral_radius_abs(A)
    if rho_abar <= 1.0:
        raise StablePlant(f"rho(|A|) = {rho_abar:.6g} <= 1; no anytime exponent is required")
    required = 2.0 * math.log(rho_abar)
    rho_star = 2.0 * required / gamma
    return Threshold(
        rho_abar=rho_abar,
        rho_star=rho_star,
        rho_star_db=10.0 * math.log10(rho_star),
        required_beta=required,
    )


@dataclass
class PexitReport:
    snr_db: float
    rho_ch: float
    t: int
    gamma: float
    output_snr: np.ndarray
    fit: BetaFit
    beta_closed_form: float
    threshold: Threshold | None
    converged: bool
    sweeps: int

    @property
    def beta_bar(self) -> float:
        return self.fit.beta

    def bound_curve(self, k0: int):
        return pe_upper_bound(self.fit.min_output, k0, self.fit.delays)


def analyze(spec: ProtographSpec, snr_db: float, t: int = 200, A=None, table: JTable | None = None, **kw) -> PexitReport:
    """Run SNR evolution at one AWGN channel SNR and collect the exponent figures."""
    proto = expand(spec, t)
    rho = 10.0 ** (snr_db / 10.0)
    state = evolve(proto, rho, table=table, **kw)
    out = output_snr(state)
    gamma = systematic_degree_profile(proto).gamma
    fit = beta_lower_bound(out, t, spec.k0, spec.n0, gamma=gamma if abs(gamma) < 1e-9 else None)
    threshold = None
    if A is not None and gamma > 0:
        try:
            threshold = stabilization_threshold(gamma, A)
        except StablePlant:
            threshold = None
    return PexitReport(
        snr_db=snr_db,
        rho_ch=rho,
        t=t,
        gamma=gamma,
        output_snr=out,
        fit=fit,
        beta_closed_form=gamma * rho / 2.0,
        threshold=threshold,
        converged=state.converged,
        sweeps=state.sweeps,
    )
