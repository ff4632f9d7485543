"""Closed-form particle position densities and receiver observation probabilities.

The x-motion is free drift-diffusion (Gaussian). The z-motion lives on [0, h]
with reflecting walls and a constant drift v_m toward z = 0; its density is
the equilibrium profile plus an eigenfunction series

    p_z(z, t) = p_eq(z) + exp(-u (z - z0)) sum_n exp(-D (s_n^2 + u^2) t) Z_n(z) Z_n(z0)

with u = v_m / (2 D), s_n = n pi / h and
Z_n(z) = sqrt(2 / (h (s_n^2 + u^2))) (s_n cos(s_n z) - u sin(s_n z)).

Every term carries exp(-D s_n^2 t), so the series is truncated adaptively
from a geometric tail bound. When the bound cannot be met within
``SeriesControl.n_terms`` and D t / h^2 < ``SMALL_TIME_SWITCH``, the density
is replaced by the exact solution for a single reflecting wall (nearest to
the release point), which is accurate while the far wall is out of reach.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erf, erfc

from mnpcomm import physics
from mnpcomm.channel import ChannelGeometry, Scenario, TransportParams

SMALL_TIME_SWITCH = 1e-4
# below this v_m h / D the equilibrium profile is taken as uniform
ZERO_DRIFT_PECLET = 1e-8
# elements x terms per vectorised block
_BLOCK = 2_000_000


class SeriesNotConverged(ArithmeticError):
    """The truncated series cannot meet its tail tolerance at the requested time."""

    def __init__(self, t, n_terms, bound, tolerance):
        self.t = t
        self.n_terms = n_terms
        self.bound = bound
        self.tolerance = tolerance
        super().__init__(
            f"series not converged at t={t:g} s: tail bound {bound:.3g} after "
            f"{n_terms} terms exceeds tolerance {tolerance:.3g}"
        )


@dataclass(frozen=True)
class SeriesControl:
    n_terms: int = 500
    tail_tolerance: float = 1e-9

    def __post_init__(self):
        if self.n_terms < 1:
            raise ValueError(f"n_terms must be >= 1, got {self.n_terms}")
        if not self.tail_tolerance > 0:
            raise ValueError(f"tail_tolerance must be > 0, got {self.tail_tolerance}")


@dataclass
class ImpulseResponse:
    """Expected number of particles inside the receiver at each time."""

    times: np.ndarray
    expected: np.ndarray
    nominal: np.ndarray = None
    radii: np.ndarray = None
    n_tx: int = 0

    def at(self, t, rtol=1e-9):
        """Value at one of the stored times (no interpolation)."""
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=rtol, atol=0.0))
        if idx.size == 0:
            raise KeyError(f"impulse response not evaluated at t={t!r}")
        return float(self.expected[idx[0]])

    def __len__(self):
        return len(self.times)


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("time must be > 0")
    return t


def _check_height(z, geom):
    z = np.asarray(z, dtype=float)
    if np.any((z < 0) | (z > geom.height)):
        raise ValueError(f"z must lie in [0, {geom.height}]")
    return z


# --- x direction --------------------------------------------------------------


def pdf_x(x, t, geom, transport):
    """Gaussian x-density: mean d - v_f t, variance 2 D t."""
    t = _check_time(t)
    var = 2.0 * transport.diffusion * t
    mean = geom.tx_distance - transport.flow_velocity * t
    x = np.asarray(x, dtype=float)
    return np.exp(-((x - mean) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)


def _prob_obs_x(t, D, vf, geom):
    xbar = geom.tx_distance - vf * t
    scale = np.sqrt(4.0 * D * t)
    half = geom.receiver_width / 2
    return 0.5 * (erf((xbar + half) / scale) - erf((xbar - half) / scale))


def prob_obs_x(t, geom, transport):
    """Probability that the x-coordinate lies inside |x| <= c_x/2."""
    t = _check_time(t)
    return _prob_obs_x(t, transport.diffusion, transport.flow_velocity, geom)


# --- z equilibrium --------------------------------------------------------------


def _peclet(D, v, length):
    return v * length / D


def _equilibrium_pdf(z, D, v, h):
    pe = _peclet(D, v, h)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        drifted = (v / D) * np.exp(-v * z / D) / -np.expm1(-pe)
    return np.where(pe < ZERO_DRIFT_PECLET, 1.0 / h, drifted)


def _equilibrium_prob(D, v, geom):
    pe_h = _peclet(D, v, geom.height)
    pe_c = _peclet(D, v, geom.receiver_height)
    with np.errstate(divide="ignore", invalid="ignore"):
        drifted = np.expm1(-pe_c) / np.expm1(-pe_h)
    return np.where(pe_h < ZERO_DRIFT_PECLET, geom.receiver_height / geom.height, drifted)


def equilibrium_pdf_z(z, geom, transport):
    """Steady-state z-density (v_m/D) exp(-v_m z / D) / (1 - exp(-v_m h / D))."""
    z = _check_height(z, geom)
    out = _equilibrium_pdf(z, transport.diffusion, transport.drift, geom.height)
    return out[()] if out.ndim == 0 else out


def equilibrium_prob_obs_z(geom, transport):
    """Steady-state probability of 0 <= z <= c_z."""
    return float(_equilibrium_prob(transport.diffusion, transport.drift, geom))


# --- series bookkeeping -----------------------------------------------------------


def _log_prefactor(t, D, v, geom):
    # log of 2 * max_z exp(-u (z - z0) - D u^2 t), the envelope of h * |term_n| / exp(-D s_n^2 t)
    u = v / (2.0 * D)
    return np.log(2.0) + u * geom.release_height - D * u * u * t


def _log_tail(n, t, D, v, geom):
    """log of a bound on h * |sum_{k > n} term_k|, the dimensionless truncation error."""
    alpha = D * (np.pi / geom.height) ** 2 * t
    m = n + 1.0
    # sum_{k>=m} exp(-alpha k^2) <= exp(-alpha m^2) / (1 - exp(-2 alpha m))
    return _log_prefactor(t, D, v, geom) - alpha * m * m - np.log(-np.expm1(-2.0 * alpha * m))


def terms_needed(t, D, v, geom, tolerance):
    """Smallest truncation index whose tail bound is within ``tolerance`` (elementwise)."""
    t, D, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, D, v)))
    alpha = D * (np.pi / geom.height) ** 2 * t
    target = np.log(tolerance)
    excess = np.maximum(_log_prefactor(t, D, v, geom) - target, 0.0)
    n = np.zeros(t.shape)
    for _ in range(8):
        extra = -np.log(-np.expm1(-2.0 * alpha * (n + 1.0)))
        n = np.maximum(np.ceil(np.sqrt((excess + extra) / alpha)) - 1.0, 1.0)
    # polish the estimate to the smallest admissible index
    while True:
        bad = _log_tail(n, t, D, v, geom) > target
        if not bad.any():
            break
        n = np.where(bad, n + 1, n)
    while True:
        slack = (n > 1) & (_log_tail(n - 1, t, D, v, geom) <= target)
        if not slack.any():
            break
        n = np.where(slack, n - 1, n)
    return n.astype(np.int64)


def tail_bound(n_terms, t, transport, geom):
    """Dimensionless truncation error bound after ``n_terms`` terms."""
    return float(np.exp(_log_tail(n_terms, t, transport.diffusion, transport.drift, geom)))


# --- small-time single-wall solution --------------------------------------------


def _single_wall_pdf(z, t, D, v, geom):
    """Exact density for one reflecting wall, the one nearest the release point.

    In wall coordinates y >= 0 with drift mu along +y (Cox and Miller):
    p = phi(y - y0 - mu t) + exp(mu y / D) phi(y + y0 + mu t)
        - (mu / D) exp(mu y / D) Q((y + y0 + mu t) / sqrt(2 D t))
    """
    z0 = geom.release_height
    if z0 >= geom.height / 2:
        y, y0, mu = geom.height - z, geom.height - z0, v
    else:
        y, y0, mu = z, z0, -v
    var = 2.0 * D * t
    gauss = lambda a: np.exp(-(a**2) / (2 * var)) / np.sqrt(2 * np.pi * var)  # noqa: E731
    b = y + y0 + mu * t
    with np.errstate(over="ignore", invalid="ignore"):
        weight = np.exp(mu * y / D)
        image = weight * gauss(b)
        image = np.where(np.isfinite(image), image, 0.0)
        tail = (mu / D) * weight * 0.5 * erfc(b / np.sqrt(2 * var))
        tail = np.where(np.isfinite(tail), tail, 0.0)
    return gauss(y - y0 - mu * t) + image - tail


# --- z transient series --------------------------------------------------------


def _series_pdf(z, t, D, v, geom, n):
    h, z0 = geom.height, geom.release_height
    u = v / (2.0 * D)
    s = np.arange(1, n + 1) * np.pi / h
    lam = s * s + u * u
    norm = np.sqrt(2.0 / (h * lam))
    zn0 = norm * (s * np.cos(s * z0) - u * np.sin(s * z0))
    zz = np.asarray(z, dtype=float)[..., None]
    zn = norm * (s * np.cos(s * zz) - u * np.sin(s * zz))
    expo = -u * (zz - z0) - D * lam * t
    return np.sum(np.exp(expo) * zn * zn0, axis=-1)


def _pdf_z(z, t, D, v, geom, series):
    """Unchecked z-density for scalar t, D, v (z may lie slightly outside [0, h])."""
    n = int(terms_needed(t, D, v, geom, series.tail_tolerance))
    if n > series.n_terms:
        if D * t / geom.height**2 < SMALL_TIME_SWITCH:
            return _single_wall_pdf(np.asarray(z, dtype=float), t, D, v, geom)
        bound = float(np.exp(_log_tail(series.n_terms, t, D, v, geom)))
        raise SeriesNotConverged(t, series.n_terms, bound, series.tail_tolerance)
    return _equilibrium_pdf(np.asarray(z, dtype=float), D, v, geom.height) + _series_pdf(
        z, t, D, v, geom, n
    )


def pdf_z(z, t, geom, transport, series=SeriesControl()):
    """Time-variant z-density on [0, h] for a release at ``geom.release_height``."""
    z = _check_height(z, geom)
    t = float(_check_time(t))
    out = _pdf_z(z, t, transport.diffusion, transport.drift, geom, series)
    return out[()] if np.ndim(out) == 0 else out


def wall_flux_residual(t, geom, transport, series=SeriesControl(), rel_step=1e-5, n_grid=2001):
    """Largest wall flux |D dp/dz + v_m p| relative to (D / h) max_z p.

    The derivative is a central difference of step ``rel_step * h``
    straddling each wall.
    """
    t = float(_check_time(t))
    D, v, h = transport.diffusion, transport.drift, geom.height
    dz = rel_step * h
    peak = np.max(_pdf_z(np.linspace(0.0, h, n_grid), t, D, v, geom, series))
    worst = 0.0
    for wall in (0.0, h):
        p_lo, p_mid, p_hi = _pdf_z(np.array([wall - dz, wall, wall + dz]), t, D, v, geom, series)
        flux = D * (p_hi - p_lo) / (2 * dz) + v * p_mid
        worst = max(worst, abs(flux) / (D / h * peak))
    return worst


def _prob_obs_z(t, D, v, geom, series):
    """Vectorised P(0 <= z <= c_z) over broadcast arrays of t, D, v."""
    t, D, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, D, v)))
    shape = t.shape
    t, D, v = t.ravel(), D.ravel(), v.ravel()
    out = _equilibrium_prob(D, v, geom).astype(float)
    need = terms_needed(t, D, v, geom, series.tail_tolerance)
    ok = need <= series.n_terms

    h, z0, cz = geom.height, geom.release_height, geom.receiver_height
    idx = np.flatnonzero(ok)
    # sorting by term count keeps each block's padding small
    idx = idx[np.argsort(need[idx], kind="stable")]
    start = 0
    while start < idx.size:
        stop = min(start + max(1, _BLOCK // int(need[idx[start]])), idx.size)
        while stop - start > 1 and (stop - start) * int(need[idx[stop - 1]]) > _BLOCK:
            stop = start + (stop - start) // 2
        sel = idx[start:stop]
        n = int(need[sel].max())
        s = np.arange(1, n + 1) * np.pi / h
        uu = (v[sel] / (2.0 * D[sel]))[:, None]
        lam = s * s + uu * uu
        norm2 = 2.0 / (h * lam)
        coeff = norm2 * np.sin(s * cz) * (s * np.cos(s * z0) - uu * np.sin(s * z0))
        expo = -uu * (cz - z0) - D[sel, None] * lam * t[sel, None]
        out[sel] += np.sum(np.exp(expo) * coeff, axis=1)
        start = stop

    for i in np.flatnonzero(~ok):
        if D[i] * t[i] / h**2 < SMALL_TIME_SWITCH:
            out[i] = integrate.quad(
                lambda zz: _single_wall_pdf(zz, t[i], D[i], v[i], geom),
                0.0,
                cz,
                epsabs=1e-14,
                limit=200,
            )[0]
        else:
            bound = float(np.exp(_log_tail(series.n_terms, t[i], D[i], v[i], geom)))
            raise SeriesNotConverged(float(t[i]), series.n_terms, bound, series.tail_tolerance)
    # cancellation can leave a few ulps outside [0, 1]
    return np.clip(out, 0.0, 1.0).reshape(shape)


def prob_obs_z(t, geom, transport, series=SeriesControl()):
    """Probability that the z-coordinate lies inside [0, c_z] at time t."""
    t = _check_time(t)
    out = _prob_obs_z(t, transport.diffusion, transport.drift, geom, series)
    return out[()] if out.ndim == 0 else out


def prob_obs(t, geom, transport, series=SeriesControl(), equilibrium_approx=False):
    """Probability that a released particle is inside the receiver at time t."""
    t = _check_time(t)
    px = prob_obs_x(t, geom, transport)
    if equilibrium_approx:
        return px * equilibrium_prob_obs_z(geom, transport)
    return px * prob_obs_z(t, geom, transport, series)


def _prob_obs_arrays(t, D, v, vf, geom, series, equilibrium_approx):
    px = _prob_obs_x(t, D, vf, geom)
    if equilibrium_approx:
        return px * _equilibrium_prob(D, v, geom)
    return px * _prob_obs_z(t, D, v, geom, series)


def impulse_response(
    times,
    scenario,
    n_tx,
    rng=None,
    series=SeriesControl(),
    equilibrium_approx=False,
    radii=None,
    n_samples=None,
):
    """Expected count of observed particles after releasing ``n_tx`` at t = 0.

    Each particle gets its own (D, v_m) from a sampled core radius and the
    expected count is the sum of the per-particle observation probabilities.
    Pass ``radii`` to evaluate a fixed set of particles (e.g. the set fed to
    the simulator), or ``n_samples`` to average the per-particle probability
    over more radii than ``n_tx`` and rescale to ``n_tx``. With zero size
    spread the nominal response ``n_tx * prob_obs(t)`` is returned exactly.
    """
    times = np.atleast_1d(_check_time(times))
    if n_tx < 0:
        raise ValueError(f"n_tx must be >= 0, got {n_tx}")
    geom = scenario.geometry
    nominal_tp = scenario.transport()
    nominal = n_tx * prob_obs(times, geom, nominal_tp, series, equilibrium_approx)
    if n_tx == 0:
        return ImpulseResponse(times, np.zeros_like(times), nominal, np.empty(0), 0)

    if radii is None:
        if scenario.sizes.sd_radius == 0:
            radii = np.full(n_tx, scenario.sizes.mean_radius)
            return ImpulseResponse(times, nominal.copy(), nominal, radii, n_tx)
        if rng is None:
            raise ValueError("rng is required to sample particle radii")
        radii = physics.sample_radii(scenario.sizes, n_samples or n_tx, rng)
    radii = np.asarray(radii, dtype=float)

    # identical radii share one evaluation
    uniq, inverse = np.unique(radii, return_inverse=True)
    D, v = scenario.transport_arrays(uniq)
    probs = _prob_obs_arrays(
        times[None, :],
        D[:, None],
        v[:, None],
        scenario.fluid.flow_velocity,
        geom,
        series,
        equilibrium_approx,
    )
    counts = np.bincount(inverse, minlength=uniq.size).astype(float)
    expected = (counts @ probs) * (n_tx / radii.size)
    return ImpulseResponse(times, expected, nominal, radii, n_tx)
