"""Particle-based Monte Carlo simulation of the channel.

Particles move in discrete steps of ``dt``:

    x <- x - v_f dt + sqrt(2 D dt) N1
    z <- z - v_m dt + sqrt(2 D dt) N2

with reflecting walls at z = 0 and z = h and a transparent receiver that
only counts particles. Two wall treatments are available:

``"bridge"`` (default)
    Reflects the continuous path inside each step. Conditional on its end
    points a step of drifted Brownian motion is a Brownian bridge, so its
    extremum can be sampled exactly and the Skorokhod reflection applied.
    This has no time-step bias at the walls.
``"fold"``
    Mirrors the end point back into [0, h] (z -> -z, z -> 2h - z). Simple, but
    with a drift toward the wall it under-populates the wall layer by an
    amount that grows like sqrt(dt).

The x-motion is unbounded and linear, so the sum of its Gaussian increments
between two sampling instants is drawn in one go; this is exact in law for
the stepped walk. A particle's z-walk is only advanced up to the last
sampling instant at which its x-coordinate is inside the receiver, since
later positions cannot change any count.

Random streams: realization ``r`` of a run seeded with ``seed`` uses a PCG64
generator from ``SeedSequence(seed, spawn_key=(r,))``, and particles consume
it in index order, so results do not depend on how realizations are spread
over workers.
"""

from dataclasses import dataclass, field

import numba
import numpy as np
from joblib import Parallel, delayed

from mnpcomm import physics

BOUNDARIES = ("bridge", "fold")
# skip the bridge draw when the crossing probability exp(-2ab/var) is below exp(-40)
_BRIDGE_CUTOFF = 40.0


@dataclass(frozen=True)
class SimConfig:
    time_step: float = 2e-3
    n_realizations: int = 1000
    seed: int = 0
    record_interval: int = 1
    boundary: str = "bridge"
    n_jobs: int = 1

    def __post_init__(self):
        if not self.time_step > 0:
            raise ValueError(f"time_step must be > 0, got {self.time_step}")
        if self.n_realizations < 1:
            raise ValueError(f"n_realizations must be >= 1, got {self.n_realizations}")
        if self.record_interval < 1:
            raise ValueError(f"record_interval must be >= 1, got {self.record_interval}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass
class ParticleState:
    x: float
    z: float
    core_radius: float
    diffusion: float
    drift: float

    @classmethod
    def released(cls, scenario, core_radius=None):
        geom = scenario.geometry
        if core_radius is None:
            core_radius = scenario.sizes.mean_radius
        tp = scenario.transport(core_radius)
        return cls(geom.tx_distance, geom.release_height, core_radius, tp.diffusion, tp.drift)


@dataclass
class ObservationSeries:
    sample_times: np.ndarray
    mean_count: np.ndarray
    stderr_count: np.ndarray
    counts: np.ndarray = field(default=None, repr=False)


def realization_rng(seed, realization):
    """Independent generator for one realization of a seeded run."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(realization,))))


def stream_rng(seed, *key):
    """Generator for an auxiliary stream (e.g. a shared particle set).

    Keys of length two or more never collide with realization streams.
    """
    if len(key) < 2:
        raise ValueError("auxiliary stream keys need at least two components")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def fold_into(z, height):
    """Mirror positions into [0, height] by repeated reflection at both walls."""
    w = np.mod(z, 2.0 * height)
    return np.where(w > height, 2.0 * height - w, w)


@numba.njit(cache=True, inline="always")
def _bridge_shift(a, b, var, u):
    # minimum of a Brownian bridge from a to b; returns the amount to lift b by
    m = 0.5 * (a + b - np.sqrt((b - a) ** 2 - 2.0 * var * np.log(u)))
    return -m if m < 0.0 else 0.0


@numba.njit(cache=True, inline="always")
def _reflect(a, b, var, height, rng, bridge):
    if bridge:
        if b <= 0.0 or 2.0 * a * b < _BRIDGE_CUTOFF * var:
            b += _bridge_shift(a, b, var, 1.0 - rng.random())
        at = height - a
        bt = height - b
        if bt <= 0.0 or 2.0 * at * bt < _BRIDGE_CUTOFF * var:
            b -= _bridge_shift(at, bt, var, 1.0 - rng.random())
    if b < 0.0 or b > height:
        w = b % (2.0 * height)
        b = 2.0 * height - w if w > height else w
    return b


@numba.njit(cache=True)
def _walk_z(rng, z_start, drift_step, sigma, height, first_step, last_step, record_steps, out, bridge):
    """Advance each particle's z from ``first_step`` to ``last_step``.

    ``out[i, j]`` receives particle i's position at global step
    ``record_steps[j]`` whenever that step lies in its active range.
    """
    n_rec = record_steps.size
    for i in range(z_start.size):
        z = z_start[i]
        step = first_step[i]
        last = last_step[i]
        d = drift_step[i]
        s = sigma[i]
        var = s * s
        j = np.searchsorted(record_steps, step)
        while j < n_rec and record_steps[j] == step:
            out[i, j] = z
            j += 1
        next_rec = record_steps[j] if j < n_rec else -1
        for step in range(first_step[i] + 1, last + 1):
            z = _reflect(z, z - d + s * rng.standard_normal(), var, height, rng, bridge)
            if step == next_rec:
                while j < n_rec and record_steps[j] == step:
                    out[i, j] = z
                    j += 1
                next_rec = record_steps[j] if j < n_rec else -1


def step_particle(p, dt, scenario, rng, boundary="fold"):
    """One time step of a single particle; returns the new state."""
    geom = scenario.geometry
    sigma = np.sqrt(2.0 * p.diffusion * dt)
    nx, nz = rng.standard_normal(2)
    x = p.x - scenario.fluid.flow_velocity * dt + sigma * nx
    b = p.z - p.drift * dt + sigma * nz
    if boundary == "bridge":
        var = sigma * sigma
        if b <= 0.0 or 2.0 * p.z * b < _BRIDGE_CUTOFF * var:
            b += _bridge_shift(p.z, b, var, 1.0 - rng.random())
        at, bt = geom.height - p.z, geom.height - b
        if bt <= 0.0 or 2.0 * at * bt < _BRIDGE_CUTOFF * var:
            b -= _bridge_shift(at, bt, var, 1.0 - rng.random())
    elif boundary != "fold":
        raise ValueError(f"unknown boundary {boundary!r}")
    z = float(fold_into(b, geom.height))
    return ParticleState(x, z, p.core_radius, p.diffusion, p.drift)


def walk_z(rng, z_start, drift, diffusion, dt, height, n_steps, boundary="bridge", record_steps=None):
    """z-trajectories of a batch starting together at step 0.

    Returns (n_particles, n_steps + 1) positions, or only the columns listed
    in ``record_steps`` when given.
    """
    z_start, drift, diffusion = (
        np.ascontiguousarray(a, dtype=float) for a in np.broadcast_arrays(z_start, drift, diffusion)
    )
    z_start, drift, diffusion = z_start.ravel(), drift.ravel(), diffusion.ravel()
    n = z_start.size
    if record_steps is None:
        record_steps = np.arange(n_steps + 1, dtype=np.int64)
    record_steps = np.asarray(record_steps, dtype=np.int64)
    if np.any(np.diff(record_steps) <= 0) or np.any((record_steps < 0) | (record_steps > n_steps)):
        raise ValueError("record_steps must be increasing and lie in [0, n_steps]")
    out = np.full((n, record_steps.size), np.nan)
    _walk_z(
        rng,
        z_start,
        drift * dt,
        np.sqrt(2.0 * diffusion * dt),
        float(height),
        np.zeros(n, np.int64),
        np.full(n, n_steps, np.int64),
        record_steps,
        out,
        boundary == "bridge",
    )
    return out


def release_batch(rng, scenario, n, release_step, record_steps, dt, boundary, radii=None):
    """Release ``n`` particles at the TX and report which sit in the receiver.

    ``release_step`` is one step index for the whole batch or one per
    particle. Returns a boolean array (n, len(record_steps)); entries for
    record steps before a particle's release are False. Draw order: radii,
    x increments, z walk.
    """
    geom = scenario.geometry
    record_steps = np.asarray(record_steps, dtype=np.int64)
    if radii is None:
        radii = physics.sample_radii(scenario.sizes, n, rng)
    D, v = scenario.transport_arrays(radii)
    n = D.size
    release = np.broadcast_to(np.asarray(release_step, dtype=np.int64), (n,))
    inside = np.zeros((n, record_steps.size), dtype=bool)
    if n == 0 or record_steps.size == 0:
        return inside
    active = record_steps[None, :] >= release[:, None]
    if not active.any():
        return inside

    elapsed = np.maximum(record_steps[None, :] - release[:, None], 0) * dt
    gaps = np.diff(elapsed, axis=1, prepend=0.0)
    noise = rng.standard_normal((n, record_steps.size))
    x = (
        geom.tx_distance
        - scenario.fluid.flow_velocity * elapsed
        + np.cumsum(np.sqrt(2.0 * D[:, None] * gaps) * noise, axis=1)
    )
    in_x = (np.abs(x) <= geom.receiver_width / 2) & active

    has_any = in_x.any(axis=1)
    if has_any.any():
        sel = np.flatnonzero(has_any)
        last = record_steps.size - 1 - np.argmax(in_x[sel, ::-1], axis=1)
        z = np.full((sel.size, record_steps.size), np.nan)
        _walk_z(
            rng,
            np.full(sel.size, float(geom.release_height)),
            v[sel] * dt,
            np.sqrt(2.0 * D[sel] * dt),
            float(geom.height),
            np.ascontiguousarray(release[sel]),
            record_steps[last],
            record_steps,
            z,
            boundary == "bridge",
        )
        with np.errstate(invalid="ignore"):
            in_z = z <= geom.receiver_height
        inside[sel] = in_x[sel] & in_z
    return inside


def _impulse_counts(scenario, n_tx, sim, record_steps, radii, realizations):
    rows = []
    for r in realizations:
        rng = realization_rng(sim.seed, r)
        inside = release_batch(rng, scenario, n_tx, 0, record_steps, sim.time_step, sim.boundary, radii)
        rows.append(inside.sum(axis=0))
    return np.array(rows, dtype=np.int64).reshape(len(rows), len(record_steps))


def _chunks(n, n_jobs):
    bounds = np.linspace(0, n, max(1, min(n, 4 * n_jobs)) + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def simulate_impulse(scenario, n_tx, sim, horizon, record_times=None, radii=None, keep_counts=False):
    """Count particles in the receiver after a release of ``n_tx`` at t = 0.

    Sampling instants default to every ``record_interval`` steps up to
    ``horizon``; explicit ``record_times`` are snapped to the nearest step.
    With ``radii`` given, every realization uses that same particle set
    (paired with :func:`mnpcomm.analytic.impulse_response`); otherwise radii
    are redrawn per realization.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    if n_tx < 0:
        raise ValueError(f"n_tx must be >= 0, got {n_tx}")
    dt = sim.time_step
    if record_times is None:
        record_steps = np.arange(sim.record_interval, int(np.floor(horizon / dt + 1e-9)) + 1, sim.record_interval)
    else:
        record_steps = np.unique(np.rint(np.asarray(record_times, float) / dt).astype(np.int64))
        record_steps = record_steps[record_steps * dt <= horizon + 1e-12]
    if radii is not None:
        radii = np.asarray(radii, dtype=float)
        n_tx = radii.size

    chunks = _chunks(sim.n_realizations, sim.n_jobs)
    if sim.n_jobs == 1:
        parts = [_impulse_counts(scenario, n_tx, sim, record_steps, radii, c) for c in chunks]
    else:
        parts = Parallel(n_jobs=sim.n_jobs)(
            delayed(_impulse_counts)(scenario, n_tx, sim, record_steps, radii, c) for c in chunks
        )
    counts = np.concatenate(parts, axis=0)
    n = counts.shape[0]
    mean = counts.mean(axis=0)
    stderr = counts.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return ObservationSeries(record_steps * dt, mean, stderr, counts if keep_counts else None)


def sample_steps(n_symbols, symbol_duration, sample_offset, dt):
    return np.rint((np.arange(n_symbols) * symbol_duration + sample_offset) / dt).astype(np.int64)


def simulate_sequence(bits, link, scenario, sim, rng=None):
    """Per-symbol receiver counts for an OOK sequence.

    A fresh batch of ``link.n_tx`` particles with independently drawn radii
    is released at the step nearest k T for every b[k] = 1; all batches move
    concurrently and the receiver counts at the step nearest k T + t0.
    """
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size == 0:
        raise ValueError("bits must be non-empty")
    if rng is None:
        rng = realization_rng(sim.seed, 0)
    dt = sim.time_step
    t0 = link.resolved_sample_offset(scenario)
    samples = sample_steps(bits.size, link.symbol_duration, t0, dt)
    ones = np.flatnonzero(bits)
    release = np.repeat(np.rint(ones * link.symbol_duration / dt).astype(np.int64), link.n_tx)
    inside = release_batch(rng, scenario, release.size, release, samples, dt, sim.boundary)
    return inside.sum(axis=0).astype(np.int64)
