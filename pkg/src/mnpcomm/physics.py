"""Single-particle physics of superparamagnetic nanoparticles in a viscous fluid.

All quantities are SI. The Boltzmann constant is the exact 2019 SI value
(1.380649e-23 J/K).

Under the saturation assumption used for channel modelling the magnetic force
and drift only need the saturation magnetization; :func:`magnetization` is
kept for checking that assumption against the Langevin curve.
"""

from dataclasses import dataclass, replace

import numpy as np

BOLTZMANN = 1.380649e-23  # J/K

# below this |s| the Langevin function is evaluated from its Taylor series
LANGEVIN_SERIES_CUTOFF = 0.05


@dataclass(frozen=True)
class FluidEnvironment:
    """Carrier fluid: viscosity (kg/m/s), temperature (K), uniform flow speed (m/s).

    The flow is directed along negative x; ``flow_velocity`` is its magnitude.
    """

    viscosity: float = 1e-3
    temperature: float = 300.0
    flow_velocity: float = 0.0

    def __post_init__(self):
        if not self.viscosity > 0:
            raise ValueError(f"viscosity must be > 0, got {self.viscosity}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not self.flow_velocity >= 0:
            raise ValueError(f"flow_velocity must be >= 0, got {self.flow_velocity}")

    @property
    def thermal_energy(self):
        return BOLTZMANN * self.temperature


@dataclass(frozen=True)
class MagnetField:
    """Affine field below the channel: |dB/dz| in T/m, plus |B| in T for curve evaluation."""

    field_gradient: float = 5.0
    field_magnitude: float = 0.0

    def __post_init__(self):
        if not self.field_gradient >= 0:
            raise ValueError(f"field_gradient must be >= 0, got {self.field_gradient}")
        if not self.field_magnitude >= 0:
            raise ValueError(f"field_magnitude must be >= 0, got {self.field_magnitude}")

    @property
    def dBdz(self):
        """Signed gradient; B grows toward the magnet at negative z."""
        return -self.field_gradient


@dataclass(frozen=True)
class ParticleModel:
    """Core-shell particle: magnetic core radius, non-magnetic coating thickness, M_s."""

    core_radius: float = 50e-9
    coating_thickness: float = 1e-9
    saturation_magnetization: float = 5e5

    def __post_init__(self):
        if not self.core_radius > 0:
            raise ValueError(f"core_radius must be > 0, got {self.core_radius}")
        if not self.coating_thickness >= 0:
            raise ValueError(f"coating_thickness must be >= 0, got {self.coating_thickness}")
        if not self.saturation_magnetization > 0:
            raise ValueError(
                f"saturation_magnetization must be > 0, got {self.saturation_magnetization}"
            )

    @property
    def hydrodynamic_radius(self):
        return self.core_radius + self.coating_thickness

    @property
    def core_volume(self):
        return 4.0 / 3.0 * np.pi * self.core_radius**3

    def with_core_radius(self, radius):
        return replace(self, core_radius=radius)


@dataclass(frozen=True)
class SizeDistribution:
    """Log-normal core radius with arithmetic mean and standard deviation (m)."""

    mean_radius: float = 50e-9
    sd_radius: float = 10e-9

    def __post_init__(self):
        if not self.mean_radius > 0:
            raise ValueError(f"mean_radius must be > 0, got {self.mean_radius}")
        if not self.sd_radius >= 0:
            raise ValueError(f"sd_radius must be >= 0, got {self.sd_radius}")

    def lognormal_params(self):
        """(mu, sigma) of log R, matched to the arithmetic mean and sd of R."""
        sigma2 = np.log1p((self.sd_radius / self.mean_radius) ** 2)
        return np.log(self.mean_radius) - sigma2 / 2, np.sqrt(sigma2)


def langevin(s):
    """L(s) = coth(s) - 1/s, odd, with a series branch near zero."""
    s = np.asarray(s, dtype=float)
    small = np.abs(s) < LANGEVIN_SERIES_CUTOFF
    safe = np.where(small, 1.0, s)
    with np.errstate(over="ignore"):
        direct = 1.0 / np.tanh(safe) - 1.0 / safe
    series = s / 3.0 - s**3 / 45.0
    out = np.where(small, series, direct)
    return out[()] if out.ndim == 0 else out


def magnetization(B, particle, env):
    """Mean magnetization along the field, M_s L(V_m M_s B / (k_B T_f))."""
    B = np.asarray(B, dtype=float)
    if np.any(B < 0):
        raise ValueError("field magnitude must be >= 0")
    ms = particle.saturation_magnetization
    arg = particle.core_volume * ms * B / env.thermal_energy
    return ms * langevin(arg)


def magnetic_force(particle, field):
    """z-component of the force (N) at saturation.

    The magnitude along -z is V_m M_s |dB/dz|; the sign is negative because the
    particle is pulled toward increasing B, i.e. toward the magnet.
    """
    return particle.core_volume * particle.saturation_magnetization * field.dBdz


def friction_coefficient(particle, env):
    """Stokes drag 6 pi eta R_h."""
    return 6.0 * np.pi * env.viscosity * particle.hydrodynamic_radius


def drift_velocity(particle, field, env):
    """Magnitude of the magnetophoretic terminal velocity toward the magnet (m/s).

    Equals (2 M_s / 9 eta) R_m^3 / (R_m + R_c) |dB/dz|.
    """
    rm = particle.core_radius
    return (
        2.0
        * particle.saturation_magnetization
        / (9.0 * env.viscosity)
        * rm**3
        / (rm + particle.coating_thickness)
        * field.field_gradient
    )


def diffusion_coefficient(particle, env):
    """Stokes-Einstein diffusion coefficient k_B T_f / (6 pi eta R_h)."""
    return env.thermal_energy / friction_coefficient(particle, env)


def sample_radii(dist, n, rng):
    """Draw ``n`` i.i.d. core radii from the log-normal size distribution."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if dist.sd_radius == 0:
        return np.full(n, dist.mean_radius)
    mu, sigma = dist.lognormal_params()
    return rng.lognormal(mu, sigma, size=n)


def transport_arrays(radii, particle, field, env):
    """Vectorised (D, v_m) for an array of core radii sharing coating and M_s."""
    radii = np.asarray(radii, dtype=float)
    rh = radii + particle.coating_thickness
    D = env.thermal_energy / (6.0 * np.pi * env.viscosity * rh)
    vm = (
        2.0
        * particle.saturation_magnetization
        / (9.0 * env.viscosity)
        * radii**3
        / rh
        * field.field_gradient
    )
    return D, vm
