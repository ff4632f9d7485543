"""Channel geometry and the bundle of parameters describing one link."""

from dataclasses import dataclass, field, replace

import numpy as np

from mnpcomm import physics


@dataclass(frozen=True)
class ChannelGeometry:
    """Bounded 2-D channel 0 <= z <= h, TX at (d, z0), RX patch |x| <= c_x/2, z <= c_z."""

    height: float = 10e-6
    tx_distance: float = 1e-3
    receiver_width: float = 0.1e-3
    receiver_height: float = 1e-6
    release_height: float = None  # defaults to the top wall

    def __post_init__(self):
        if self.release_height is None:
            object.__setattr__(self, "release_height", self.height)
        if not self.height > 0:
            raise ValueError(f"height must be > 0, got {self.height}")
        if not 0 < self.receiver_height <= self.height:
            raise ValueError(
                f"receiver_height must lie in (0, height={self.height}], "
                f"got {self.receiver_height}"
            )
        if not self.receiver_width > 0:
            raise ValueError(f"receiver_width must be > 0, got {self.receiver_width}")
        if not self.tx_distance >= 0:
            raise ValueError(f"tx_distance must be >= 0, got {self.tx_distance}")
        if not 0 <= self.release_height <= self.height:
            raise ValueError(
                f"release_height must lie in [0, height={self.height}], got {self.release_height}"
            )


@dataclass(frozen=True)
class TransportParams:
    """Diffusion coefficient, flow speed (toward -x) and magnetic drift speed (toward -z)."""

    diffusion: float
    flow_velocity: float = 0.0
    drift: float = 0.0

    def __post_init__(self):
        if not self.diffusion > 0:
            raise ValueError(f"diffusion must be > 0, got {self.diffusion}")
        if not self.flow_velocity >= 0:
            raise ValueError(f"flow_velocity must be >= 0, got {self.flow_velocity}")
        if not self.drift >= 0:
            raise ValueError(f"drift must be >= 0, got {self.drift}")

    @property
    def u(self):
        """Exponent rate v_m / (2 D) of the drift-removing substitution."""
        return self.drift / (2.0 * self.diffusion)


@dataclass(frozen=True)
class Scenario:
    """Everything needed to evaluate or simulate one link configuration.

    Defaults are the nominal system parameters (water at 300 K, magnetite-like
    particles of 50 nm mean core radius, 5 T/m gradient, 10 um channel).
    """

    geometry: ChannelGeometry = field(default_factory=ChannelGeometry)
    fluid: physics.FluidEnvironment = field(
        default_factory=lambda: physics.FluidEnvironment(flow_velocity=0.5e-3)
    )
    magnet: physics.MagnetField = field(default_factory=physics.MagnetField)
    sizes: physics.SizeDistribution = field(default_factory=physics.SizeDistribution)
    coating_thickness: float = 1e-9
    saturation_magnetization: float = 5e5

    def particle(self, core_radius=None):
        if core_radius is None:
            core_radius = self.sizes.mean_radius
        return physics.ParticleModel(
            core_radius, self.coating_thickness, self.saturation_magnetization
        )

    def transport(self, core_radius=None):
        p = self.particle(core_radius)
        return TransportParams(
            diffusion=physics.diffusion_coefficient(p, self.fluid),
            flow_velocity=self.fluid.flow_velocity,
            drift=physics.drift_velocity(p, self.magnet, self.fluid),
        )

    def transport_arrays(self, radii):
        """(D, v_m) arrays for many core radii."""
        return physics.transport_arrays(radii, self.particle(), self.magnet, self.fluid)

    def arrival_time(self):
        """Time d / v_f at which the flow carries the mean x-position onto the RX."""
        if self.fluid.flow_velocity == 0:
            return np.inf
        return self.geometry.tx_distance / self.fluid.flow_velocity

    def with_gradient(self, gradient):
        return replace(self, magnet=replace(self.magnet, field_gradient=gradient))

    def with_flow(self, flow_velocity):
        return replace(self, fluid=replace(self.fluid, flow_velocity=flow_velocity))

    def with_sizes(self, mean_radius=None, sd_radius=None):
        sizes = self.sizes
        return replace(
            self,
            sizes=physics.SizeDistribution(
                sizes.mean_radius if mean_radius is None else mean_radius,
                sizes.sd_radius if sd_radius is None else sd_radius,
            ),
        )
