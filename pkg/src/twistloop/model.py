"""Interacting 1D lattice model specification: AAH hopping, interactions, boundaries.

Conventions (used consistently across the package):

* Sites carry 1-based labels 1..S with S = cells * cell_size; occupation
  arrays are 0-based internally.
* Bond j (1 <= j <= S) connects site j to site j+1, with S+1 identified
  with 1; its hopping amplitude is t_j = t0 * (1 - lam*cos(2*pi*b*j + phi)).
* Momentum bookkeeping is in cell units: co-translation shifts every
  particle by one unit cell (cell_size sites), K = 2*pi*m/cells.
* The twist operator spreads the twist angle per site, exp(i*theta*x/S),
  so a hop of displacement d picks up exp(i*theta*d/S) in the periodic
  gauge and one full loop around the ring accumulates exactly theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .errors import ConfigError

HARDCORE = "hardcore-boson"
BOSON = "boson"
FERMION = "fermion"
STATISTICS = (HARDCORE, BOSON, FERMION)

INTERACTION_KINDS = ("none", "nearest-neighbor", "long-range-cubic")


@dataclass(frozen=True)
class InteractionSpec:
    """Two-body density-density interaction profile."""

    kind: str = "none"
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in INTERACTION_KINDS:
            raise ConfigError(f"unknown interaction kind {self.kind!r}")
        if not math.isfinite(self.strength):
            raise ConfigError("interaction strength must be finite")


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary condition and gauge for the twist angle.

    `condition="periodic"` is equivalent to `twisted` with theta = 0 under
    either gauge.  The gauge tag only matters when theta != 0: "boundary"
    concentrates exp(i*theta) on the seam bond S->1, "periodic" spreads
    exp(i*theta*d/S) over every hop of displacement d.
    """

    condition: str = "periodic"
    gauge: str = "periodic"
    theta: float = 0.0

    def __post_init__(self):
        if self.condition not in ("periodic", "twisted"):
            raise ConfigError(f"unknown boundary condition {self.condition!r}")
        if self.gauge not in ("boundary", "periodic"):
            raise ConfigError(f"unknown gauge {self.gauge!r}")
        if not math.isfinite(self.theta):
            raise ConfigError("twist angle must be finite")

    @property
    def effective_theta(self) -> float:
        return self.theta if self.condition == "twisted" else 0.0


@dataclass(frozen=True)
class ModelSpec:
    """Immutable specification of the interacting lattice model.

    Fields
    ------
    cells : number of unit cells L
    cell_size : sites per cell (= 1/b for the commensurate AAH chain)
    statistics : "hardcore-boson", "boson" (occupation cap `max_occupation`)
        or "fermion"
    particle_count : N
    t0, lam, b, phi : AAH modulation t_j = t0*(1 - lam*cos(2*pi*b*j + phi))
    interaction : density-density interaction profile
    boundary : boundary condition / twist gauge
    """

    cells: int
    cell_size: int
    statistics: str
    particle_count: int
    t0: float = 1.0
    lam: float = 0.0
    b: Fraction = Fraction(0, 1)
    phi: float = 0.0
    interaction: InteractionSpec = field(default_factory=InteractionSpec)
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    max_occupation: int = 1

    def __post_init__(self):
        if self.cells < 1 or self.cell_size < 1:
            raise ConfigError("cells and cell_size must be positive integers")
        if self.statistics not in STATISTICS:
            raise ConfigError(f"unknown statistics {self.statistics!r}")
        if not isinstance(self.b, Fraction):
            object.__setattr__(self, "b", Fraction(self.b).limit_denominator(10**6))
        if (self.b * self.cell_size).denominator != 1:
            raise ConfigError("incommensurate modulation: b*cell_size must be an integer")
        S = self.cells * self.cell_size
        if not 0 <= self.particle_count <= (S if self.cap == 1 else S * self.cap):
            raise ConfigError("particle_count incompatible with statistics cap")
        for name in ("t0", "lam", "phi"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.statistics == BOSON and self.max_occupation < 1:
            raise ConfigError("boson occupation cap must be >= 1")

    @property
    def sites(self) -> int:
        return self.cells * self.cell_size

    @property
    def cap(self) -> int:
        """Per-site occupation cap implied by the statistics."""
        return self.max_occupation if self.statistics == BOSON else 1

    @property
    def filling(self) -> Fraction:
        """Filling factor nu = N / L in lowest terms."""
        return Fraction(self.particle_count, self.cells)

    @property
    def all_hoppings_positive(self) -> bool:
        """Diagnostic flag: |lam| < 1 keeps every t_j strictly positive."""
        return abs(self.lam) < 1.0

    @property
    def theta(self) -> float:
        return self.boundary.effective_theta

    def with_phi(self, phi: float) -> "ModelSpec":
        return replace(self, phi=phi)

    def with_boundary(self, condition="twisted", gauge="periodic", theta=0.0) -> "ModelSpec":
        return replace(self, boundary=BoundarySpec(condition, gauge, theta))

    def structure_key(self):
        """Key identifying everything the Fock basis and orbits depend on."""
        return (self.cells, self.cell_size, self.statistics,
                self.particle_count, self.cap)


def hopping_amplitude(spec: ModelSpec, j: int) -> float:
    """AAH amplitude of bond j (between sites j and j+1, S+1 == 1)."""
    if not 1 <= j <= spec.sites:
        raise ValueError(f"bond index {j} outside 1..{spec.sites}")
    return spec.t0 * (1.0 - spec.lam * math.cos(2.0 * math.pi * float(spec.b) * j + spec.phi))


def signed_displacement(spec: ModelSpec, from_site: int, to_site: int) -> int:
    """Minimal-image signed hop displacement on the ring, in sites."""
    S = spec.sites
    d = (to_site - from_site) % S
    if d > S // 2:
        d -= S
    return d


def twist_phase(spec: ModelSpec, from_site: int, to_site: int) -> complex:
    """Phase attached to a directed hop from_site -> to_site.

    Boundary gauge: exp(+i*theta) when the hop crosses the seam between
    site S and site 1 in the forward direction, conjugate backwards, 1
    otherwise.  Periodic gauge: exp(i*theta*d/S) with d the signed
    minimal-image displacement.  Density-density interaction terms carry
    no phase under either gauge.
    """
    S = spec.sites
    d = signed_displacement(spec, from_site, to_site)
    if abs(d) > S // 2:
        raise ValueError(f"hop displacement {d} exceeds maximum range {S // 2}")
    theta = spec.theta
    if theta == 0.0:
        return 1.0 + 0.0j
    if spec.boundary.gauge == "periodic":
        return complex(math.cos(theta * d / S), math.sin(theta * d / S))
    # boundary gauge: seam crossing test for the straight path of length d
    if d > 0 and from_site + d > S:
        return complex(math.cos(theta), math.sin(theta))
    if d < 0 and from_site + d < 1:
        return complex(math.cos(theta), -math.sin(theta))
    return 1.0 + 0.0j


def ring_distance(spec: ModelSpec, i: int, j: int) -> int:
    """Minimal-image distance between sites i and j (1-based)."""
    S = spec.sites
    d = abs(i - j) % S
    return min(d, S - d)


def interaction_energy(spec: ModelSpec, occ) -> float:
    """Classical (diagonal) interaction energy of an occupation vector."""
    kind = spec.interaction.kind
    if kind == "none" or spec.interaction.strength == 0.0:
        return 0.0
    V = spec.interaction.strength
    S = spec.sites
    if kind == "nearest-neighbor":
        return V * sum(occ[i] * occ[(i + 1) % S] for i in range(S))
    # long-range-cubic, minimal-image convention d = min(|i-j|, S-|i-j|)
    e = 0.0
    support = [i for i in range(S) if occ[i]]
    for a in range(len(support)):
        for b in range(a + 1, len(support)):
            d = ring_distance(spec, support[a] + 1, support[b] + 1)
            e += occ[support[a]] * occ[support[b]] / d**3
    return V * e


def hop_bonds(spec: ModelSpec):
    """Nearest-neighbor bond list [(j, from_site, to_site)] with 1-based sites.

    The assembly engine in `blocks` accepts arbitrary finite-range terms;
    the AAH reference model itself is nearest-neighbor only.
    """
    S = spec.sites
    return [(j, j, j % S + 1) for j in range(1, S + 1)]
