"""Multi-particle Fock basis, co-translation orbits and c.m. momentum sectors.

The momentum basis attached to an orbit with representative |rep> and
period D is

    |K,beta> = (1/sqrt(C)) sum_{r=0}^{L-1} exp(i*K*(R + r)) * chi_r * |m_r>,

where |m_r> is the canonical Fock state reached after r co-translations,
R is the center-of-mass position of the representative in cell units
(including its integer part, which makes the twist-operator mapping
U_{2pi}^{-1}|K,beta> = |K - N*dK,beta> exact), and chi_r is the
accumulated statistics phase: +1 for bosons, the creation-operator
reordering sign for fermions, times the uniform anti-periodic gauge
factor exp(i*pi*N/L) per step for even fermion number.  The orbit is
admitted at K iff the geometric factor sum_k (exp(i*K*D)*chi_D)^k is
nonzero, which is tested numerically so every statistics shares one code
path; C = L^2/D for admitted orbits (validated against explicit norms in
the test suite).
"""

from __future__ import annotations

import cmath
import hashlib
import math
import struct
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DimensionOverflowError, TwistloopError
from .model import FERMION, ModelSpec

DEFAULT_DIMENSION_LIMIT = 2_000_000
ADMIT_TOL = 1e-9

_CACHE_MAGIC = b"TWLORB\x01"
_STAT_CODE = {"hardcore-boson": 0, "boson": 1, "fermion": 2}


def basis_dimension(spec: ModelSpec) -> int:
    """Number of Fock states for the given statistics (capped stars-and-bars)."""
    S, N, cap = spec.sites, spec.particle_count, spec.cap
    if cap == 1:
        return math.comb(S, N)
    total = 0
    for k in range(0, min(S, N // (cap + 1)) + 1):
        rest = N - k * (cap + 1)
        total += (-1) ** k * math.comb(S, k) * math.comb(rest + S - 1, S - 1)
    return total


def enumerate_basis(spec: ModelSpec, limit: int = DEFAULT_DIMENSION_LIMIT):
    """All occupation tuples in ascending lexicographic order."""
    dim = basis_dimension(spec)
    if dim > limit:
        raise DimensionOverflowError(
            f"Fock dimension {dim} exceeds limit {limit} for S={spec.sites}, N={spec.particle_count}")
    S, N, cap = spec.sites, spec.particle_count, spec.cap
    if cap == 1:
        states = []
        for pos in combinations(range(S), N):
            occ = [0] * S
            for p in pos:
                occ[p] = 1
            states.append(tuple(occ))
    else:
        states = []

        def fill(site, remaining, partial):
            if site == S:
                if remaining == 0:
                    states.append(tuple(partial))
                return
            lo = max(0, remaining - cap * (S - site - 1))
            hi = min(cap, remaining)
            for n in range(lo, hi + 1):
                partial.append(n)
                fill(site + 1, remaining - n, partial)
                partial.pop()

        fill(0, N, [])
    states.sort()
    if len(states) != dim:
        raise TwistloopError("basis enumeration does not match the counting formula")
    return states


def positions(occ) -> tuple:
    """Ascending 1-based particle positions, repeated by occupation."""
    out = []
    for i, n in enumerate(occ):
        out.extend([i + 1] * n)
    return tuple(out)


def cm_position(occ, spec: ModelSpec) -> float:
    """Center-of-mass position in cell units, sum(x_j) / (N * cell_size)."""
    xs = positions(occ)
    if not xs:
        return 0.0
    return sum(xs) / (len(xs) * spec.cell_size)


def _shift(occ, spec: ModelSpec):
    """One co-translation: every particle moves by cell_size sites.

    Returns (shifted occupation, fermionic reordering sign).  The sign is
    the parity of the permutation restoring ascending creation-operator
    order after wrapped operators are carried across the seam; +1 for any
    bosonic statistics.
    """
    S, cs = spec.sites, spec.cell_size
    shifted = occ[-cs:] + occ[:-cs]
    if spec.statistics != FERMION:
        return shifted, 1
    xs = positions(occ)
    new = [((x - 1 + cs) % S) + 1 for x in xs]
    inversions = 0
    for a in range(len(new)):
        for b in range(a + 1, len(new)):
            if new[a] > new[b]:
                inversions += 1
    return shifted, (-1) ** (inversions % 2)


def antiperiodic_gauge_step(spec: ModelSpec) -> complex:
    """Per-step gauge phase exp(i*pi*N/L) from the even-N fermion dressing.

    The uniform factor exp(i*pi*x/S) attached to the momentum basis for
    even fermion number contributes this constant phase per co-translation
    (site-count convention for the dressing length).
    """
    if spec.statistics == FERMION and spec.particle_count % 2 == 0:
        return cmath.exp(1j * math.pi * spec.particle_count / spec.cells)
    return 1.0 + 0.0j


def co_translate(occ, spec: ModelSpec):
    """Co-translation with its full phase (reordering sign times gauge factor)."""
    shifted, sign = _shift(occ, spec)
    return shifted, sign * antiperiodic_gauge_step(spec)


@dataclass(frozen=True)
class OrbitClass:
    """One co-translation orbit.

    `boundary_phase` is the bare statistics sign accumulated over one orbit
    cycle of `period` steps (always +1 for bosons); `chi` additionally
    carries the even-N fermion gauge factor per member and is what enters
    momentum-basis coefficients.  `cm_full` keeps the integer part of the
    representative's c.m. position, `R_beta` its fractional part.
    """

    representative: tuple
    period: int
    R_beta: float
    boundary_phase: complex
    members: tuple          # canonical Fock states m_0 .. m_{D-1}
    chi: tuple              # accumulated phases chi_0 .. chi_{D-1}
    cm_full: float


def _walk_orbit(rep, spec: ModelSpec):
    """Follow co-translations from `rep` until it returns; collect phases."""
    gauge = antiperiodic_gauge_step(spec)
    members = [rep]
    chi = [1.0 + 0.0j]
    sign_acc = 1
    state = rep
    phase = 1.0 + 0.0j
    for r in range(1, spec.cells + 1):
        state, sign = _shift(state, spec)
        sign_acc *= sign
        phase *= sign * gauge
        if state == rep:
            return members, chi, r, sign_acc, phase
        members.append(state)
        chi.append(phase)
    raise TwistloopError("orbit did not close after L co-translations")


def decompose_orbits(basis, spec: ModelSpec):
    """Seed-state orbit decomposition over a lexicographically sorted basis.

    Iterating the sorted basis and seeding each orbit at its first unvisited
    state makes every representative the lexicographic minimum of its orbit.
    """
    L = spec.cells
    visited = set()
    orbits = []
    for occ in basis:
        if occ in visited:
            continue
        members, chi, D, sign_cycle, chi_D = _walk_orbit(occ, spec)
        if L % D != 0:
            raise TwistloopError("orbit period does not divide the cell count")
        visited.update(members)
        R = cm_position(occ, spec)
        orbits.append(OrbitClass(
            representative=occ, period=D, R_beta=R % 1.0,
            boundary_phase=complex(sign_cycle), members=tuple(members),
            chi=tuple(chi), cm_full=R))
    return orbits


def orbit_cycle_phase(orbit: OrbitClass, spec: ModelSpec) -> complex:
    """Dressed closure phase chi_D of the orbit (sign cycle times gauge^D)."""
    return orbit.boundary_phase * antiperiodic_gauge_step(spec) ** orbit.period


@dataclass
class MomentumSector:
    """Basis data of one c.m. momentum sector K = 2*pi*K_index/L."""

    K_index: int
    spec: ModelSpec
    orbit_ids: np.ndarray       # indices into the global orbit list
    orbits: list                # admitted OrbitClass objects, in orbit_id order
    norms: np.ndarray           # C_beta = L^2 / D
    R_beta: np.ndarray
    R_full: np.ndarray
    periods: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.orbits)

    @property
    def K(self) -> float:
        return 2.0 * math.pi * self.K_index / self.spec.cells

    def local_index(self):
        """Map global orbit id -> sector-local index."""
        return {int(g): i for i, g in enumerate(self.orbit_ids)}


def sector_admits(orbit: OrbitClass, K_index: int, spec: ModelSpec) -> bool:
    """Numeric K-compatibility: the assembled momentum vector has nonzero norm."""
    L = spec.cells
    D = orbit.period
    z = cmath.exp(2j * math.pi * K_index * D / L) * orbit_cycle_phase(orbit, spec)
    geo = sum(z**k for k in range(L // D))
    return abs(geo) > ADMIT_TOL


def build_sector(K_index: int, orbits, spec: ModelSpec) -> MomentumSector:
    """Collect the orbits admitted at K and their normalization factors."""
    L = spec.cells
    if not 0 <= K_index < L:
        raise ValueError(f"K_index {K_index} outside 0..{L - 1}")
    ids, kept = [], []
    for g, orb in enumerate(orbits):
        if sector_admits(orb, K_index, spec):
            ids.append(g)
            kept.append(orb)
    return MomentumSector(
        K_index=K_index, spec=spec,
        orbit_ids=np.asarray(ids, dtype=np.int64), orbits=kept,
        norms=np.asarray([L * L / o.period for o in kept], dtype=float),
        R_beta=np.asarray([o.R_beta for o in kept], dtype=float),
        R_full=np.asarray([o.cm_full for o in kept], dtype=float),
        periods=np.asarray([o.period for o in kept], dtype=np.int64))


def r2pi_diagonal(sector: MomentumSector, p: int = 1) -> np.ndarray:
    """Diagonal of R_{2*pi*p}: entries exp(-2j*pi*p*R_beta) in sector order."""
    return np.exp(-2j * math.pi * p * sector.R_beta)


class SectorTable:
    """Basis, orbits and all momentum sectors for one model structure.

    Construction depends only on (cells, cell_size, statistics, N, cap);
    modulation, interaction and boundary parameters never enter.  Instances
    are immutable after construction and safe to share across workers.
    """

    def __init__(self, spec: ModelSpec, limit: int = DEFAULT_DIMENSION_LIMIT):
        self.spec = spec
        self.basis = enumerate_basis(spec, limit=limit)
        self.index_of = {occ: i for i, occ in enumerate(self.basis)}
        self.orbits = decompose_orbits(self.basis, spec)
        self.orbit_of = {}
        for g, orb in enumerate(self.orbits):
            for r, m in enumerate(orb.members):
                self.orbit_of[m] = (g, r)
        self.sectors = [build_sector(m, self.orbits, spec) for m in range(spec.cells)]

    @property
    def dimension(self) -> int:
        return len(self.basis)

    def sector(self, K_index: int) -> MomentumSector:
        return self.sectors[K_index % self.spec.cells]

    def embed(self, sector: MomentumSector) -> np.ndarray:
        """Dense (dim x sector.dimension) matrix of momentum basis columns.

        Intended for small systems: validation oracles and tests.
        """
        L = self.spec.cells
        K = sector.K
        B = np.zeros((self.dimension, sector.dimension), dtype=complex)
        for col, orb in enumerate(sector.orbits):
            D = orb.period
            z = cmath.exp(1j * K * D) * orbit_cycle_phase(orb, self.spec)
            geo = sum(z**k for k in range(L // D))
            pref = geo / math.sqrt(sector.norms[col])
            for r, m in enumerate(orb.members):
                B[self.index_of[m], col] += pref * cmath.exp(1j * K * (orb.cm_full + r)) * orb.chi[r]
        return B


_TABLE_CACHE: dict = {}
_TABLE_CACHE_MAX = 8


def sector_table(spec: ModelSpec, limit: int = DEFAULT_DIMENSION_LIMIT) -> SectorTable:
    """Cached SectorTable lookup keyed on the model's structural fields."""
    key = spec.structure_key()
    table = _TABLE_CACHE.get(key)
    if table is None:
        table = SectorTable(spec, limit=limit)
        if len(_TABLE_CACHE) >= _TABLE_CACHE_MAX:
            _TABLE_CACHE.pop(next(iter(_TABLE_CACHE)))
        _TABLE_CACHE[key] = table
    return table


def orbit_cache_key(spec: ModelSpec) -> str:
    raw = repr((spec.sites, spec.particle_count, spec.statistics, spec.cap, spec.cell_size))
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def save_orbits(path, orbits, spec: ModelSpec):
    """Write the orbit decomposition as a versioned packed binary record."""
    S = spec.sites
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<IIIII", S, spec.particle_count,
                             _STAT_CODE[spec.statistics], spec.cap, spec.cell_size))
        fh.write(struct.pack("<Q", len(orbits)))
        for orb in orbits:
            fh.write(bytes(orb.representative))
            fh.write(struct.pack("<Ib", orb.period, int(orb.boundary_phase.real)))


def load_orbits(path, spec: ModelSpec):
    """Load a cached orbit decomposition, rebuilding members and phases.

    Returns None when the file does not match this model structure or
    carries a different format version.
    """
    S = spec.sites
    try:
        with open(path, "rb") as fh:
            if fh.read(len(_CACHE_MAGIC)) != _CACHE_MAGIC:
                return None
            header = struct.unpack("<IIIII", fh.read(20))
            if header != (S, spec.particle_count, _STAT_CODE[spec.statistics],
                          spec.cap, spec.cell_size):
                return None
            (count,) = struct.unpack("<Q", fh.read(8))
            orbits = []
            for _ in range(count):
                rep = tuple(fh.read(S))
                period, sign = struct.unpack("<Ib", fh.read(5))
                members, chi, D, sign_cycle, _ = _walk_orbit(rep, spec)
                if D != period or sign_cycle != sign:
                    return None
                R = cm_position(rep, spec)
                orbits.append(OrbitClass(
                    representative=rep, period=D, R_beta=R % 1.0,
                    boundary_phase=complex(sign_cycle), members=tuple(members),
                    chi=tuple(chi), cm_full=R))
    except (OSError, struct.error):
        return None
    return orbits
