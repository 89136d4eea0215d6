"""Hermitian eigensolving and gapped-manifold selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, GaplessError

log = logging.getLogger(__name__)

RESIDUAL_RTOL = 1e-9
ORTHO_TOL = 1e-10
DENSE_DIM = 600          # always dense below this
DENSE_DIM_MAX = 4096     # never dense above this (Lanczos with small k instead)
GAP_TOL_FACTOR = 1e-6    # default gap tolerance, relative to t0
DEGENERACY_FACTOR = 1e-8


@dataclass
class EigenSet:
    """Ascending eigenvalues with column-aligned orthonormal eigenvectors."""

    values: np.ndarray
    vectors: np.ndarray

    @property
    def count(self) -> int:
        return len(self.values)


def _as_operator(matrix):
    m = getattr(matrix, "matrix", matrix)
    return m


def _check_pairs(m, values, vectors, norm_est):
    res = 0.0
    if sp.issparse(m):
        r = m @ vectors - vectors * values[None, :]
    else:
        r = m @ vectors - vectors * values[None, :]
    res = float(np.max(np.linalg.norm(r, axis=0)))
    if res > RESIDUAL_RTOL * max(norm_est, 1e-300):
        raise ConvergenceError(f"eigenpair residual {res:.3e} exceeds "
                               f"{RESIDUAL_RTOL:.1e} * ||h|| = {RESIDUAL_RTOL * norm_est:.3e}")
    g = vectors.conj().T @ vectors
    defect = float(np.max(np.abs(g - np.eye(g.shape[0]))))
    if defect > ORTHO_TOL:
        raise ConvergenceError(f"eigenvector orthonormality defect {defect:.3e}")


def eig_lowest(matrix, k: int, seed: int = 0, dense_dim: int = DENSE_DIM_MAX) -> EigenSet:
    """k lowest eigenpairs of a Hermitian matrix (BlockMatrix, sparse or dense).

    Dense full decomposition is used for small dimensions or when k is a
    large fraction of the matrix; otherwise a Lanczos solve with a
    seed-deterministic starting vector.  Residual and orthonormality are
    verified on every path; failures raise ConvergenceError rather than
    returning unconverged pairs.
    """
    m = _as_operator(matrix)
    dim = m.shape[0]
    if not 1 <= k <= dim:
        raise ValueError(f"requested {k} eigenpairs of a dimension-{dim} matrix")
    norm_est = _norm_estimate(m)
    use_dense = dim <= DENSE_DIM or k >= dim - 1 or (k > dim // 4 and dim <= dense_dim)
    if use_dense:
        dense = m.toarray() if sp.issparse(m) else np.asarray(m)
        values, vectors = np.linalg.eigh(dense)
        values, vectors = values[:k], vectors[:, :k]
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(dim)
        if np.iscomplexobj(m.data if sp.issparse(m) else m):
            v0 = v0 + 1j * rng.standard_normal(dim)
        try:
            values, vectors = spla.eigsh(m.tocsc() if sp.issparse(m) else m,
                                         k=k, which="SA", v0=v0, tol=0)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(
                f"Lanczos did not converge: {len(exc.eigenvalues)}/{k} pairs after "
                f"default iteration budget (dim={dim})") from exc
        order = np.argsort(values)
        values, vectors = values[order], vectors[:, order]
        vectors = _orthonormalize_clusters(values, vectors, norm_est)
    _check_pairs(m, values, vectors, norm_est)
    return EigenSet(values=values, vectors=vectors)


def _orthonormalize_clusters(values, vectors, norm_est):
    """QR-orthonormalize within degenerate clusters (ARPACK may not)."""
    tol = DEGENERACY_FACTOR * max(norm_est, 1.0)
    i = 0
    n = len(values)
    vectors = vectors.copy()
    while i < n:
        j = i + 1
        while j < n and values[j] - values[j - 1] <= tol:
            j += 1
        if j - i > 1:
            q, _ = np.linalg.qr(vectors[:, i:j])
            vectors[:, i:j] = q
        i = j
    return vectors


def _norm_estimate(m) -> float:
    if sp.issparse(m):
        return float(abs(m).sum(axis=1).max())
    return float(np.abs(m).sum(axis=1).max())


@dataclass
class ManifoldMember:
    K_index: object            # sector index, or None for full-space states
    band: int
    energy: float
    vector: np.ndarray


@dataclass
class TargetManifold:
    """Ordered gapped target states with their spectral context."""

    members: list
    gap_below: float
    gap_above: float

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def energies(self) -> np.ndarray:
        return np.array([m.energy for m in self.members])

    @property
    def momenta(self) -> list:
        return [m.K_index for m in self.members]

    def frame(self) -> np.ndarray:
        """Members' vectors as columns (requires a common vector space)."""
        return np.column_stack([m.vector for m in self.members])


@dataclass(frozen=True)
class ManifoldRule:
    """How to pick the target states: fixed count, gap rule, or band indices.

    Exactly one of the three selectors is active.  `bands` are per-sector
    eigenvalue indices (negative indices count from the top of each
    sector), which for full-space spectra select contiguous slices of
    `cells` states per band.
    """

    count: int = 0
    gap_tol: float = 0.0
    bands: tuple = ()

    def __post_init__(self):
        active = (self.count > 0) + (self.gap_tol > 0) + (len(self.bands) > 0)
        if active != 1:
            raise ValueError("exactly one of count / gap_tol / bands must be set")


def select_manifold(eigensets, rule: ManifoldRule, spec=None,
                    sector_indices=None) -> TargetManifold:
    """Pick the target manifold from per-sector (or full-space) eigendata.

    `eigensets` is either one EigenSet (full space) or a list aligned with
    `sector_indices`.  For count/gap rules the lowest states are taken
    globally with ties broken by (energy, K_index, band); when the filling
    N/L = p/q is fractional and a gap rule fired, a manifold size that is
    not a multiple of q is reported as a warning (finite-size effect), not
    an error.
    """
    if isinstance(eigensets, EigenSet):
        eigensets = [eigensets]
        sector_indices = [None]
    pool = []
    for sec_i, es in zip(sector_indices, eigensets):
        for n in range(es.count):
            pool.append((es.values[n], -1 if sec_i is None else sec_i, n, sec_i, es))
    pool.sort(key=lambda t: (t[0], t[1], t[2]))

    if rule.bands:
        members = []
        for sec_i, es in zip(sector_indices, eigensets):
            if sec_i is None:
                members.extend(_band_slices_full(es, rule.bands, spec))
            else:
                for b in rule.bands:
                    n = b % es.count
                    members.append(ManifoldMember(sec_i, n, es.values[n], es.vectors[:, n]))
        members.sort(key=lambda m: (m.energy, m.K_index if m.K_index is not None else -1, m.band))
        gaps = _band_gaps(members, pool)
        return TargetManifold(members=members, gap_below=gaps[0], gap_above=gaps[1])

    if rule.count > 0:
        size = rule.count
        if size > len(pool):
            raise ValueError("manifold size exceeds computed states")
    else:
        size = _gap_rule_size(pool, rule.gap_tol)
        if spec is not None:
            q = spec.filling.denominator
            if q > 1 and size % q != 0:
                log.warning("gap rule selected %d states, not a multiple of q=%d "
                            "(finite-size effect)", size, q)
    if size < len(pool):
        gap_above = pool[size][0] - pool[size - 1][0]
    else:
        gap_above = math.inf
    members = [ManifoldMember(t[3], t[2], t[0], t[4].vectors[:, t[2]]) for t in pool[:size]]
    return TargetManifold(members=members, gap_below=math.inf, gap_above=gap_above)


def _gap_rule_size(pool, gap_tol):
    for i in range(len(pool) - 1):
        if pool[i + 1][0] - pool[i][0] > gap_tol:
            return i + 1
    raise GaplessError(f"no spectral gap above tolerance {gap_tol:g} found")


def _band_slices_full(es: EigenSet, bands, spec):
    """Full-space band selection: contiguous slices of `cells` states."""
    L = spec.cells
    members = []
    nb = es.count // L
    for b in bands:
        bi = b % nb
        for n in range(bi * L, (bi + 1) * L):
            members.append(ManifoldMember(None, n, es.values[n], es.vectors[:, n]))
    return members


def _band_gaps(members, pool):
    """Spectral gaps below and above a band manifold; 0 when interleaved."""
    chosen = {(m.K_index, m.band) for m in members}
    emin = min(m.energy for m in members)
    emax = max(m.energy for m in members)
    below = math.inf
    above = math.inf
    for e, _, n, sec_i, _es in pool:
        if (sec_i, n) in chosen:
            continue
        if e < emin:
            below = min(below, emin - e)
        elif e > emax:
            above = min(above, e - emax)
        else:
            below = above = 0.0
    return below, above
