"""Machine-checkable property suite behind `twistloop verify`.

Each check returns its measured residual and tolerance so reports stay
machine-readable; checks needing dense embeddings are skipped above a
dimension cutoff rather than silently passed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import invariants as inv
from .basis import co_translate, r2pi_diagonal, sector_table
from .blocks import get_builder
from .model import FERMION, HARDCORE, BoundarySpec, ModelSpec
from .solver import ManifoldRule

EMBED_DIM_MAX = 1500


@dataclass
class CheckResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str = ""
    skipped: bool = False


def _result(name, residual, tol, detail=""):
    return CheckResult(name=name, passed=bool(residual <= tol),
                       residual=float(residual), tolerance=tol, detail=detail)


def _skip(name, why):
    return CheckResult(name=name, passed=True, residual=0.0, tolerance=0.0,
                       detail=why, skipped=True)


def run_suite(spec: ModelSpec, rule: ManifoldRule = None, theta_steps: int = 32,
              seed: int = 0):
    """Run every structural and invariant property check on one model."""
    rule = rule or ManifoldRule(count=1)
    checks = []
    checks.extend(structure_checks(spec))
    checks.extend(gauge_checks(spec))
    checks.extend(flow_checks(spec))
    checks.extend(invariant_checks(spec, rule, theta_steps, seed))
    checks.extend(statistics_checks(spec))
    return checks


def structure_checks(spec: ModelSpec):
    table = sector_table(spec)
    builder = get_builder(spec)
    L = spec.cells
    out = []
    total = sum(table.sector(m).dimension for m in range(L))
    out.append(_result("sector-completeness", abs(total - table.dimension), 0,
                       f"sum dims {total} vs {table.dimension}"))
    orbit_sum = sum(o.period for o in table.orbits)
    out.append(_result("orbit-stabilizer-count", abs(orbit_sum - table.dimension), 0))
    herm = 0.0
    for m in range(L):
        h = builder.block_matrix(m, theta=0.7, phi=spec.phi)
        d = (h - h.getH())
        herm = max(herm, float(np.abs(d.toarray()).max()) if d.nnz else 0.0)
    out.append(_result("block-hermiticity", herm, 1e-12))

    if table.dimension <= EMBED_DIM_MAX:
        Bs = [table.embed(table.sector(m)) for m in range(L)]
        allB = np.hstack(Bs)
        gram = np.abs(allB.conj().T @ allB - np.eye(table.dimension)).max()
        out.append(_result("momentum-basis-orthonormal", gram, 1e-10))
        P = np.zeros((table.dimension, table.dimension), dtype=complex)
        for i, occ in enumerate(table.basis):
            occ2, ph = co_translate(occ, spec)
            P[table.index_of[occ2], i] = ph
        worst = 0.0
        for m in range(L):
            if Bs[m].shape[1]:
                K = 2 * math.pi * m / L
                worst = max(worst, np.abs(P @ Bs[m] - np.exp(-1j * K) * Bs[m]).max())
        out.append(_result("co-translation-eigenvalue", worst, 1e-10))
        H = builder.full_matrix(theta=0.9, gauge="periodic", phi=spec.phi).toarray()
        worst = 0.0
        for m in range(L):
            hK = builder.block_matrix(m, theta=0.9, phi=spec.phi).toarray()
            worst = max(worst, np.abs(Bs[m].conj().T @ H @ Bs[m] - hK).max())
        out.append(_result("block-projection", worst, 1e-10))
        U2inv = np.conj(builder.twist_diagonal(2 * math.pi))
        worst = 0.0
        N = spec.particle_count
        for m in range(L):
            if not Bs[m].shape[1]:
                continue
            unwrapped = m - N
            m2 = unwrapped % L
            w = (m2 - unwrapped) // L
            wrapped = np.exp(-2j * math.pi * w * table.sector(m2).R_beta)
            worst = max(worst, np.abs(U2inv[:, None] * Bs[m] - Bs[m2] * wrapped[None, :]).max())
        out.append(_result("twist-operator-sector-map", worst, 1e-10))
    else:
        out.append(_skip("momentum-basis-orthonormal", "dimension above embed cutoff"))
    return out


def gauge_checks(spec: ModelSpec, thetas=(np.pi / 3, np.pi, 1.5 * np.pi)):
    """Boundary/periodic gauge equivalence and 2*pi periodicity."""
    builder = get_builder(spec)
    out = []
    worst = 0.0
    for th in thetas:
        Hb = builder.full_matrix(theta=th, gauge="boundary", phi=spec.phi)
        Hp = builder.full_matrix(theta=th, gauge="periodic", phi=spec.phi)
        if Hb.shape[0] <= EMBED_DIM_MAX:
            sb = np.linalg.eigvalsh(Hb.toarray())
            sp_ = np.linalg.eigvalsh(Hp.toarray())
            scale = max(1.0, float(np.abs(sb).max()))
            worst = max(worst, float(np.abs(sb - sp_).max()) / scale)
        else:
            from .solver import eig_lowest
            sb = eig_lowest(Hb, 4).values
            sp_ = eig_lowest(Hp, 4).values
            scale = max(1.0, float(np.abs(sb).max()))
            worst = max(worst, float(np.abs(sb - sp_).max()) / scale)
    out.append(_result("gauge-spectral-equivalence", worst, 1e-10))
    H0 = builder.full_matrix(theta=0.0, gauge="boundary", phi=spec.phi)
    H2 = builder.full_matrix(theta=2 * math.pi, gauge="boundary", phi=spec.phi)
    d = (H0 - H2)
    out.append(_result("boundary-2pi-periodicity",
                       float(np.abs(d.toarray()).max()) if d.nnz else 0.0, 1e-12))
    herm = 0.0
    for gauge in ("boundary", "periodic"):
        H = builder.full_matrix(theta=0.77, gauge=gauge, phi=spec.phi)
        dd = H - H.getH()
        herm = max(herm, float(np.abs(dd.toarray()).max()) if dd.nnz else 0.0)
    out.append(_result("full-hermiticity", herm, 1e-12))
    return out


def flow_checks(spec: ModelSpec, theta: float = 0.83):
    """Spectral-flow identities of the Bloch blocks."""
    builder = get_builder(spec)
    L, N = spec.cells, spec.particle_count
    out = []
    worst_e = 0.0
    worst_m = 0.0
    worst_r = 0.0
    for m in range(L):
        lhs = builder.block_matrix(m, theta=theta + 2 * math.pi, phi=spec.phi).toarray()
        rhs = builder.block_matrix(m - N, theta=theta, phi=spec.phi).toarray()
        worst_m = max(worst_m, float(np.abs(lhs - rhs).max()))
        ev_l = np.linalg.eigvalsh(lhs)
        ev_r = np.linalg.eigvalsh(
            builder.block_matrix((m - N) % L, theta=theta, phi=spec.phi).toarray())
        scale = max(1.0, float(np.abs(ev_l).max()))
        worst_e = max(worst_e, float(np.abs(ev_l - ev_r).max()) / scale)
        R = r2pi_diagonal(sector_table(spec).sector(m))
        lhs2 = builder.block_matrix(m + L, theta=theta, phi=spec.phi).toarray()
        rhs2 = (R[:, None] * builder.block_matrix(m, theta=theta, phi=spec.phi).toarray()
                * np.conj(R)[None, :])
        worst_r = max(worst_r, float(np.abs(lhs2 - rhs2).max()))
    out.append(_result("spectral-flow-eigenvalues", worst_e, 1e-10))
    out.append(_result("block-flow-entrywise", worst_m, 1e-10))
    out.append(_result("block-zone-conjugation", worst_r, 1e-10))
    return out


def invariant_checks(spec: ModelSpec, rule: ManifoldRule, theta_steps: int, seed: int):
    """Gauge relation, method agreement and redressing invariance."""
    out = []
    residual = inv.gauge_relation_check(spec, theta_steps=theta_steps, rule=rule, seed=seed)
    out.append(_result("gauge-relation-polarization", residual, 0.05))
    cm = inv.cm_berry_sum(spec, rule, seed=seed)
    mm = inv.m_matrix(spec, rule, seed=seed)
    tpg = inv.berry_phase_tbc(spec, theta_steps=theta_steps, rule=rule,
                              gauge="periodic", seed=seed)
    dm = abs(inv.wrap_phase(cm.value - mm.phase))
    out.append(_result("cm-sum-equals-argdetM", min(dm, abs(dm - math.pi)), 1e-9,
                       "exact identity, mod pi"))
    d2 = abs(inv.wrap_phase(cm.value - tpg.value))
    out.append(_result("cm-sum-vs-tpg", min(d2, abs(d2 - math.pi)), 0.15,
                       "perturbative agreement, mod pi"))

    rng = np.random.default_rng(seed + 17)
    drawn = {}

    def redress(key, n):
        # one unitary per key: re-visits of a sector must redress identically
        if key not in drawn:
            z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            q, r = np.linalg.qr(z)
            drawn[key] = q * np.sign(np.diag(r))
        return drawn[key]

    cm2 = inv.cm_berry_sum(spec, rule, seed=seed, redress=redress)
    tbc = inv.berry_phase_tbc(spec, theta_steps=theta_steps, rule=rule, seed=seed)
    tbc2 = inv.berry_phase_tbc(spec, theta_steps=theta_steps, rule=rule, seed=seed,
                               redress=redress)
    worst = max(abs(inv.wrap_phase(cm2.value - cm.value)),
                abs(inv.wrap_phase(tbc2.value - tbc.value)))
    out.append(_result("gauge-invariance-redress", worst, 1e-9))
    return out


def statistics_checks(spec: ModelSpec):
    """Jordan-Wigner oracle: hard-core PBC spectra match fermion spectra.

    Odd N maps onto periodic fermions, even N onto the anti-periodic seam
    (boundary-gauge twist theta = pi).
    """
    if spec.statistics not in (HARDCORE, FERMION):
        return [_skip("jordan-wigner-equivalence", "bosonic cap > 1")]
    if spec.sites > 14:
        return [_skip("jordan-wigner-equivalence", "dimension above cutoff")]
    hc = replace(spec, statistics=HARDCORE, boundary=BoundarySpec())
    theta = math.pi if spec.particle_count % 2 == 0 else 0.0
    fm = replace(spec, statistics=FERMION)
    Hb = get_builder(hc).full_matrix(theta=0.0, gauge="boundary", phi=spec.phi)
    Hf = get_builder(fm).full_matrix(theta=theta, gauge="boundary", phi=spec.phi)
    sb = np.linalg.eigvalsh(Hb.toarray())
    sf = np.linalg.eigvalsh(Hf.toarray())
    scale = max(1.0, float(np.abs(sb).max()))
    res = float(np.abs(sb - sf).max()) / scale
    return [_result("jordan-wigner-equivalence", res, 1e-10,
                    f"fermion seam theta={theta:.3f}")]
