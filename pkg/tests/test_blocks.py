import math

import numpy as np
import pytest

from twistloop.basis import sector_table
from twistloop.blocks import (apply_hop, build_block, build_full, get_builder,
                              twist_operator_diagonal)
from twistloop.model import InteractionSpec

from conftest import aah

THETA = 0.83
PHI = 0.41


def full_dense(spec, theta=0.0, gauge="boundary"):
    return build_full(spec, theta=theta, gauge=gauge).dense()


def test_single_particle_uniform_ring_band():
    # one cell of three sites: h(K=0) spectrum is the three-site ring band
    spec = aah(cells=1, particles=1, lam=0.0)
    h = build_block(spec, 0).dense()
    expected = sorted(-2.0 * math.cos((0.0 + 2 * math.pi * m) / 3) for m in range(3))
    assert np.allclose(np.linalg.eigvalsh(h), expected, atol=1e-12)


def test_interaction_only_block_is_diagonal():
    spec = aah(cells=3, particles=2, t0=0.0,
               interaction=InteractionSpec("nearest-neighbor", 4.0))
    for theta in (0.0, 1.1):
        h = build_block(spec, 1, theta=theta).dense()
        assert np.abs(h - np.diag(np.diag(h))).max() < 1e-14
        h0 = build_block(spec, 1, theta=0.0).dense()
        assert np.abs(h - h0).max() < 1e-14


@pytest.mark.parametrize("spec", [
    aah(cells=3, particles=2, interaction=InteractionSpec("nearest-neighbor", 2.0)),
    aah(cells=3, particles=3, statistics="fermion",
        interaction=InteractionSpec("long-range-cubic", 1.5)),
    aah(cells=3, particles=2, statistics="fermion"),
    aah(cells=2, particles=3, statistics="boson", cap=2,
        interaction=InteractionSpec("nearest-neighbor", 1.0)),
])
def test_block_union_matches_full_spectrum(spec):
    spec = spec.with_phi(PHI)
    table = sector_table(spec)
    block_eigs = np.sort(np.concatenate(
        [np.linalg.eigvalsh(build_block(spec, m).dense()) for m in range(spec.cells)]))
    full_eigs = np.sort(np.linalg.eigvalsh(full_dense(spec)))
    scale = max(1.0, np.abs(full_eigs).max())
    assert np.abs(block_eigs - full_eigs).max() / scale < 1e-10


def test_block_equals_projected_full():
    # the representative-based assembly against the naive all-members sum
    spec = aah(cells=3, particles=2, statistics="fermion", phi=PHI,
               interaction=InteractionSpec("nearest-neighbor", 1.2))
    table = sector_table(spec)
    H = full_dense(spec, theta=THETA, gauge="periodic")
    for m in range(spec.cells):
        B = table.embed(table.sector(m))
        h = build_block(spec, m, theta=THETA).dense()
        assert np.abs(B.conj().T @ H @ B - h).max() < 1e-10


def test_gauges_identical_at_zero_twist():
    spec = aah(cells=3, particles=2, phi=PHI)
    assert np.abs(full_dense(spec, 0.0, "boundary")
                  - full_dense(spec, 0.0, "periodic")).max() == 0.0


@pytest.mark.parametrize("theta", [math.pi / 3, math.pi, 1.5 * math.pi])
def test_gauge_spectra_agree(theta):
    spec = aah(cells=3, particles=2, phi=PHI,
               interaction=InteractionSpec("long-range-cubic", 2.0))
    sb = np.linalg.eigvalsh(full_dense(spec, theta, "boundary"))
    sp = np.linalg.eigvalsh(full_dense(spec, theta, "periodic"))
    scale = max(1.0, np.abs(sb).max())
    assert np.abs(sb - sp).max() / scale < 1e-10


def test_boundary_gauge_2pi_periodic():
    spec = aah(cells=3, particles=2, phi=PHI)
    assert np.abs(full_dense(spec, 2 * math.pi, "boundary")
                  - full_dense(spec, 0.0, "boundary")).max() < 1e-12


def test_twist_operator_identity_and_inverse():
    spec = aah(cells=3, particles=2)
    assert np.allclose(twist_operator_diagonal(spec, 0.0), 1.0)
    u = twist_operator_diagonal(spec, 1.7)
    assert np.allclose(u * twist_operator_diagonal(spec, -1.7), 1.0)


def test_twist_unitary_equivalence():
    spec = aah(cells=3, particles=2, phi=PHI)
    u = twist_operator_diagonal(spec, THETA)
    Hb = full_dense(spec, THETA, "boundary")
    Hp = full_dense(spec, THETA, "periodic")
    assert np.abs((u[:, None] * Hb) * np.conj(u)[None, :] - Hp).max() < 1e-10


def test_twist_operator_maps_sectors():
    # U_{2pi}^{-1} B_K = B_{K - N dK} with zone-wrap phases on R_beta
    spec = aah(cells=3, particles=2, statistics="fermion")
    table = sector_table(spec)
    N, L = 2, 3
    u_inv = np.conj(twist_operator_diagonal(spec, 2 * math.pi))
    for m in range(L):
        B = table.embed(table.sector(m))
        if not B.shape[1]:
            continue
        unwrapped = m - N
        m2 = unwrapped % L
        w = (m2 - unwrapped) // L
        wrap = np.exp(-2j * math.pi * w * table.sector(m2).R_beta)
        target = table.embed(table.sector(m2)) * wrap[None, :]
        assert np.abs(u_inv[:, None] * B - target).max() < 1e-10


def test_spectral_flow_identity():
    # eigenvalues of h(K, theta + 2pi) equal those of h(K - N dK, theta)
    spec = aah(cells=3, particles=2, phi=PHI)
    for m in range(3):
        lhs = np.linalg.eigvalsh(build_block(spec, m, theta=THETA + 2 * math.pi).dense())
        rhs = np.linalg.eigvalsh(build_block(spec, (m - 2) % 3, theta=THETA).dense())
        scale = max(1.0, np.abs(lhs).max())
        assert np.abs(lhs - rhs).max() / scale < 1e-10


def test_block_flow_entrywise_and_zone_conjugation():
    from twistloop.basis import r2pi_diagonal
    spec = aah(cells=3, particles=2, phi=PHI)
    builder = get_builder(spec)
    for m in range(3):
        lhs = builder.block_matrix(m, theta=THETA + 2 * math.pi, phi=PHI).toarray()
        rhs = builder.block_matrix(m - 2, theta=THETA, phi=PHI).toarray()
        assert np.abs(lhs - rhs).max() < 1e-10
        R = r2pi_diagonal(sector_table(spec).sector(m))
        l2 = builder.block_matrix(m + 3, theta=THETA, phi=PHI).toarray()
        r2 = R[:, None] * builder.block_matrix(m, theta=THETA, phi=PHI).toarray() \
            * np.conj(R)[None, :]
        assert np.abs(l2 - r2).max() < 1e-10


def test_hermiticity():
    spec = aah(cells=3, particles=3, statistics="fermion", phi=PHI,
               interaction=InteractionSpec("nearest-neighbor", 2.0))
    assert build_full(spec, THETA, "boundary").hermiticity_defect() < 1e-12
    assert build_full(spec, THETA, "periodic").hermiticity_defect() < 1e-12
    for m in range(3):
        assert build_block(spec, m, theta=THETA).hermiticity_defect() < 1e-12


def test_boundary_gauge_block_precondition():
    spec = aah(cells=3, particles=2).with_boundary("twisted", "boundary", 0.5)
    with pytest.raises(ValueError):
        build_block(spec, 0, theta=0.5)


def test_apply_hop_statistics():
    spec = aah(cells=2, particles=2, statistics="fermion")
    # c^dag_3 c_1 over |1,1,0,...>: passes one occupied site -> sign -1
    occ = (1, 1, 0, 0, 0, 0)
    res = apply_hop(occ, 1, 3, spec)
    assert res == ((0, 1, 1, 0, 0, 0), -1.0)
    bos = aah(cells=2, particles=2, statistics="boson", cap=2)
    res = apply_hop((2, 0, 0, 0, 0, 0), 1, 2, bos)
    assert res[0] == (1, 1, 0, 0, 0, 0)
    assert res[1] == pytest.approx(math.sqrt(2.0))
    assert apply_hop((1, 1, 0, 0, 0, 0), 1, 2, spec) is None  # blocked target


def test_triplet_dump(tmp_path):
    spec = aah(cells=1, particles=1)
    bm = build_full(spec)
    path = tmp_path / "h.txt"
    bm.dump_triplets(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("#")
    assert len(lines) == 1 + bm.matrix.nnz


def test_full_dimension_guard(monkeypatch):
    import twistloop.blocks as blocks_mod
    monkeypatch.setattr(blocks_mod, "FULL_DIMENSION_LIMIT", 10)
    spec = aah(cells=3, particles=2, statistics="fermion",
               interaction=InteractionSpec("long-range-cubic", 1.0))
    from twistloop.blocks import BlockBuilder
    from twistloop.errors import DimensionOverflowError
    builder = BlockBuilder(spec)   # fresh builder: no cached fock graph
    with pytest.raises(DimensionOverflowError):
        builder.full_matrix(theta=0.0, gauge="boundary", phi=0.0)
