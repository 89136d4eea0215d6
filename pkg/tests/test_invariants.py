import math
from fractions import Fraction

import numpy as np
import pytest

from twistloop import invariants as inv
from twistloop.errors import FlowClosureError, GaplessError
from twistloop.model import InteractionSpec, ModelSpec
from twistloop.solver import ManifoldRule

from conftest import aah

BAND0 = ManifoldRule(bands=(0,))
GROUND = ManifoldRule(count=1)


def test_wrap_phase_branch():
    assert inv.wrap_phase(3 * math.pi) == pytest.approx(math.pi)
    assert inv.wrap_phase(-math.pi) == pytest.approx(math.pi)
    assert inv.wrap_phase(0.3) == pytest.approx(0.3)


# --- classical polarization --------------------------------------------------

def test_polarization_uniform_single_particle():
    # uniform kappa=0 eigenstate of the free ring: <x>/S = (S+1)/(2S)
    spec = ModelSpec(cells=9, cell_size=1, statistics="hardcore-boson",
                     particle_count=1, b=Fraction(0, 1), lam=0.0)
    from twistloop.blocks import build_full, get_builder
    from twistloop.solver import eig_lowest
    es = eig_lowest(build_full(spec), 1)
    x = get_builder(spec).position_diagonal()
    S = spec.sites
    p0 = float(np.sum(x * np.abs(es.vectors[:, 0]) ** 2)) / S
    assert p0 == pytest.approx((S + 1) / (2 * S), abs=1e-9)


def test_polarization_complete_manifold_trace():
    # the complete single-particle manifold carries Tr(x)/S exactly
    spec = aah(cells=2, particles=1, phi=0.3)
    S = spec.sites
    pbar, p0 = inv.classical_polarization(spec, theta_steps=8,
                                          rule=ManifoldRule(count=S))
    assert pbar == pytest.approx(sum(range(1, S + 1)) / S, abs=1e-10)
    assert p0 == pytest.approx(sum(range(1, S + 1)) / S, abs=1e-10)


def test_polarization_theta_average_vs_theta0():
    spec = aah(cells=5, particles=5)
    pbar, p0 = inv.classical_polarization(spec.with_phi(0.8), theta_steps=12,
                                          rule=GROUND)
    assert abs(pbar - p0) < 1.0 / spec.sites


# --- TBC Berry phases --------------------------------------------------------

def test_classical_limit_zero_phase():
    # t0 = 0: the 9-fold degenerate classical crystal multiplet is gapped
    # above and theta-independent, so phi_TBC = 0 and Eq-30 residual ~ 0
    spec = aah(cells=3, particles=2, t0=0.0,
               interaction=InteractionSpec("long-range-cubic", 8.0))
    rule = ManifoldRule(count=9)
    res = inv.berry_phase_tbc(spec, theta_steps=8, rule=rule)
    assert abs(res.value) < 1e-10
    assert inv.gauge_relation_check(spec, theta_steps=8, rule=rule) < 1e-10


def test_single_particle_gauge_relation():
    # uniform ring, complete manifold (level crossings make single states
    # gapless under flux, the full manifold is trivially gapped)
    spec = ModelSpec(cells=8, cell_size=1, statistics="hardcore-boson",
                     particle_count=1, b=Fraction(0, 1), lam=0.0)
    rule = ManifoldRule(count=spec.sites)
    assert inv.gauge_relation_check(spec, theta_steps=64, rule=rule) < 1e-8


def test_single_particle_band_gauge_relation():
    # modulated chain, whole lowest band: the generic gapped case
    spec = aah(cells=5, particles=1, phi=0.7)
    rule = ManifoldRule(bands=(0,))
    assert inv.gauge_relation_check(spec, theta_steps=64, rule=rule) < 1e-3


def test_gapless_path_raises():
    # lam = 0, nu = 1 hard-core: gapless; the sweep must say so, not crash
    spec = aah(cells=3, particles=3, lam=0.0)
    with pytest.raises(GaplessError):
        inv.berry_phase_tbc(spec, theta_steps=8, rule=GROUND)


def test_theta_grid_convergence():
    spec = aah(cells=3, particles=3, phi=0.9)
    coarse = inv.berry_phase_tbc(spec, theta_steps=24, rule=GROUND)
    fine = inv.berry_phase_tbc(spec, theta_steps=48, rule=GROUND)
    assert abs(inv.wrap_phase(fine.value - coarse.value)) < 5e-3


def test_min_theta_steps():
    with pytest.raises(ValueError):
        inv.berry_phase_tbc(aah(cells=3, particles=3), theta_steps=4, rule=GROUND)


# --- K orbits and Wilson loops -----------------------------------------------

def test_k_orbits_half_filling_single():
    spec = aah(cells=8, particles=4)
    orbits = inv.k_orbits([0, 4], spec)
    assert len(orbits) == 1
    assert orbits[0].momenta == (0, 4)


def test_k_orbits_fourfold_two_loops():
    spec = aah(cells=8, particles=4)
    orbits = inv.k_orbits([0, 4, 1, 5], spec)
    assert len(orbits) == 2
    assert {o.momenta for o in orbits} == {(0, 4), (1, 5)}


def test_k_orbits_integer_filling():
    spec = aah(cells=3, particles=3)
    orbits = inv.k_orbits([0, 1, 2], spec)
    assert [o.momenta for o in orbits] == [(0,), (1,), (2,)]


def test_k_orbits_not_closed():
    spec = aah(cells=8, particles=4)
    with pytest.raises(FlowClosureError):
        inv.k_orbits([0, 1], spec)


def test_wilson_start_point_independence():
    # same K orbit, different starting sector: identical phase (cyclic det)
    spec = aah(cells=13, particles=2, phi=1.1,
               interaction=InteractionSpec("nearest-neighbor", 10.0))
    eigensets = inv.solve_sectors(spec)
    vals = [inv.wilson_loop_cm(spec, K0, bands=(-1,), eigensets=eigensets).value
            for K0 in (0, 3, 7)]
    assert abs(inv.wrap_phase(vals[0] - vals[1])) < 1e-9
    assert abs(inv.wrap_phase(vals[0] - vals[2])) < 1e-9


def test_single_particle_wilson_is_band_loop():
    # N=1: the multi-particle loop reduces to the standard one-band Wilson
    # loop, checked against an independent 3x3 Bloch construction
    spec = aah(cells=5, particles=1, phi=0.7)
    res = inv.wilson_loop_cm(spec, 0, bands=(0,))
    assert abs(inv.wrap_phase(res.value - _single_particle_zak(spec))) < 1e-9


def _single_particle_zak(spec):
    """Independent band Zak phase: site-class Bloch matrices, descending loop.

    Classes a = x mod cell_size (1-based sites) with x-resolved Bloch
    phases exp(i*K*x/cs); every hop x -> x+1 then carries exp(-i*K/cs).
    The zone-wrap closure multiplies class a by exp(2*pi*i*frac(a/cs)).
    """
    cs, L = spec.cell_size, spec.cells
    from twistloop.model import hopping_amplitude
    t = [hopping_amplitude(spec, j) for j in range(1, cs + 1)]

    def bloch(K):
        h = np.zeros((cs, cs), dtype=complex)
        for x_class in range(1, cs + 1):         # bond from class x mod cs
            frm = x_class % cs
            to = (x_class + 1) % cs
            amp = -t[x_class - 1] * np.exp(-1j * K / cs)
            h[to, frm] += amp
            h[frm, to] += np.conj(amp)
        return h

    us = []
    for j in range(L):
        _w, v = np.linalg.eigh(bloch(-2 * math.pi * j / L))
        us.append(v[:, 0])
    R_beta = np.array([(a % cs) / cs for a in range(cs)])
    total = 1.0 + 0.0j
    for j in range(L - 1):
        total *= np.vdot(us[j], us[j + 1])
    total *= np.vdot(us[L - 1], np.exp(2j * np.pi * R_beta) * us[0])
    return math.atan2(total.imag, total.real)


def test_shortcut_equals_loop_at_integer_filling():
    spec = aah(cells=4, particles=4, phi=0.9)
    eigensets = inv.solve_sectors(spec, k=2)
    loop = inv.cm_berry_sum(spec, GROUND, eigensets=eigensets)
    short = inv.shortcut_sum(spec, GROUND, eigensets=eigensets)
    assert abs(inv.wrap_phase(loop.value - short.value)) < 1e-12


def test_shortcut_integer_R_real_state():
    # t0 = 0, single classical crystal state with integer c.m. position
    spec = ModelSpec(cells=3, cell_size=1, statistics="hardcore-boson",
                     particle_count=3, b=Fraction(0, 1), t0=0.0)
    res = inv.many_body_shortcut(spec, 0, bands=(0,))
    assert abs(res.value) < 1e-12


# --- M matrix ----------------------------------------------------------------

def test_m_matrix_block_structure_and_resta():
    spec = aah(cells=5, particles=5, phi=1.3)
    mm = inv.m_matrix(spec, GROUND)
    assert mm.matrix.shape == (1, 1)
    tpg = inv.berry_phase_tbc(spec, theta_steps=64, rule=GROUND, gauge="periodic")
    d = abs(inv.wrap_phase(mm.phase - tpg.value))
    assert min(d, abs(d - math.pi)) < 0.1


def test_m_matrix_offdiagonal_blocks_vanish():
    # two-state manifold at K = 0 and pi: M is block diagonal in K
    spec = aah(cells=4, particles=2, phi=0.8,
               interaction=InteractionSpec("long-range-cubic", 30.0))
    eigensets = inv.solve_sectors(spec, k=3)
    manifold = inv.sector_manifold(spec, ManifoldRule(count=2), eigensets=eigensets)
    assert sorted(m.K_index for m in manifold.members) == [0, 2]
    mm = inv.m_matrix(spec, ManifoldRule(count=2), eigensets=eigensets)
    off = abs(mm.matrix[0, 1]) + abs(mm.matrix[1, 0])
    assert off < 1e-12


def test_m_matrix_flow_closure_error():
    # half the nu=1/2 doublet: K=0 without its K=pi partner is not closed
    spec = aah(cells=4, particles=2, phi=0.4,
               interaction=InteractionSpec("long-range-cubic", 30.0))
    with pytest.raises(FlowClosureError):
        inv.m_matrix(spec, ManifoldRule(count=1))


# --- equivalences ------------------------------------------------------------

def test_cm_sum_equals_argdetM_exactly():
    spec = aah(cells=4, particles=2, phi=2.1,
               interaction=InteractionSpec("long-range-cubic", 30.0))
    eigensets = inv.solve_sectors(spec, k=3)
    cm = inv.cm_berry_sum(spec, ManifoldRule(count=2), eigensets=eigensets)
    mm = inv.m_matrix(spec, ManifoldRule(count=2), eigensets=eigensets)
    d = abs(inv.wrap_phase(cm.value - mm.phase))
    assert min(d, abs(d - math.pi)) < 1e-9


def test_method_agreement_small_nu1():
    spec = aah(cells=4, particles=4, phi=0.7)
    eigensets = inv.solve_sectors(spec, k=2)
    cm = inv.cm_berry_sum(spec, GROUND, eigensets=eigensets)
    tbc = inv.berry_phase_tbc(spec, theta_steps=48, rule=GROUND)
    tpg = inv.berry_phase_tbc(spec, theta_steps=48, rule=GROUND, gauge="periodic")
    pbar, _ = inv.classical_polarization(spec, theta_steps=48, rule=GROUND)
    assert abs(inv.wrap_phase(tbc.value + 2 * math.pi * pbar - tpg.value)) < 5e-3
    assert abs(inv.wrap_phase(cm.value - tpg.value)) < 0.1


def test_flow_parity():
    assert inv.flow_permutation_parity([0, 4], aah(cells=8, particles=4)) == -1
    assert inv.flow_permutation_parity([0, 4, 1, 5], aah(cells=8, particles=4)) == 1
    assert inv.flow_permutation_parity([0], aah(cells=5, particles=5)) == 1
    assert inv.flow_permutation_parity(list(range(7)),
                                       aah(cells=7, particles=1)) == 1


# --- Chern numbers -----------------------------------------------------------

def test_chern_trivial_flat_manifold():
    # t0 = 0 with a Phi-independent interaction: flat curve, zero winding
    spec = aah(cells=3, particles=2, t0=0.0,
               interaction=InteractionSpec("long-range-cubic", 5.0))
    c = inv.chern_winding(spec, method="many-body-shortcut",
                          rule=ManifoldRule(count=9), phi_steps=8)
    assert c.value == 0
    assert c.max_step < 1e-12


def test_chern_winding_refinement_cap():
    def fake_eval(phi):
        return inv.wrap_phase(2.9 * phi)   # steps beyond the refine limit

    with pytest.raises(inv.UnwrapError):
        inv._winding_from_curve([0.0, math.pi], [fake_eval(0.0), fake_eval(math.pi)],
                                fake_eval, "test", refine_cap=0, grid={})


def test_chern_winding_refinement_recovers():
    # a steep but honest curve: refinement resolves the winding
    def linear_eval(phi):
        return inv.wrap_phase(2.9 * phi)

    phis = [0.0, math.pi]
    res = inv._winding_from_curve(phis, [linear_eval(p) for p in phis],
                                  linear_eval, "test", refine_cap=4, grid={})
    assert res.max_step <= inv.REFINE_STEP


def test_chern_total_band_sum_zero(single_particle_21):
    total = 0
    for band in (0, 1, 2):
        c = inv.chern_winding(single_particle_21, method="cm-wilson",
                              rule=ManifoldRule(bands=(band,)), phi_steps=18)
        total += c.value
    assert total == 0


def test_tbc_phase_quantized_at_inversion_symmetric_point():
    # Phi = 0 bond pattern is reflection symmetric; the boundary-gauge
    # phase (position-free) quantizes to {0, pi}
    spec = aah(cells=4, particles=4, phi=0.0)
    res = inv.berry_phase_tbc(spec, theta_steps=24, rule=GROUND)
    d = min(abs(res.value), abs(inv.wrap_phase(res.value - math.pi)))
    assert d < 1e-6


def test_overlap_singular_error():
    frames = [np.eye(4, 1, dtype=complex),
              np.eye(4, 1, k=-1, dtype=complex)]   # orthogonal frames
    with pytest.raises(inv.OverlapSingularError):
        inv._chain_phase(frames, frames[0])


def test_fermion_integer_filling_pump():
    # even-N fermions exercise the anti-periodic gauge end to end
    spec = aah(cells=4, particles=4, statistics="fermion")
    c = inv.chern_winding(spec, method="cm-wilson", rule=GROUND, phi_steps=12)
    assert c.value == -1


def test_redress_does_not_change_chern():
    spec = aah(cells=7, particles=1)
    rule = ManifoldRule(bands=(0,))
    phis = [2 * math.pi * i / 12 for i in range(12)]

    def eval_redressed(phi):
        return inv.cm_berry_sum(spec.with_phi(phi), rule,
                                redress=_fixed_redress).value

    plain = [inv.cm_berry_sum(spec.with_phi(p), rule).value for p in phis]
    dressed = [eval_redressed(p) for p in phis]
    assert max(abs(inv.wrap_phase(a - b)) for a, b in zip(plain, dressed)) < 1e-9
    c1 = inv._winding_from_curve(phis, plain, lambda p: inv.cm_berry_sum(
        spec.with_phi(p), rule).value, "cm", 2, {})
    c2 = inv._winding_from_curve(phis, dressed, eval_redressed, "cm", 2, {})
    assert c1.value == c2.value == -1


_REDRESS_CACHE = {}


def _fixed_redress(key, n):
    if key not in _REDRESS_CACHE:
        rng = np.random.default_rng(abs(hash(key)) % 2**32)
        z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        q, r = np.linalg.qr(z)
        _REDRESS_CACHE[key] = q * np.sign(np.diag(r))
    return _REDRESS_CACHE[key]


def test_chern_phi_trace_unwrapped():
    spec = aah(cells=7, particles=1)
    c = inv.chern_winding(spec, method="cm-wilson", rule=ManifoldRule(bands=(0,)),
                          phi_steps=18)
    # the recorded trace is continuous (no 2 pi jumps) and spans -2 pi
    steps = np.diff(c.phi_trace)
    assert np.abs(steps).max() < math.pi
    closure = inv.wrap_phase(c.phi_trace[0] - c.phi_trace[-1])
    assert (c.phi_trace[-1] + closure - c.phi_trace[0]) == pytest.approx(
        2 * math.pi * c.value, abs=1e-9)
