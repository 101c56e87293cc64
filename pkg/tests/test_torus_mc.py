import dataclasses
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from longrange_mf.couplings import CouplingFamily, PowerLaw, TorusKernel, Yukawa, normalize, periodize
from longrange_mf.errors import DimensionMismatch, NotEquilibrated, ParameterOutOfRange
from longrange_mf.mf_core import tetrahedral_atoms
from longrange_mf.torus_mc import (
    BlumeCapel, Potts, build_state, check_bounds, compute_local_field, config_observables, exact_enumeration,
    gibbs_vector, heat_bath_matrix, hysteresis_scan, measure, pair_energy, restore, sweep,
)


def powerlaw_kernel(L, s=1.2, d=1):
    return periodize(normalize(CouplingFamily(PowerLaw(s), d)), L)


def bare_kernel(row):
    """Kernel built directly from a row with no self-coupling."""
    row = np.asarray(row, dtype=float)
    return TorusKernel(row.size, 1, row, np.fft.fft(row).real)


# -- construction -----------------------------------------------------------


def test_ordered_init_magnetization():
    k = powerlaw_kernel(32)
    state = build_state(k, Potts(3), "ordered")
    rep = measure(state, 1.0, 0.0, 10, thin=0)
    assert np.array_equal(rep.m_star, tetrahedral_atoms(3)[0])


def test_disordered_init_clt_bound():
    k = powerlaw_kernel(16)
    for seed in range(20):
        a = build_state(k, Potts(3), "disordered", seed=seed)
        b = build_state(k, Potts(3), "disordered", seed=seed)
        assert np.array_equal(a.spins, b.spins)
        assert np.linalg.norm(a.vectors().mean(axis=0)) <= 4 / math.sqrt(16)


def test_given_round_trip(tmp_path):
    k = powerlaw_kernel(16)
    spins = np.random.default_rng(3).integers(0, 3, 16)
    state = build_state(k, Potts(3), "given", seed=5, spins=spins)
    state.dump(tmp_path / "s.bin")
    back = restore(tmp_path / "s.bin", k)
    assert np.array_equal(back.spins, spins)
    assert back.rng_seed == 5 and back.kind == Potts(3)


def test_build_state_errors():
    k = powerlaw_kernel(8)
    with pytest.raises(DimensionMismatch):
        build_state(k, Potts(3), "given", spins=np.zeros(7, dtype=int))
    with pytest.raises(ParameterOutOfRange):
        build_state(k, Potts(3), "given", spins=np.full(8, 3))
    with pytest.raises(ParameterOutOfRange):
        build_state(k, Potts(3), "zero")
    with pytest.raises(ParameterOutOfRange):
        build_state(k, Potts(3), "sideways")
    bad = TorusKernel(8, 2, k.row, k.fourier_row)
    with pytest.raises(DimensionMismatch):
        build_state(bad, Potts(3))


# -- dynamics ---------------------------------------------------------------


def test_infinite_temperature_marginals_uniform():
    k = powerlaw_kernel(1000)
    state = build_state(k, Potts(3), "ordered", seed=11)
    counts = np.zeros(3)
    for _ in range(100):
        sweep(state, 0.0, 0.0, 1)
        counts += np.bincount(state.spins, minlength=3)
    assert counts.sum() == 100_000
    assert stats.chisquare(counts).pvalue > 1e-3


def two_site_oracle(kind, beta, field):
    """Gibbs weights of a two-site system with unit coupling, from the lattice Hamiltonians."""
    if isinstance(kind, Potts):
        q = kind.q
        logw = np.array([beta * (a == b) + field * ((a == 0) + (b == 0)) for a in range(q) for b in range(q)])
    else:
        vals = [1, 0, -1]
        logw = np.array([-beta * (vals[a] - vals[b]) ** 2 + field * (vals[a] ** 2 + vals[b] ** 2)
                         for a in range(3) for b in range(3)])
    w = np.exp(logw - logw.max())
    return w / w.sum()


@pytest.mark.parametrize("kind,beta,field", [(Potts(3), 1.3, 0.2), (Potts(4), 2.0, -0.5), (BlumeCapel(), 1.5, 0.4)],
                         ids=["potts3", "potts4", "bc"])
def test_two_site_detailed_balance(kind, beta, field):
    # row [0, 1]: sites 0 and 1 interact with unit strength and no self-coupling
    k = bare_kernel([0.0, 1.0])
    configs, pi = gibbs_vector(k, kind, beta, field)
    assert [tuple(c) for c in configs] == list(itertools.product(range(kind.q), repeat=2))
    assert np.allclose(pi, two_site_oracle(kind, beta, field), atol=1e-14)
    for site in (0, 1):
        P = heat_bath_matrix(k, kind, beta, field, site)
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-14)
        assert np.max(np.abs(pi @ P - pi)) <= 1e-12
        flow = pi[:, None] * P
        assert np.max(np.abs(flow - flow.T)) <= 1e-12


def test_sweep_kernel_matches_transition_matrix():
    # one sweep updates site 0 then site 1; compare outcome frequencies with P0 P1
    kind, beta, field = Potts(3), 1.3, 0.2
    k = bare_kernel([0.0, 1.0])
    P = heat_bath_matrix(k, kind, beta, field, 0) @ heat_bath_matrix(k, kind, beta, field, 1)
    configs = list(itertools.product(range(3), repeat=2))
    for i, c in enumerate(configs):
        counts = np.zeros(9)
        for seed in range(3000):
            state = build_state(k, kind, "given", seed=seed, spins=np.array(c))
            sweep(state, beta, field, 1)
            counts[configs.index(tuple(state.spins))] += 1
        expected = P[i] * counts.sum()
        mask = expected > 0
        assert np.all(counts[~mask] == 0)
        assert stats.chisquare(counts[mask], expected[mask]).pvalue > 1e-4


def test_determinism_and_grouping():
    k = powerlaw_kernel(64)
    a = build_state(k, Potts(3), "disordered", seed=4)
    b = build_state(k, Potts(3), "disordered", seed=4)
    sweep(a, 2.5, 0.0, 150)
    for n in (10, 54, 1, 85):
        sweep(b, 2.5, 0.0, n)
    assert np.array_equal(a.spins, b.spins)
    assert a.sweep_count == b.sweep_count == 150
    c = build_state(k, Potts(3), "disordered", seed=5)
    sweep(c, 2.5, 0.0, 150)
    assert not np.array_equal(a.spins, c.spins)


def test_sweep_rejects_zero():
    state = build_state(powerlaw_kernel(8), Potts(3))
    with pytest.raises(ParameterOutOfRange):
        sweep(state, 1.0, 0.0, 0)


@pytest.mark.parametrize("kind", [Potts(3), Potts(5), BlumeCapel()], ids=str)
def test_local_field_cache_drift(kind):
    # 40 sweeps of 256 sites is over 10^4 updates and stays short of the periodic refresh
    k = powerlaw_kernel(256)
    state = build_state(k, kind, "disordered", seed=2)
    sweep(state, 1.0, 0.1, 40)
    fresh = compute_local_field(k, state.vectors())
    assert np.max(np.abs(fresh - state.local_field)) <= 1e-9


def test_local_field_against_direct_sum():
    k = periodize(normalize(CouplingFamily(Yukawa(0.7), 2)), 6)
    state = build_state(k, Potts(3), "disordered", seed=8)
    vec = state.vectors()
    coords = list(itertools.product(range(6), repeat=2))
    for x, cx in enumerate(coords):
        direct = sum(k.row[(cy[0] - cx[0]) % 6, (cy[1] - cx[1]) % 6] * vec[y]
                     for y, cy in enumerate(coords) if y != x)
        assert np.allclose(state.local_field[x], direct, atol=1e-13)


# -- observables ------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([Potts(2), Potts(3), Potts(4), BlumeCapel()]))
def test_energy_identity(seed, kind):
    k = powerlaw_kernel(8)
    spins = np.random.default_rng(seed).integers(0, kind.q, 8)
    state = build_state(k, kind, "given", spins=spins)
    _, e, var, _ = config_observables(k, state.vectors(), state.local_field)
    assert e == pytest.approx(pair_energy(k, state.vectors()), abs=1e-12)
    assert var >= 0


def test_frozen_ordered_state():
    k = powerlaw_kernel(64)
    state = build_state(k, Potts(3), "ordered")
    rep = measure(state, 3.0, 0.0, 20, thin=0)
    # the full field of a uniform configuration equals its magnetization at every site
    assert rep.var_m0 == pytest.approx(0.0, abs=1e-24)
    assert state.sweep_count == 0


def test_measure_rejects_short_runs():
    state = build_state(powerlaw_kernel(8), Potts(3))
    with pytest.raises(ParameterOutOfRange):
        measure(state, 1.0, 0.0, 5)


def test_infinite_temperature_energy_matches_product_measure():
    # independent spins: E[e] = (1/2) sum_{y != 0} J(y) |<S>|^2
    kind, h = Potts(3), 1.0
    k = powerlaw_kernel(256)
    state = build_state(k, kind, "disordered", seed=1)
    rep = measure(state, 0.0, h, 2000, 1)
    # single-site law: weight e^h on state 0, 1 on the others
    p = np.array([math.e**h, 1.0, 1.0])
    mean_spin = (p / p.sum()) @ tetrahedral_atoms(3)
    expected_e = 0.5 * (1.0 - k.row[0]) * float(mean_spin @ mean_spin)
    assert abs(rep.e_star - expected_e) <= 4 * rep.stderr["e_star"] + 1e-12
    assert np.all(np.abs(rep.m_star - mean_spin) <= 4 * rep.stderr["m_star"])


def test_high_temperature_magnetization_small():
    k = powerlaw_kernel(512)
    beta = 0.5 * 4 * math.log(2)
    state = build_state(k, Potts(3), "ordered", seed=3)
    sweep(state, beta, 0.0, 200)
    rep = measure(state, beta, 0.0, 400, 1)
    assert np.linalg.norm(rep.m_star) <= 0.05 + 4 * np.linalg.norm(rep.stderr["m_star"])


# -- exact enumeration ------------------------------------------------------


def potts_oracle(kernel, q, beta, h):
    """Averages from the Potts Hamiltonian written with Kronecker deltas."""
    L = kernel.L
    atoms = tetrahedral_atoms(q)
    configs = np.array(list(itertools.product(range(q), repeat=L)))
    pairs = [(x, y) for x in range(L) for y in range(x + 1, L)]
    logw, m, e = [], [], []
    for c in configs:
        bond = sum(kernel.row[(y - x) % L] * (c[x] == c[y]) for x, y in pairs)
        dot = sum(kernel.row[(y - x) % L] * (q * (c[x] == c[y]) - 1) / (q - 1) for x, y in pairs)
        logw.append(beta * bond + h * np.sum(c == 0))
        m.append(atoms[c].mean(axis=0))
        e.append(dot / L)
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    return w @ np.array(m), float(w @ np.array(e))


def test_exact_enumeration_against_delta_hamiltonian():
    k = powerlaw_kernel(4)
    ex = exact_enumeration(k, Potts(3), 2.0, 0.1)
    m, e = potts_oracle(k, 3, 2.0, 0.1)
    assert np.allclose(ex["m_star"], m, atol=1e-13)
    assert ex["e_star"] == pytest.approx(e, abs=1e-13)


def bc_oracle(kernel, beta, lam):
    L = kernel.L
    vals = np.array([1, 0, -1])
    configs = np.array(list(itertools.product(range(3), repeat=L)))
    logw, sq = [], []
    for c in configs:
        s = vals[c]
        energy = sum(kernel.row[(y - x) % L] * (s[x] - s[y]) ** 2 for x in range(L) for y in range(x + 1, L))
        logw.append(-beta * energy + lam * np.sum(s**2))
        sq.append(np.mean(s**2))
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    return float(w @ np.array(sq))


def test_blume_capel_enumeration_and_sampling():
    # couplings normalized to total strength one with no self-image
    k = bare_kernel([0.0, 0.4, 0.2, 0.4])
    beta, lam = 1.2, 0.3
    ex = exact_enumeration(k, BlumeCapel(), beta, lam)
    assert ex["mean_sq_spin"] == pytest.approx(bc_oracle(k, beta, lam), abs=1e-13)
    state = build_state(k, BlumeCapel(), "disordered", seed=9)
    sweep(state, beta, lam, 100)
    rep = measure(state, beta, lam, 60_000, 1)
    for key in ("mean_sq_spin", "e_star", "var_m0"):
        assert abs(getattr(rep, key) - ex[key]) <= 4 * rep.stderr[key]


# -- dump and restore -------------------------------------------------------


def test_restore_continues_chain(tmp_path):
    k = powerlaw_kernel(64)
    a = build_state(k, Potts(3), "disordered", seed=21)
    sweep(a, 2.0, 0.0, 70)
    a.dump(tmp_path / "a.bin")
    b = restore(tmp_path / "a.bin", k)
    assert b.sweep_count == 70
    sweep(a, 2.0, 0.0, 30)
    sweep(b, 2.0, 0.0, 30)
    assert np.array_equal(a.spins, b.spins)


def test_dump_layout(tmp_path):
    k = powerlaw_kernel(8)
    state = build_state(k, BlumeCapel(), "zero", seed=3)
    state.dump(tmp_path / "z.bin")
    raw = (tmp_path / "z.bin").read_bytes()
    assert raw[:4] == b"TMCS"
    assert raw[4] == 1
    assert np.array_equal(np.frombuffer(raw[-32:], dtype="<i4"), np.ones(8))


def test_restore_errors(tmp_path):
    k = powerlaw_kernel(8)
    build_state(k, Potts(3)).dump(tmp_path / "s.bin")
    with pytest.raises(DimensionMismatch):
        restore(tmp_path / "s.bin", powerlaw_kernel(16))
    (tmp_path / "junk.bin").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ParameterOutOfRange):
        restore(tmp_path / "junk.bin", k)


# -- bounds -----------------------------------------------------------------


@pytest.fixture(scope="module")
def equilibrated_run():
    k = powerlaw_kernel(64)
    beta = 2.5
    state = build_state(k, Potts(3), "disordered", seed=0)
    sweep(state, beta, 0.0, 300)
    return k, beta, measure(state, beta, 0.0, 2000, 1)


def test_bounds_pass_on_equilibrated_run(equilibrated_run):
    k, beta, rep = equilibrated_run
    v = check_bounds(rep, Potts(3), beta, 0.0, k)
    assert v.fluctuation_ok and v.phi_ok
    assert v.I_torus == pytest.approx(k.infrared_sum())


def test_doubling_variance_flips_fluctuation_verdict(equilibrated_run):
    k, beta, rep = equilibrated_run
    v = check_bounds(rep, Potts(3), beta, 0.0, k)
    assert 2 * v.fluctuation_lhs > v.fluctuation_rhs
    doubled = dataclasses.replace(rep, var_m0=2 * rep.var_m0)
    assert not check_bounds(doubled, Potts(3), beta, 0.0, k).fluctuation_ok


def test_frozen_state_passes_fluctuation_bound():
    k = powerlaw_kernel(64)
    state = build_state(k, Potts(3), "ordered")
    rep = measure(state, 5.0, 0.0, 30, thin=0)
    v = check_bounds(rep, Potts(3), 5.0, 0.0, k)
    assert v.fluctuation_ok
    # the vertex is evaluated by continuity
    assert math.isfinite(v.phi_excess) and v.phi_excess >= -1e-9


def test_not_equilibrated(equilibrated_run):
    k, beta, rep = equilibrated_run
    with pytest.raises(NotEquilibrated):
        check_bounds(dataclasses.replace(rep, tau_e=100.0), Potts(3), beta, 0.0, k)


def test_near_monotone_bond_energy():
    k = powerlaw_kernel(64)
    state = build_state(k, Potts(3), "disordered", seed=6)
    slack = 2 * 2 * k.infrared_sum()
    values = []
    for beta in np.linspace(1.5, 4.0, 6):
        sweep(state, beta, 0.0, 200)
        rep = measure(state, beta, 0.0, 400, 1)
        # <(S_0, m_0)> is twice the energy density
        values.append((2 * rep.e_star, 2 * rep.stderr["e_star"]))
    for (a, ea), (b, eb) in zip(values, values[1:]):
        assert b >= a - slack - 4 * math.hypot(ea, eb)


# -- hysteresis -------------------------------------------------------------


def test_hysteresis_table_shape():
    k = powerlaw_kernel(32)
    grid = np.linspace(2.0, 3.0, 4)
    tab = hysteresis_scan(k, Potts(3), grid, 0.0, 20, seed=1)
    assert tab.branch("upper").shape == tab.branch("lower").shape == (4,)
    assert tab.max_gap == pytest.approx(np.max(tab.gaps))
    assert tab.max_gap_location in grid
    # deterministic in the seed
    again = hysteresis_scan(k, Potts(3), grid, 0.0, 20, seed=1)
    assert np.array_equal(tab.branch("upper"), again.branch("upper"))


def test_hysteresis_rejects_bad_grid():
    k = powerlaw_kernel(16)
    with pytest.raises(ParameterOutOfRange):
        hysteresis_scan(k, Potts(3), [2.0, 1.0], 0.0, 40)
    with pytest.raises(ParameterOutOfRange):
        hysteresis_scan(k, Potts(3), [1.0, 2.0], 0.0, 10)
    with pytest.raises(ParameterOutOfRange):
        hysteresis_scan(k, BlumeCapel(), [0.0, 0.1], 0.0, 40, scan="field")


def test_blume_capel_field_scan_occupation_jump():
    k = powerlaw_kernel(128)
    beta = 4.0
    grid = np.linspace(-6.0, 6.0, 13)
    tab = hysteresis_scan(k, BlumeCapel(), grid, 0.0, 100, seed=2, scan="field", fixed_beta=beta)
    for which in ("upper", "lower"):
        occ = tab.branch(which)
        assert occ[0] < 0.2 and occ[-1] > 0.8
        assert np.max(np.diff(occ)) > 0.5
    # both occupation states persist at lam = 0 depending on the starting phase
    assert tab.gaps[6] > 0.5
