import numpy as np
import pytest
from numpy.testing import assert_allclose

from nlsnf import hamalg, spectral
from nlsnf.errors import GeneratorClassError, LedgerViolation
from nlsnf.hamalg import (
    QUARTIC,
    HamExpansion,
    HamTerm,
    bracket_hf,
    check_reality,
    expand_potential_energy,
    generator_info,
    gradient_fbar,
    gradient_zbar,
    lie_derivative,
    lie_series,
    scalar_term,
)


# --- independent oracle: dict-based bracket for pure-z monomials -------------
# {F, G}_z = i sum_j (dF/dzbar_j dG/dz_j - dF/dz_j dG/dzbar_j)

def poly_bracket_oracle(f_terms, g_terms, n):
    """f_terms, g_terms: dict (m, mu, nu) -> coeff.  Returns the same format."""
    out = {}
    for (mf, muf, nuf), cf in f_terms.items():
        for (mg, mug, nug), cg in g_terms.items():
            for j in range(n):
                w = nuf[j] * mug[j] - muf[j] * nug[j]
                if w == 0:
                    continue
                mu = tuple(np.add(muf, mug) - np.eye(n, dtype=int)[j])
                nu = tuple(np.add(nuf, nug) - np.eye(n, dtype=int)[j])
                key = (mf + mg, mu, nu)
                out[key] = out.get(key, 0.0) + 1j * w * cf * cg
    return {k: v for k, v in out.items() if abs(v) > 1e-15}


def expansion_to_dict(exp):
    out = {}
    for t in exp.merged().terms:
        assert t.kind == "scalar"
        out[(t.m, t.mu, t.nu)] = out.get((t.m, t.mu, t.nu), 0.0) + t.coeff
    return out


@pytest.fixture(scope="module")
def small_model():
    grid = spectral.GridSpec(l_box=30.0, m_pts=256)
    v = spectral.poschl_teller(grid.x, a=1.5, kappa2=0.35)
    return spectral.build_operator(grid, v)


def test_term_validation():
    with pytest.raises(ValueError):
        HamTerm(1.0, 0, (1,), (0, 0))          # length mismatch
    with pytest.raises(ValueError):
        HamTerm(1.0, 0, (-1,), (0,))           # negative exponent
    with pytest.raises(ValueError):
        HamTerm(1.0, 0, (0,), (0,), a=1, b=0)  # bare f-power without tail slot
    with pytest.raises(ValueError):
        HamTerm(1.0, 0, (0,), (0,), a=3, b=2, tail=np.ones(4))  # a+b > 4
    t = HamTerm(2.0, 1, (1, 0), (0, 2))
    assert t.kind == "scalar"
    assert t.is_balanced is False
    q = HamTerm(1.0, 0, (0,), (0,), a=2, b=2, tail=QUARTIC)
    assert q.ledger == 1


def test_ledger_bookkeeping():
    # E_P-type composite: z_j <f conj(f)^2, tail>, sides 1+0+1 and 0+0+2
    t = HamTerm(1.0, 0, (1,), (0,), a=1, b=2, tail=np.ones(4))
    assert t.ledger_sides() == (2, 2)
    assert t.ledger == 1
    u = HamTerm(1.0, 0, (1,), (0,))
    with pytest.raises(LedgerViolation):
        _ = u.ledger


def test_bracket_hf_scalar_example():
    # lambda = (0, 0.7), m = 1, mu = (0,1), nu = (0,0): factor i(0.7 - 1) = -0.3i
    t = scalar_term(1.0, 1, (0, 1), (0, 0))
    out = bracket_hf(t, np.array([0.0, 0.7]))
    assert out.coeff == pytest.approx(-0.3j)
    assert (out.m, out.mu, out.nu) == (1, (0, 1), (0, 0))


def test_bracket_hf_kernel():
    # lambda.(mu - nu) = m kills the bracket
    t = scalar_term(2.0, 0, (1, 1), (1, 1))
    out = bracket_hf(t, np.array([0.0, 0.7]))
    assert out.coeff == 0.0


def test_bracket_hf_linear_f(small_model):
    # m = 0, mu = nu = 0: coupling goes to i H Phi
    phi = small_model.project_pc(np.exp(-small_model.grid.x ** 2 / 2).astype(complex))
    t = hamalg.linear_f_term(0, (0, 0), (0, 0), phi)
    out = bracket_hf(t, small_model.lam, small_model)
    assert_allclose(out.vector, 1j * small_model.apply_h(phi), atol=1e-12)


def test_bracket_hf_twice_is_square(small_model):
    lam = np.array([0.0, 0.7])
    t = scalar_term(1.3 - 0.2j, 1, (2, 0), (0, 1))
    omega = float(lam @ (np.array(t.mu) - np.array(t.nu))) - t.m
    twice = bracket_hf(bracket_hf(t, lam), lam)
    assert twice.coeff == pytest.approx(-(omega ** 2) * t.coeff)


def test_lie_derivative_scalar_vs_oracle(small_model):
    # chi = i z^2 zbar^2 type generator (M0 = 1), term = z_0: compare against
    # the brute-force polynomial bracket
    n = 2
    chi_terms = {
        (0, (2, 0), (1, 1)): 0.5j,
        (0, (1, 1), (2, 0)): 0.5j,
        (1, (1, 1), (0, 2)): 0.25 - 0.1j,
        (-1, (0, 2), (1, 1)): 0.25 + 0.1j,
    }
    chi = HamExpansion([scalar_term(c, m, mu, nu) for (m, mu, nu), c in chi_terms.items()])
    g = scalar_term(1.0, 0, (1, 0), (0, 0))
    out = lie_derivative(chi, g, small_model)
    got = expansion_to_dict(out)
    want = poly_bracket_oracle({(0, (1, 0), (0, 0)): 1.0}, chi_terms, n)
    assert set(got) == set(want)
    for key in want:
        assert got[key] == pytest.approx(want[key], rel=1e-12)


def test_lie_derivative_no_overlap_vanishes(small_model):
    # chi with only <Psi, conj f> parts against a pure-z term with no shared
    # z-support: the bracket has no z-overlap and no f-pairing
    psi = small_model.project_pc(np.exp(-small_model.grid.x ** 2 / 3).astype(complex))
    chi = HamExpansion([hamalg.linear_fbar_term(0, (2, 0), (1, 0), psi)])
    g = scalar_term(1.0, 0, (0, 1), (0, 1))
    out = lie_derivative(chi, g, small_model)
    assert len(out.merged()) == 0


def test_lie_derivative_quartic_marker(small_model):
    # marker against <Psi, conj f> generator: composite with a' + b' = 3,
    # tail (1/2) Psi, prefactor -i
    psi = small_model.project_pc(np.exp(-small_model.grid.x ** 2 / 3).astype(complex))
    chi = HamExpansion([hamalg.linear_fbar_term(0, (2, 0), (1, 0), psi)])
    g = HamTerm(1.0, 0, (0, 0), (0, 0), a=2, b=2, tail=QUARTIC)
    out = lie_derivative(chi, g, small_model)
    assert len(out) == 1
    t = out.terms[0]
    assert (t.a, t.b) == (1, 2)
    # the marker's balance count gives L = 1 (sides 0+0+2), so L' = L + M0 = 2
    assert t.ledger == 1 + 1
    assert t.mu == (2, 0) and t.nu == (1, 0)
    assert_allclose(t.coeff * t.tail, -0.5j * psi, atol=1e-12)
    # hand expansion: {g, chi} = -i <grad_fbar chi, grad_f g>
    #               = -i z^2 zbar <psi, (1/2) f conj(f)^2 * 2>... checked by value
    rng = np.random.default_rng(1)
    z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    f = small_model.project_pc(
        (rng.standard_normal(256) + 1j * rng.standard_normal(256))
        * np.exp(-small_model.grid.x ** 2 / 8))
    h = small_model.grid.h
    fb = np.conj(f)
    hand = -1j * z[0] ** 2 * np.conj(z[0]) * 0.5 * spectral.pairing(f * fb ** 2, psi, h)
    assert out.evaluate(0.0, z, f, h) == pytest.approx(hand, rel=1e-12)


def test_lie_series_trivial(small_model):
    phi = small_model.project_pc(np.exp(-small_model.grid.x ** 2 / 2).astype(complex))
    chi = HamExpansion([hamalg.linear_f_term(0, (1, 0), (0, 2), phi),
                        hamalg.linear_fbar_term(0, (0, 2), (1, 0), np.conj(phi))])
    ham = HamExpansion([scalar_term(1.0, 0, (1, 1), (1, 1))])
    out, dropped = lie_series(chi, ham, small_model, n0=0, degree_cap=10)
    assert expansion_to_dict(out.select(lambda t: t.kind == "scalar")) == \
        expansion_to_dict(ham)
    assert dropped.count == 0
    out2, _ = lie_series(HamExpansion([]), ham, small_model, n0=3, degree_cap=10)
    assert expansion_to_dict(out2) == expansion_to_dict(ham)


def test_lie_series_degree_structure(small_model):
    # for H = single scalar, the output beyond H + lie(H) has degree
    # >= deg(H) + 2 M0 in the ledger count
    chi = HamExpansion([
        scalar_term(0.3j, 0, (2, 0), (1, 1)), scalar_term(0.3j, 0, (1, 1), (2, 0)),
    ])
    ham = HamExpansion([scalar_term(1.0, 0, (1, 0), (1, 0))])
    full, _ = lie_series(chi, ham, small_model, n0=3, degree_cap=20)
    first = lie_derivative(chi, ham, small_model)
    rest = (full + ham.scaled(-1.0).terms + first.scaled(-1.0).terms).merged()
    for t in rest.terms:
        assert t.size >= 1 + 2 * generator_info(chi).big_m0


def test_ledger_law_enforced(small_model):
    # every lie output from balanced input satisfies L' = L + M0; build a
    # balanced input and a generator, then scan sizes
    phi = small_model.project_pc(np.exp(-small_model.grid.x ** 2 / 2).astype(complex))
    chi = HamExpansion([
        hamalg.linear_f_term(1, (1, 0), (0, 2), phi),
        hamalg.linear_fbar_term(-1, (0, 2), (1, 0), np.conj(phi)),
    ])
    g = HamTerm(1.0, 0, (1, 0), (1, 0), a=1, b=1, tail=np.exp(-small_model.grid.x ** 2))
    out = lie_derivative(chi, g, small_model)
    info = generator_info(chi)
    for t in out.terms:
        assert t.ledger == g.ledger + info.big_m0
        assert abs(t.m) <= info.m0 + abs(g.m)


def test_generator_class_rejects_bad_shape(small_model):
    bad = HamExpansion([scalar_term(1.0, 0, (1, 0), (0, 1)),  # |mu| = |nu| but M0 = 0
                        ])
    with pytest.raises(GeneratorClassError):
        generator_info(bad)
    g = scalar_term(1.0, 0, (1, 0), (0, 0))
    with pytest.raises(GeneratorClassError):
        lie_derivative(HamExpansion([g]), g, small_model)


def test_check_reality(small_model):
    grid = small_model.grid
    phi = small_model.project_pc((np.exp(-grid.x ** 2 / 2) * (1 + 0.2j)).astype(complex))
    lone = HamExpansion([hamalg.linear_f_term(1, (1, 0), (0, 2), phi)])
    ok, why = check_reality(lone, grid)
    assert not ok and "mirror" in why
    paired = lone + [hamalg.linear_fbar_term(-1, (0, 2), (1, 0), np.conj(phi))]
    ok, why = check_reality(paired, grid)
    assert ok, why


def test_expand_potential_reality(small_model):
    ep = expand_potential_energy(small_model, gamma0=0.7, gamma1=1.3)
    ok, why = check_reality(ep, small_model.grid)
    assert ok, why


def test_expand_potential_trivial():
    grid = spectral.GridSpec(l_box=30.0, m_pts=256)
    v = spectral.poschl_teller(grid.x, a=1.5, kappa2=0.35)
    model = spectral.build_operator(grid, v)
    assert len(expand_potential_energy(model, 0.0, 0.0)) == 0


def test_expand_potential_single_mode_coefficient():
    # n = 0 sector: the z^2 zbar^2 coefficient at m = 0 is gamma0 int phi0^4 / 2
    # (the flow-consistent normalization), confirmed against the direct
    # quadrature of gamma |z phi0|^4 / 2
    grid = spectral.GridSpec(l_box=30.0, m_pts=512)
    model = spectral.build_operator(grid, spectral.sech2_well(grid.x, depth=2.0))
    assert len(model.lam) == 1
    ep = expand_potential_energy(model, gamma0=1.0, gamma1=0.0)
    h = grid.h
    target = float(h * np.sum(model.phi[0] ** 4)) / 2.0
    coeff = [t.coeff for t in ep.terms
             if t.kind == "scalar" and t.m == 0 and t.mu == (2,) and t.nu == (2,)]
    assert len(coeff) == 1
    assert coeff[0] == pytest.approx(target, rel=1e-12)
    # and the whole f = 0 sector agrees with |z|^4 quadrature
    z = np.array([0.3 - 0.4j])
    direct = abs(z[0]) ** 4 * float(h * np.sum(model.phi[0] ** 4)) / 2.0
    val = ep.evaluate(0.0, z, np.zeros(grid.m_pts, dtype=complex), h)
    assert val == pytest.approx(direct, rel=1e-12)


def test_expand_potential_evaluation_consistency(small_model):
    rng = np.random.default_rng(7)
    grid = small_model.grid
    h = grid.h
    ep = expand_potential_energy(small_model, gamma0=0.8, gamma1=-0.5)
    for trial in range(3):
        t = 2.0 * rng.random()
        z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        f = small_model.project_pc(
            (rng.standard_normal(grid.m_pts) + 1j * rng.standard_normal(grid.m_pts))
            * np.exp(-grid.x ** 2 / 10))
        u = z[0] * small_model.phi[0] + z[1] * small_model.phi[1] + f
        gamma = 0.8 - 0.5 * np.cos(t)
        direct = gamma * float(h * np.sum(np.abs(u) ** 4)) / 2.0
        val = ep.evaluate(t, z, f, h)
        assert abs(val.imag) < 1e-10 * abs(val.real)
        assert val.real == pytest.approx(direct, rel=1e-10)


def test_gradient_zbar_quadratic():
    # H = |z0|^4: d/dzbar_0 = 2 z0^2 zbar0
    ham = HamExpansion([scalar_term(1.0, 0, (2,), (2,))])
    g = gradient_zbar(ham, 0)
    z = np.array([0.7 + 0.3j])
    val = g.evaluate(0.0, z, np.zeros(4), 1.0)
    assert val == pytest.approx(2.0 * z[0] ** 2 * np.conj(z[0]))


def test_gradients_match_finite_differences(small_model):
    rng = np.random.default_rng(3)
    grid = small_model.grid
    h = grid.h
    ep = expand_potential_energy(small_model, gamma0=1.0, gamma1=0.4)
    z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    f = small_model.project_pc(
        (rng.standard_normal(grid.m_pts) + 1j * rng.standard_normal(grid.m_pts))
        * np.exp(-grid.x ** 2 / 12))
    t = 0.37
    dd = 1e-6

    # Wirtinger d/dzbar_0 = (d/dx + i d/dy)/2 on H(z, zbar)
    def ev(zz):
        return ep.evaluate(t, zz, f, h)

    for j in range(2):
        step = np.zeros(2)
        dx = np.zeros(2, dtype=complex)
        dx[j] = dd
        d_re = (ev(z + dx) - ev(z - dx)) / (2 * dd)
        d_im = (ev(z + 1j * dx) - ev(z - 1j * dx)) / (2 * dd)
        fd = 0.5 * (d_re + 1j * d_im)
        sym = gradient_zbar(ep, j).evaluate(t, z, f, h)
        assert sym == pytest.approx(fd, rel=1e-6)
        del step

    # directional derivative in f: d/ds H(f + s v) = <grad_f H, v> + <grad_fbar H, conj v>
    v = small_model.project_pc(np.exp(-(grid.x - 1.0) ** 2 / 4).astype(complex))
    gf = gradient_fbar(ep, small_model)

    def evf(ff):
        return ep.evaluate(t, z, ff, h)

    d_re = (evf(f + dd * v) - evf(f - dd * v)) / (2 * dd)
    d_im = (evf(f + 1j * dd * v) - evf(f - 1j * dd * v)) / (2 * dd)
    # combine to isolate the conj-f gradient: <grad_fbar H, conj v>
    fbar_dir = 0.5 * (d_re + 1j * d_im)
    got = spectral.pairing(gf.evaluate(t, z, f), np.conj(v), h)
    assert got == pytest.approx(fbar_dir, rel=1e-6)


def test_hf_gradients(small_model):
    # quadratic Hamiltonian: grad_zbar_j = lambda_j z_j, grad_fbar = H f
    rng = np.random.default_rng(5)
    z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    f = small_model.project_pc(
        (rng.standard_normal(256) + 1j * rng.standard_normal(256))
        * np.exp(-small_model.grid.x ** 2 / 9))
    hh = 1e-6
    h = small_model.grid.h

    def hf(zz, ff):
        return hamalg.hf_value(small_model, zz, ff)

    for j in range(2):
        dx = np.zeros(2, dtype=complex)
        dx[j] = hh
        fd = 0.5 * ((hf(z + dx, f) - hf(z - dx, f)) / (2 * hh)
                    + 1j * (hf(z + 1j * dx, f) - hf(z - 1j * dx, f)) / (2 * hh))
        assert fd == pytest.approx(small_model.lam[j] * z[j], rel=1e-6, abs=1e-9)
    v = small_model.project_pc(np.exp(-(small_model.grid.x + 2) ** 2 / 5).astype(complex))
    fd = 0.5 * ((hf(z, f + hh * v) - hf(z, f - hh * v)) / (2 * hh)
                + 1j * (hf(z, f + 1j * hh * v) - hf(z, f - 1j * hh * v)) / (2 * hh))
    want = spectral.pairing(small_model.apply_h(f), np.conj(v), h)
    assert fd == pytest.approx(want, rel=1e-6)


def test_bracket_antisymmetry_evaluation(small_model):
    # {F, G} = -{G, F} for two generator-class expansions, at random states
    grid = small_model.grid
    phi1 = small_model.project_pc(np.exp(-grid.x ** 2 / 2).astype(complex))
    phi2 = small_model.project_pc((grid.x * np.exp(-grid.x ** 2 / 3)).astype(complex))
    f_exp = HamExpansion([
        hamalg.linear_f_term(0, (1, 0), (0, 2), phi1),
        hamalg.linear_fbar_term(0, (0, 2), (1, 0), np.conj(phi1)),
        scalar_term(0.4j, 1, (1, 1), (2, 0)), scalar_term(-0.4j, -1, (2, 0), (1, 1)),
    ])
    g_exp = HamExpansion([
        hamalg.linear_f_term(1, (0, 1), (2, 0), phi2),
        hamalg.linear_fbar_term(-1, (2, 0), (0, 1), np.conj(phi2)),
    ])
    rng = np.random.default_rng(17)
    h = grid.h
    fg = lie_derivative(g_exp, f_exp, small_model)   # {F, G}
    gf = lie_derivative(f_exp, g_exp, small_model)   # {G, F}
    for _ in range(4):
        z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        f = small_model.project_pc(
            (rng.standard_normal(256) + 1j * rng.standard_normal(256))
            * np.exp(-grid.x ** 2 / 11))
        a = fg.evaluate(0.9, z, f, h)
        b = gf.evaluate(0.9, z, f, h)
        assert a == pytest.approx(-b, rel=1e-10)


def test_reality_preserved_by_lie(small_model):
    grid = small_model.grid
    phi = small_model.project_pc((np.exp(-grid.x ** 2 / 2) * (1 + 0.3j)).astype(complex))
    chi = HamExpansion([
        hamalg.linear_f_term(1, (1, 0), (0, 2), phi),
        hamalg.linear_fbar_term(-1, (0, 2), (1, 0), np.conj(phi)),
    ])
    ep = expand_potential_energy(small_model, gamma0=1.0, gamma1=0.5)
    out = lie_derivative(chi, ep, small_model)
    ok, why = check_reality(out, grid)
    assert ok, why


def test_serialization_roundtrip(small_model):
    ep = expand_potential_energy(small_model, gamma0=1.0, gamma1=0.3)
    records, vectors = hamalg.expansion_to_records(ep)
    back = hamalg.expansion_from_records(records, vectors)
    rng = np.random.default_rng(2)
    z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    f = small_model.project_pc(np.exp(-small_model.grid.x ** 2 / 7).astype(complex))
    h = small_model.grid.h
    assert back.evaluate(0.3, z, f, h) == pytest.approx(ep.evaluate(0.3, z, f, h),
                                                        rel=1e-14)
