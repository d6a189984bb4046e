"""Exact monomial algebra for time-periodic mode/radiation Hamiltonians.

A term is

    coeff * e^{i m t} z^mu conj(z)^nu
          * prod_i <Phi_i, f> * prod_j <Psi_j, conj(f)>
          * <f^a conj(f)^b, tail>

with grid-sampled coupling vectors and the bilinear pairing <u, v> = int u v.
The quartic marker (a = b = 2, no tail vector) stands for (1/4) int |f|^4.
Coupling vectors attached to f-pairings are stored projected onto the
continuum subspace; this leaves every evaluation unchanged (P_c f = f) and
makes Poisson-bracket pairings exact without extra projections.

Degree bookkeeping follows the closure ledger: a term is balanced when
|mu| + #alphas + a = |nu| + #betas + b = L + 1, and Lie derivatives along a
generator of order M_0 raise L by exactly M_0 while harmonics obey
|m'| <= m_0 + |m|.  These two laws are asserted on every generated term.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeneratorClassError, LedgerViolation, NlsnfError
from .spectral import GridSpec, OperatorModel, pairing

MERGE_TOL = 1e-14   # absolute coefficient merge tolerance
REALITY_TOL = 1e-12

QUARTIC = "quartic"  # tail sentinel for (1/4) int f^2 conj(f)^2


def _vec(v) -> np.ndarray:
    return np.asarray(v, dtype=complex)


class HamTerm:
    """One monomial.  Treated as immutable after construction."""

    __slots__ = ("coeff", "m", "mu", "nu", "alphas", "betas", "a", "b", "tail")

    def __init__(self, coeff, m, mu, nu, alphas=(), betas=(), a=0, b=0, tail=None):
        self.coeff = complex(coeff)
        self.m = int(m)
        self.mu = tuple(int(e) for e in mu)
        self.nu = tuple(int(e) for e in nu)
        self.alphas = tuple(_vec(v) for v in alphas)
        self.betas = tuple(_vec(v) for v in betas)
        self.a = int(a)
        self.b = int(b)
        self.tail = tail if (tail is None or tail is QUARTIC) else _vec(tail)
        if len(self.mu) != len(self.nu):
            raise ValueError("mu and nu must have equal length")
        if any(e < 0 for e in self.mu + self.nu):
            raise ValueError("exponents must be nonnegative")
        if self.a + self.b > 4:
            raise ValueError("a + b must not exceed 4")
        if self.tail is QUARTIC:
            if (self.a, self.b) != (2, 2) or self.alphas or self.betas:
                raise ValueError("quartic marker requires a = b = 2 and no linear factors")
        elif self.a + self.b >= 2:
            if self.tail is None:
                raise ValueError("tail vector required when a + b >= 2")
        elif self.a + self.b == 1:
            raise ValueError("single f-powers must be folded into alphas/betas")
        elif self.tail is not None:
            raise ValueError("tail present without f-powers")

    # -- structure -----------------------------------------------------------

    @property
    def kind(self) -> str:
        nf = len(self.alphas) + len(self.betas) + self.a + self.b
        if nf == 0:
            return "scalar"
        if nf == 1:
            return "linear_f" if self.alphas else "linear_fbar"
        return "composite"

    @property
    def vector(self) -> np.ndarray:
        """Coupling vector of a linear term (including its scalar factor)."""
        if self.kind == "linear_f":
            return self.coeff * self.alphas[0]
        if self.kind == "linear_fbar":
            return self.coeff * self.betas[0]
        raise ValueError("vector defined only for linear terms")

    def ledger_sides(self) -> tuple[int, int]:
        return (sum(self.mu) + len(self.alphas) + self.a,
                sum(self.nu) + len(self.betas) + self.b)

    @property
    def is_balanced(self) -> bool:
        lhs, rhs = self.ledger_sides()
        return lhs == rhs

    @property
    def ledger(self) -> int:
        """L with |mu| + #alphas + a = L + 1 (balanced terms only)."""
        lhs, rhs = self.ledger_sides()
        if lhs != rhs:
            raise LedgerViolation(f"unbalanced term: ledger sides {lhs} != {rhs}")
        return lhs - 1

    @property
    def size(self) -> int:
        """max of the two ledger sides; degree bound for truncation."""
        return max(self.ledger_sides())

    def degree(self) -> int:
        """Total polynomial degree in (z, conj z, f, conj f)."""
        return sum(self.mu) + sum(self.nu) + len(self.alphas) + len(self.betas) + self.a + self.b

    def scaled(self, factor: complex) -> "HamTerm":
        return HamTerm(self.coeff * factor, self.m, self.mu, self.nu,
                       self.alphas, self.betas, self.a, self.b, self.tail)

    def with_vector(self, vector) -> "HamTerm":
        """Replace the coupling of a linear term, absorbing the scalar factor."""
        if self.kind == "linear_f":
            return HamTerm(1.0, self.m, self.mu, self.nu, alphas=(vector,))
        if self.kind == "linear_fbar":
            return HamTerm(1.0, self.m, self.mu, self.nu, betas=(vector,))
        raise ValueError("with_vector defined only for linear terms")

    # -- evaluation -----------------------------------------------------------

    def evaluate(self, t: float, z: np.ndarray, f: np.ndarray, h: float) -> complex:
        zb = np.conj(z)
        val = self.coeff * np.exp(1j * self.m * t)
        for j, e in enumerate(self.mu):
            if e:
                val *= z[j] ** e
        for j, e in enumerate(self.nu):
            if e:
                val *= zb[j] ** e
        fb = np.conj(f)
        for p in self.alphas:
            val *= pairing(p, f, h)
        for p in self.betas:
            val *= pairing(p, fb, h)
        if self.tail is QUARTIC:
            val *= 0.25 * pairing(f ** 2, fb ** 2, h)
        elif self.tail is not None:
            val *= pairing(f ** self.a * fb ** self.b, self.tail, h)
        return val

    def mirror(self) -> "HamTerm":
        """Conjugate-mirror m -> -m, mu <-> nu, couplings conjugated."""
        tail = self.tail
        if tail is not None and tail is not QUARTIC:
            tail = np.conj(tail)
        return HamTerm(np.conj(self.coeff), -self.m, self.nu, self.mu,
                       alphas=tuple(np.conj(p) for p in self.betas),
                       betas=tuple(np.conj(p) for p in self.alphas),
                       a=self.b, b=self.a, tail=tail)

    def __repr__(self):
        return (f"HamTerm({self.coeff:.3g}, m={self.m}, mu={self.mu}, nu={self.nu}, "
                f"kind={self.kind})")


def scalar_term(coeff, m, mu, nu) -> HamTerm:
    return HamTerm(coeff, m, mu, nu)


def linear_f_term(m, mu, nu, phi) -> HamTerm:
    return HamTerm(1.0, m, mu, nu, alphas=(phi,))


def linear_fbar_term(m, mu, nu, psi) -> HamTerm:
    return HamTerm(1.0, m, mu, nu, betas=(psi,))


_DIGEST_CACHE: dict = {}


def clear_vector_cache():
    _DIGEST_CACHE.clear()


def _vec_digest(v: np.ndarray) -> bytes:
    """Content hash used to merge composite terms sharing identical factors.

    Cached per array object; the cache keeps a reference so ids stay valid.
    """
    key = id(v)
    hit = _DIGEST_CACHE.get(key)
    if hit is not None and hit[0] is v:
        return hit[1]
    digest = hashlib.blake2b(np.ascontiguousarray(v).tobytes(), digest_size=12).digest()
    _DIGEST_CACHE[key] = (v, digest)
    return digest


def _composite_signature(t: HamTerm):
    tail_key = (b"quartic" if t.tail is QUARTIC
                else (b"" if t.tail is None else _vec_digest(t.tail)))
    return (t.m, t.mu, t.nu, t.a, t.b,
            tuple(sorted(_vec_digest(p) for p in t.alphas)),
            tuple(sorted(_vec_digest(p) for p in t.betas)),
            tail_key)


class HamExpansion:
    """Multiset of terms; scalar and linear terms merge on (m, mu, nu).

    Composite terms merge on the full symbolic signature (indices plus the
    content hashes of every factor vector); without this, iterated Lie
    derivatives multiply the term count geometrically.
    """

    def __init__(self, terms=(), order: int | None = None, n0: int | None = None):
        self.terms: list[HamTerm] = list(terms)
        self.order = order
        self.n0 = n0

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __add__(self, other):
        return HamExpansion(self.terms + list(other), order=self.order, n0=self.n0)

    def scaled(self, factor: complex) -> "HamExpansion":
        return HamExpansion([t.scaled(factor) for t in self.terms], self.order, self.n0)

    def merged(self) -> "HamExpansion":
        """Canonical form: merge mergeable kinds, drop negligible terms."""
        scalars: dict = {}
        lin_f: dict = {}
        lin_fb: dict = {}
        quartics: dict = {}
        comp_by_sig: dict = {}
        for t in self.terms:
            key = (t.m, t.mu, t.nu)
            if t.kind == "scalar":
                scalars[key] = scalars.get(key, 0.0) + t.coeff
            elif t.kind == "linear_f":
                lin_f[key] = lin_f.get(key, 0.0) + t.vector
            elif t.kind == "linear_fbar":
                lin_fb[key] = lin_fb.get(key, 0.0) + t.vector
            elif t.tail is QUARTIC:
                quartics[key] = quartics.get(key, 0.0) + t.coeff
            else:
                sig = _composite_signature(t)
                held = comp_by_sig.get(sig)
                if held is None:
                    comp_by_sig[sig] = [t, t.coeff]
                else:
                    held[1] += t.coeff
        composite = []
        for rep, coeff in comp_by_sig.values():
            if abs(coeff) > MERGE_TOL:
                composite.append(rep if coeff == rep.coeff else HamTerm(
                    coeff, rep.m, rep.mu, rep.nu, rep.alphas, rep.betas,
                    rep.a, rep.b, rep.tail))
        out: list[HamTerm] = []
        for (m, mu, nu), c in scalars.items():
            if abs(c) > MERGE_TOL:
                out.append(HamTerm(c, m, mu, nu))
        for (m, mu, nu), v in lin_f.items():
            if np.max(np.abs(v)) > MERGE_TOL:
                out.append(HamTerm(1.0, m, mu, nu, alphas=(v,)))
        for (m, mu, nu), v in lin_fb.items():
            if np.max(np.abs(v)) > MERGE_TOL:
                out.append(HamTerm(1.0, m, mu, nu, betas=(v,)))
        for (m, mu, nu), c in quartics.items():
            if abs(c) > MERGE_TOL:
                out.append(HamTerm(c, m, mu, nu, a=2, b=2, tail=QUARTIC))
        out.extend(composite)
        return HamExpansion(out, order=self.order, n0=self.n0)

    def evaluate(self, t: float, z, f, h: float) -> complex:
        z = np.asarray(z, dtype=complex)
        f = np.asarray(f, dtype=complex)
        return sum((term.evaluate(t, z, f, h) for term in self.terms), 0.0 + 0.0j)

    def select(self, pred) -> "HamExpansion":
        return HamExpansion([t for t in self.terms if pred(t)], self.order, self.n0)


# ---------------------------------------------------------------------------
# bracket with the quadratic part H_F


def bracket_hf(term: HamTerm, lam: np.ndarray, model: OperatorModel | None = None) -> HamTerm:
    """{H_F, term} for scalar and linear terms.

    Scalar terms scale by i(lambda.(mu - nu) - m); linear couplings pick up the
    operator factor +/- i (H - shift), applied through the spectral model.
    """
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(term.mu)
    nu = np.asarray(term.nu)
    omega = float(lam @ (mu - nu)) - term.m
    if term.kind == "scalar":
        return term.scaled(1j * omega)
    if term.kind == "linear_f":
        if model is None:
            raise ValueError("linear terms need the operator model")
        # shift lambda.(nu - mu) + m equals -omega
        new = 1j * (model.apply_h(term.vector) + omega * term.vector)
        return term.with_vector(new)
    if term.kind == "linear_fbar":
        if model is None:
            raise ValueError("linear terms need the operator model")
        new = -1j * (model.apply_h(term.vector) - omega * term.vector)
        return term.with_vector(new)
    raise NlsnfError("bracket_hf covers scalar and linear terms only")


# ---------------------------------------------------------------------------
# generator class and Lie derivatives


@dataclass
class GeneratorInfo:
    m0: int
    big_m0: int


def generator_info(chi: HamExpansion) -> GeneratorInfo:
    """Validate the admissible generator shape and infer (m0, M0)."""
    big_m0 = None
    m0 = 0
    for t in chi.terms:
        smu, snu = sum(t.mu), sum(t.nu)
        if t.kind == "scalar":
            if smu != snu:
                raise GeneratorClassError("generator scalar terms need |mu| = |nu|")
            m_here = smu - 1
        elif t.kind == "linear_f":
            if smu != snu - 1:
                raise GeneratorClassError("generator <Phi, f> terms need |mu| = |nu| - 1")
            m_here = smu
        elif t.kind == "linear_fbar":
            if snu != smu - 1:
                raise GeneratorClassError("generator <Psi, conj f> terms need |nu| = |mu| - 1")
            m_here = snu
        else:
            raise GeneratorClassError("generator terms must be scalar or linear")
        if m_here < 1:
            raise GeneratorClassError("generator order M0 must be at least 1")
        if big_m0 is None:
            big_m0 = m_here
        elif big_m0 != m_here:
            raise GeneratorClassError(f"mixed generator orders {big_m0} and {m_here}")
        m0 = max(m0, abs(t.m))
    if big_m0 is None:
        raise GeneratorClassError("empty generator")
    return GeneratorInfo(m0=m0, big_m0=big_m0)


def _tail_canonical(term_args: dict) -> HamTerm:
    """Fold an (a, b) <= 1 tail into the linear factor lists."""
    a, b, tail = term_args["a"], term_args["b"], term_args["tail"]
    if tail is not None and tail is not QUARTIC and a + b == 1:
        if a == 1:
            term_args["alphas"] = term_args["alphas"] + (tail,)
        else:
            term_args["betas"] = term_args["betas"] + (tail,)
        term_args["a"] = term_args["b"] = 0
        term_args["tail"] = None
    if tail is not None and tail is not QUARTIC and a + b == 0:
        raise NlsnfError("internal: tail left without f-powers")
    return HamTerm(**term_args)


def _term_args(coeff, m, mu, nu, alphas, betas, a, b, tail):
    return dict(coeff=coeff, m=m, mu=tuple(mu), nu=tuple(nu),
                alphas=tuple(alphas), betas=tuple(betas), a=a, b=b, tail=tail)


def _lie_single(g: HamTerm, ct: HamTerm, h: float, pc) -> list[HamTerm]:
    """{g, chi_term}: z-part plus the two f-pairings."""
    out: list[HamTerm] = []
    mu_g, nu_g = np.asarray(g.mu), np.asarray(g.nu)
    mu_c, nu_c = np.asarray(ct.mu), np.asarray(ct.nu)
    m_new = g.m + ct.m
    base = g.coeff * ct.coeff

    # i sum_j (dg/dzbar_j dchi/dz_j - dg/dz_j dchi/dzbar_j), j = 0..n
    for j in range(len(mu_g)):
        w = nu_g[j] * mu_c[j] - mu_g[j] * nu_c[j]
        if w == 0:
            continue
        mu_n = mu_g + mu_c
        nu_n = nu_g + nu_c
        mu_n[j] -= 1
        nu_n[j] -= 1
        merged = _merge_factors(g, ct)
        out.append(_tail_canonical(_term_args(
            1j * w * base, m_new, mu_n, nu_n, *merged)))

    # + i <grad_fbar g, grad_f chi>: chi contributes its Phi coupling
    if ct.kind == "linear_f":
        phi_c = ct.alphas[0]
        out.extend(_pair_fbar_slots(g, ct, phi_c, +1j * base, m_new, h, pc))
    # - i <grad_fbar chi, grad_f g>: chi contributes its Psi coupling
    if ct.kind == "linear_fbar":
        psi_c = ct.betas[0]
        out.extend(_pair_f_slots(g, ct, psi_c, -1j * base, m_new, h, pc))
    return out


def _merge_factors(g: HamTerm, ct: HamTerm):
    # product of the f-structures; chi has at most one linear factor, no tail
    return (g.alphas + ct.alphas, g.betas + ct.betas, g.a, g.b, g.tail)


def _pair_fbar_slots(g, ct, phi_c, scale, m_new, h, pc):
    """Pair grad_fbar of g (each conj(f) slot) against the vector phi_c."""
    out = []
    mu_n = tuple(np.asarray(g.mu) + np.asarray(ct.mu))
    nu_n = tuple(np.asarray(g.nu) + np.asarray(ct.nu))
    for idx, psi in enumerate(g.betas):
        val = pairing(psi, phi_c, h)
        betas = g.betas[:idx] + g.betas[idx + 1:]
        out.append(_tail_canonical(_term_args(
            scale * val, m_new, mu_n, nu_n, g.alphas, betas, g.a, g.b, g.tail)))
    if g.tail is QUARTIC:
        # grad_fbar (1/4)|f|^4 = (1/2) f^2 conj(f)
        out.append(_tail_canonical(_term_args(
            scale * 0.5, m_new, mu_n, nu_n, g.alphas, g.betas, 2, 1, pc(phi_c))))
    elif g.b > 0:
        tail = g.tail * phi_c
        out.append(_tail_canonical(_term_args(
            scale * g.b, m_new, mu_n, nu_n, g.alphas, g.betas, g.a, g.b - 1, tail)))
    return out


def _pair_f_slots(g, ct, psi_c, scale, m_new, h, pc):
    """Pair grad_f of g (each f slot) against the vector psi_c."""
    out = []
    mu_n = tuple(np.asarray(g.mu) + np.asarray(ct.mu))
    nu_n = tuple(np.asarray(g.nu) + np.asarray(ct.nu))
    for idx, phi in enumerate(g.alphas):
        val = pairing(phi, psi_c, h)
        alphas = g.alphas[:idx] + g.alphas[idx + 1:]
        out.append(_tail_canonical(_term_args(
            scale * val, m_new, mu_n, nu_n, alphas, g.betas, g.a, g.b, g.tail)))
    if g.tail is QUARTIC:
        out.append(_tail_canonical(_term_args(
            scale * 0.5, m_new, mu_n, nu_n, g.alphas, g.betas, 1, 2, pc(psi_c))))
    elif g.a > 0:
        tail = g.tail * psi_c
        out.append(_tail_canonical(_term_args(
            scale * g.a, m_new, mu_n, nu_n, g.alphas, g.betas, g.a - 1, g.b, tail)))
    return out


def lie_derivative(chi: HamExpansion, g, model: OperatorModel) -> HamExpansion:
    """lie_chi(g) = {g, chi} for a generator-class chi.

    Asserts the closure ledger on every output term generated from a balanced
    input: sizes grow by exactly M0 and |m'| <= m0 + |m|.
    """
    info = generator_info(chi)
    h = model.grid.h
    pc = model.project_pc
    terms = g.terms if isinstance(g, HamExpansion) else [g]
    out: list[HamTerm] = []
    for t in terms:
        balanced = t.is_balanced
        size_in = t.size
        for ct in chi.terms:
            for nt in _lie_single(t, ct, h, pc):
                if abs(nt.coeff) <= MERGE_TOL and nt.kind in ("scalar",):
                    continue
                if balanced:
                    if not nt.is_balanced:
                        raise LedgerViolation(f"lie output unbalanced: {nt}")
                    if nt.ledger != size_in - 1 + info.big_m0:
                        raise LedgerViolation(
                            f"ledger law broken: L' = {nt.ledger}, expected "
                            f"{size_in - 1} + {info.big_m0}")
                if abs(nt.m) > info.m0 + abs(t.m):
                    raise LedgerViolation(f"harmonic bound broken on {nt}")
                if nt.a + nt.b >= 4 and nt.tail is not QUARTIC:
                    raise LedgerViolation("f-power count must stay below 4")
                out.append(nt)
    return HamExpansion(out).merged()


@dataclass
class DropLedger:
    """Terms discarded by the degree cap (the observed remainder class)."""

    count: int = 0
    coeff_mass: float = 0.0
    by_size: dict = field(default_factory=dict)

    def add(self, term: HamTerm):
        self.count += 1
        self.coeff_mass += abs(term.coeff)
        self.by_size[term.size] = self.by_size.get(term.size, 0) + 1

    def merge(self, other: "DropLedger"):
        self.count += other.count
        self.coeff_mass += other.coeff_mass
        for k, v in other.by_size.items():
            self.by_size[k] = self.by_size.get(k, 0) + v


def lie_series(
    chi: HamExpansion,
    ham: HamExpansion,
    model: OperatorModel,
    n0: int,
    degree_cap: int,
    include_identity: bool = True,
    weights=None,
) -> tuple[HamExpansion, DropLedger]:
    """ham o F = ham + sum_{l<=n0} lie^l(ham)/l!, capped in polynomial degree.

    Terms whose polynomial degree 2(L + 1) exceeds degree_cap are dropped and
    counted: they belong to the observed-only remainder class, whose bound
    carries the exponent degree_cap in the field amplitudes.  `weights[l]`
    overrides the 1/l! coefficient of the l-th Lie power (normal_form_round
    uses this for the Taylor block of the quadratic part).
    """
    dropped = DropLedger()
    out: list[HamTerm] = []
    if include_identity:
        out.extend(ham.terms)
    if n0 <= 0 or len(chi) == 0 or len(ham) == 0:
        return HamExpansion(out).merged(), dropped

    current = ham
    for l in range(1, n0 + 1):
        current = lie_derivative(chi, current, model)
        keep = []
        for t in current.terms:
            if 2 * t.size > degree_cap:
                dropped.add(t)
            else:
                keep.append(t)
        current = HamExpansion(keep)
        if len(current) == 0:
            break
        w = (1.0 / math.factorial(l)) if weights is None else weights.get(l, 0.0)
        if w != 0.0:
            out.extend(current.scaled(w).terms)
    return HamExpansion(out).merged(), dropped


# ---------------------------------------------------------------------------
# reality symmetry


def check_reality(ham: HamExpansion, grid: GridSpec, tol: float = REALITY_TOL):
    """True iff every term's conjugate mirror is present with conjugate data.

    Scalar and linear terms are compared structurally after merging; composite
    terms are compared bucketwise through deterministic probe states (a bucket
    is the set of terms sharing (m, mu, nu, a, b, #alphas, #betas)).
    Returns (ok, first_violation_description).
    """
    ham = ham.merged()
    h = grid.h
    scale = max((abs(t.coeff) * (1.0 + sum(np.max(np.abs(p)) for p in t.alphas + t.betas))
                 for t in ham.terms), default=0.0)
    if scale == 0.0:
        return True, None
    tol_abs = tol * max(scale, 1.0)

    scalars = {(t.m, t.mu, t.nu): t.coeff for t in ham.terms if t.kind == "scalar"
               and t.tail is not QUARTIC}
    lin_f = {(t.m, t.mu, t.nu): t.vector for t in ham.terms if t.kind == "linear_f"}
    lin_fb = {(t.m, t.mu, t.nu): t.vector for t in ham.terms if t.kind == "linear_fbar"}
    quart = {(t.m, t.mu, t.nu): t.coeff for t in ham.terms
             if t.kind == "composite" and t.tail is QUARTIC}

    for (m, mu, nu), c in scalars.items():
        cm = scalars.get((-m, nu, mu))
        if cm is None or abs(np.conj(c) - cm) > tol_abs:
            return False, f"scalar (m={m}, mu={mu}, nu={nu}) has no conjugate mirror"
    for (m, mu, nu), v in lin_f.items():
        vm = lin_fb.get((-m, nu, mu))
        if vm is None or np.max(np.abs(np.conj(v) - vm)) > tol_abs:
            return False, f"<Phi, f> term (m={m}, mu={mu}, nu={nu}) has no conjugate mirror"
    for (m, mu, nu), v in lin_fb.items():
        vm = lin_f.get((-m, nu, mu))
        if vm is None or np.max(np.abs(np.conj(v) - vm)) > tol_abs:
            return False, f"<Psi, conj f> term (m={m}, mu={mu}, nu={nu}) has no conjugate mirror"
    for (m, mu, nu), c in quart.items():
        cm = quart.get((-m, nu, mu))
        if cm is None or abs(np.conj(c) - cm) > tol_abs:
            return False, f"quartic marker (m={m}) has no conjugate mirror"

    comps = [t for t in ham.terms if t.kind == "composite" and t.tail is not QUARTIC]
    if comps:
        buckets: dict = {}
        for t in comps:
            key = (t.m, t.mu, t.nu, t.a, t.b, len(t.alphas), len(t.betas))
            buckets.setdefault(key, []).append(t)
        rng = np.random.default_rng(20240817)
        probes = [
            (rng.standard_normal(grid.m_pts) + 1j * rng.standard_normal(grid.m_pts))
            * np.exp(-grid.x ** 2 / (2.0 * (0.2 * grid.l_box) ** 2))
            for _ in range(3)
        ]
        z0 = rng.standard_normal(len(comps[0].mu)) + 1j * rng.standard_normal(len(comps[0].mu))
        for key, terms in buckets.items():
            m, mu, nu, a, b, na, nb = key
            mkey = (-m, nu, mu, b, a, nb, na)
            mirror_terms = buckets.get(mkey, [])
            for f in probes:
                v1 = sum(t.evaluate(0.0, z0, f, h) for t in terms)
                v2 = sum(t.mirror().evaluate(0.0, z0, f, h) for t in mirror_terms)
                # mirror of the mirror-bucket must reproduce the bucket
                if abs(v1 - v2) > tol_abs * (1.0 + abs(v1)):
                    return False, f"composite bucket {key} has no conjugate mirror"
    return True, None


# ---------------------------------------------------------------------------
# the forced quartic energy


def expand_potential_energy(model: OperatorModel, gamma0: float, gamma1: float) -> HamExpansion:
    """Forced quartic energy gamma(t) int |z.phi + f|^4 / 2 as an expansion.

    The /2 normalization makes the Wirtinger gradient of the energy generate
    exactly the cubic nonlinearity gamma(t) |u|^2 u of the simulated flow.
    gamma(t) = gamma0 + gamma1 cos t contributes harmonics m in {-1, 0, +1}
    with coefficients gamma0/2 and gamma1/4 on the quartic integrand.
    """
    h = model.grid.h
    nb = len(model.lam)
    phi = model.phi
    harmonics = []
    if gamma0 != 0.0:
        harmonics.append((0, gamma0 / 2.0))
    if gamma1 != 0.0:
        harmonics.append((1, gamma1 / 4.0))
        harmonics.append((-1, gamma1 / 4.0))
    if not harmonics:
        return HamExpansion([])

    def e(j):
        v = [0] * nb
        v[j] = 1
        return np.array(v, dtype=int)

    terms: list[HamTerm] = []
    pc = model.project_pc
    for m, cg in harmonics:
        # u^2 = A + B + C, A = sum z_j z_k phi_j phi_k, B = 2 (z.phi) f, C = f^2
        for j in range(nb):
            for k in range(nb):
                pjk = phi[j] * phi[k]
                # A Abar: pure z monomials
                for jj in range(nb):
                    for kk in range(nb):
                        coeff = cg * h * np.sum(pjk * phi[jj] * phi[kk])
                        terms.append(HamTerm(coeff, m, tuple(e(j) + e(k)), tuple(e(jj) + e(kk))))
                # A Bbar: 2 z_j z_k zbar_l <phi_j phi_k phi_l, conj f>
                for l in range(nb):
                    vec = 2.0 * cg * pc(pjk * phi[l])
                    terms.append(HamTerm(1.0, m, tuple(e(j) + e(k)), tuple(e(l)), betas=(vec,)))
                # A Cbar: z_j z_k <conj(f)^2, phi_j phi_k>
                terms.append(HamTerm(cg, m, tuple(e(j) + e(k)), (0,) * nb, a=0, b=2, tail=pjk))
        for j in range(nb):
            # B Abar mirror of A Bbar
            for k in range(nb):
                for l in range(nb):
                    vec = 2.0 * cg * pc(phi[j] * phi[k] * phi[l])
                    terms.append(HamTerm(1.0, m, tuple(e(j)), tuple(e(k) + e(l)), alphas=(vec,)))
            # B Bbar: 4 z_j zbar_k <f conj f, phi_j phi_k>
            for k in range(nb):
                terms.append(HamTerm(4.0 * cg, m, tuple(e(j)), tuple(e(k)),
                                     a=1, b=1, tail=phi[j] * phi[k]))
            # B Cbar: 2 z_j <f conj(f)^2, phi_j>
            terms.append(HamTerm(2.0 * cg, m, tuple(e(j)), (0,) * nb, a=1, b=2, tail=phi[j]))
            # C Bbar: 2 zbar_j <f^2 conj f, phi_j>
            terms.append(HamTerm(2.0 * cg, m, (0,) * nb, tuple(e(j)), a=2, b=1, tail=phi[j]))
        # C Abar
        for jj in range(nb):
            for kk in range(nb):
                terms.append(HamTerm(cg, m, (0,) * nb, tuple(e(jj) + e(kk)),
                                     a=2, b=0, tail=phi[jj] * phi[kk]))
        # C Cbar: quartic marker, value (1/4) int f^2 conj(f)^2, so coefficient 4 cg
        terms.append(HamTerm(4.0 * cg, m, (0,) * nb, (0,) * nb, a=2, b=2, tail=QUARTIC))
    return HamExpansion(terms).merged()


def hf_value(model: OperatorModel, z, f) -> float:
    """Quadratic part sum lambda_j |z_j|^2 + <H f, conj f> (tau dropped)."""
    h = model.grid.h
    z = np.asarray(z, dtype=complex)
    quad = float(np.real(pairing(model.apply_h(np.asarray(f, dtype=complex)), np.conj(f), h)))
    return float(np.sum(model.lam * np.abs(z) ** 2)) + quad


# ---------------------------------------------------------------------------
# gradients


def gradient_zbar(ham: HamExpansion, j: int) -> HamExpansion:
    out = []
    for t in ham.terms:
        if t.nu[j] == 0:
            continue
        nu = list(t.nu)
        nu[j] -= 1
        out.append(HamTerm(t.coeff * t.nu[j], t.m, t.mu, tuple(nu),
                           t.alphas, t.betas, t.a, t.b, t.tail))
    return HamExpansion(out)


def gradient_z(ham: HamExpansion, j: int) -> HamExpansion:
    out = []
    for t in ham.terms:
        if t.mu[j] == 0:
            continue
        mu = list(t.mu)
        mu[j] -= 1
        out.append(HamTerm(t.coeff * t.mu[j], t.m, tuple(mu), t.nu,
                           t.alphas, t.betas, t.a, t.b, t.tail))
    return HamExpansion(out)


class FbarGradient:
    """grad_{conj f} of an expansion: evaluable, with the f-independent part listed."""

    def __init__(self, ham: HamExpansion, model: OperatorModel):
        self.ham = ham.merged()
        self.model = model
        # terms whose gradient does not depend on f: single <Psi, conj f> factor
        self.linear_terms = [t for t in self.ham.terms if t.kind == "linear_fbar"]

    def evaluate(self, t: float, z, f) -> np.ndarray:
        model = self.model
        h = model.grid.h
        z = np.asarray(z, dtype=complex)
        f = np.asarray(f, dtype=complex)
        fb = np.conj(f)
        zb = np.conj(z)
        out = np.zeros(model.grid.m_pts, dtype=complex)
        for term in self.ham.terms:
            zmon = term.coeff * np.exp(1j * term.m * t)
            for jj, ex in enumerate(term.mu):
                if ex:
                    zmon *= z[jj] ** ex
            for jj, ex in enumerate(term.nu):
                if ex:
                    zmon *= zb[jj] ** ex
            if zmon == 0.0:
                continue
            pair_alpha = [pairing(p, f, h) for p in term.alphas]
            pair_beta = [pairing(p, fb, h) for p in term.betas]
            prod_alpha = complex(np.prod(pair_alpha)) if pair_alpha else 1.0
            if term.tail is QUARTIC:
                # grad_{conj f} (1/4) f^2 conj(f)^2 = (1/2) f^2 conj(f)
                out += zmon * 0.5 * f ** 2 * fb
                continue
            tail_val = (pairing(f ** term.a * fb ** term.b, term.tail, h)
                        if term.tail is not None else 1.0)
            # each <Psi_j, conj f> slot releases its vector Psi_j
            for idx, p in enumerate(term.betas):
                others = complex(np.prod(pair_beta[:idx] + pair_beta[idx + 1:])) \
                    if len(pair_beta) > 1 else 1.0
                out += zmon * prod_alpha * others * tail_val * p
            # the tail contributes b f^a conj(f)^{b-1} tail
            if term.tail is not None and term.b > 0:
                prod_beta = complex(np.prod(pair_beta)) if pair_beta else 1.0
                out += (zmon * prod_alpha * prod_beta * term.b
                        * f ** term.a * fb ** (term.b - 1) * term.tail)
        return self.model.project_pc(out)


def gradient_fbar(ham: HamExpansion, model: OperatorModel) -> FbarGradient:
    return FbarGradient(ham, model)


# ---------------------------------------------------------------------------
# generator flow (used by the truncation-consistency checks)


def generator_flow(chi: HamExpansion, t: float, z, f, model: OperatorModel,
                   steps: int = 64) -> tuple[np.ndarray, np.ndarray, float]:
    """Time-1 flow of the Hamiltonian field of chi from (z, f), fixed t slice.

    RK4 on zdot_j = -i dchi/dzbar_j, fdot = -i grad_{conj f} chi, and the
    action shift psidot = dchi/dt.  The harmonic factor is frozen at the given
    t (the flow parameter does not advance t), but the shift psi feeds the
    -tau part of the quadratic Hamiltonian, so composition identities need it.
    Returns (z', f', psi).  Requires a real-symmetric chi: the flow is tracked
    on the reality plane conj(z), conj(f).
    """
    z = np.asarray(z, dtype=complex).copy()
    f = np.asarray(f, dtype=complex).copy()
    grads = [gradient_zbar(chi, j) for j in range(len(z))]
    gfbar = gradient_fbar(chi, model)
    dchidt = HamExpansion([term.scaled(1j * term.m) for term in chi.terms if term.m])
    h = model.grid.h
    psi = 0.0

    def rhs(zc, fc):
        dz = np.array([-1j * g.evaluate(t, zc, fc, h) for g in grads])
        df = -1j * gfbar.evaluate(t, zc, fc)
        dpsi = dchidt.evaluate(t, zc, fc, h).real if len(dchidt) else 0.0
        return dz, df, dpsi

    ds = 1.0 / steps
    for _ in range(steps):
        k1z, k1f, k1p = rhs(z, f)
        k2z, k2f, k2p = rhs(z + 0.5 * ds * k1z, f + 0.5 * ds * k1f)
        k3z, k3f, k3p = rhs(z + 0.5 * ds * k2z, f + 0.5 * ds * k2f)
        k4z, k4f, k4p = rhs(z + ds * k3z, f + ds * k3f)
        z = z + (ds / 6.0) * (k1z + 2 * k2z + 2 * k3z + k4z)
        f = f + (ds / 6.0) * (k1f + 2 * k2f + 2 * k3f + k4f)
        psi = psi + (ds / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
    return z, f, psi


# ---------------------------------------------------------------------------
# serialization


def expansion_to_records(ham: HamExpansion) -> tuple[list[dict], dict[str, np.ndarray]]:
    """JSON-able term records plus a vector table for an npz sidecar."""
    records = []
    vectors: dict[str, np.ndarray] = {}

    def store(vec) -> str:
        key = f"v{len(vectors)}"
        vectors[key] = np.asarray(vec)
        return key

    for t in ham.terms:
        rec = {
            "m": t.m, "mu": list(t.mu), "nu": list(t.nu), "kind": t.kind,
            "coeff": [t.coeff.real, t.coeff.imag], "a": t.a, "b": t.b,
        }
        if t.alphas:
            rec["alphas"] = [store(v) for v in t.alphas]
        if t.betas:
            rec["betas"] = [store(v) for v in t.betas]
        if t.tail is QUARTIC:
            rec["tail"] = "quartic"
        elif t.tail is not None:
            rec["tail"] = store(t.tail)
        records.append(rec)
    return records, vectors


def expansion_from_records(records, vectors) -> HamExpansion:
    terms = []
    for rec in records:
        tail = rec.get("tail")
        if tail == "quartic":
            tail_v = QUARTIC
        elif tail is not None:
            tail_v = vectors[tail]
        else:
            tail_v = None
        terms.append(HamTerm(
            complex(rec["coeff"][0], rec["coeff"][1]), rec["m"],
            tuple(rec["mu"]), tuple(rec["nu"]),
            alphas=tuple(vectors[k] for k in rec.get("alphas", ())),
            betas=tuple(vectors[k] for k in rec.get("betas", ())),
            a=rec.get("a", 0), b=rec.get("b", 0), tail=tail_v,
        ))
    return HamExpansion(terms)
