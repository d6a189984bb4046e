"""Discretized Schrödinger operator H = -Delta + V + c on a periodic 1-D box.

The operator is represented spectrally: the kinetic matrix is the circulant
generated by the Fourier symbol k^2, so the dense model and the FFT-based
propagator in `dynamics` describe exactly the same discrete operator.  A dense
symmetric eigendecomposition provides bound states, resolvents and the two
spectral-density estimators (extrapolated limiting absorption and smoothed
eigenvalue histogram).

Bound states on the finite box are identified by boundary localization, not
just by lying below the continuum threshold c: a shallow box can produce
delocalized levels slightly below c which belong, physically, to the
discretized continuum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BoundaryDecayError,
    EmptySpectrumError,
    GridMismatchError,
    NumericalError,
    SingularResolventError,
)

TOL_GROUND = 1e-12
TOL_EIG_RESIDUAL = 1e-9
TOL_RESOLVENT = 1e-9
EDGE_LOCALIZATION = 1e-2  # max boundary amplitude fraction for a bound state
V_BOUNDARY_DECAY = 1e-12

# limiting-absorption estimator: nodes geometric in [LAP_FLOOR*sqrt(a)/L, a/2],
# least-squares quadratic in eps evaluated at eps=0 (a = w - c)
LAP_FLOOR = 5.0
LAP_EMAX_FRAC = 0.5
LAP_NODES = 8
LAP_RATIO = 0.7
LAP_FIT_DEGREE = 2

# histogram estimator: fourth-order Gaussian kernel, width tied to the local
# level spacing but capped away from the continuum edge
HIST_SIGMA_FACTOR = 1.3
HIST_SIGMA_EDGE_CAP = 0.35


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [-l_box, l_box)."""

    l_box: float = 40.0
    m_pts: int = 2048
    dimension: int = 1

    def __post_init__(self):
        if self.dimension != 1:
            raise ValueError("only dimension 1 is implemented")
        if self.m_pts < 64 or (self.m_pts & (self.m_pts - 1)) != 0:
            raise ValueError("m_pts must be a power of two, at least 64")
        if self.l_box <= 0:
            raise ValueError("l_box must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.l_box / self.m_pts

    @property
    def x(self) -> np.ndarray:
        return -self.l_box + self.h * np.arange(self.m_pts)

    @property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.m_pts, d=self.h)


def pairing(u, v, h: float) -> complex:
    """Bilinear pairing <u, v> = integral u v dx (no conjugation)."""
    return complex(h * np.dot(u, v))


def inner(u, v, h: float) -> complex:
    """Hermitian inner product integral conj(u) v dx."""
    return complex(h * np.vdot(u, v))


def l2_norm(u, h: float) -> float:
    return float(np.sqrt(h) * np.linalg.norm(u))


# ---------------------------------------------------------------------------
# potentials


def poschl_teller(x, a: float = 1.5, kappa2: float = 0.35) -> np.ndarray:
    """V(x) = -a(a+1) kappa^2 sech^2(kappa x); bound levels -kappa^2 (a-k)^2."""
    kappa = math.sqrt(kappa2)
    return -a * (a + 1.0) * kappa2 / np.cosh(kappa * x) ** 2


def gaussian_well(x, depth: float, width: float) -> np.ndarray:
    return -depth * np.exp(-(x ** 2) / (2.0 * width ** 2))


def sech2_well(x, depth: float = 2.0) -> np.ndarray:
    return -depth / np.cosh(x) ** 2


_PRESETS = {
    "poschl_teller": (poschl_teller, ("a", "kappa2")),
    "gaussian_well": (gaussian_well, ("depth", "width")),
    "sech2_well": (sech2_well, ("depth",)),
}


def potential_from_preset(grid: GridSpec, name: str, **params) -> np.ndarray:
    if name not in _PRESETS:
        raise ValueError(f"unknown potential preset {name!r}")
    fn, _ = _PRESETS[name]
    return fn(grid.x, **params)


def potential_from_csv(grid: GridSpec, path) -> np.ndarray:
    """Load (x, V) samples and interpolate onto the grid."""
    data = np.loadtxt(path, delimiter=",", comments="#")
    if data.ndim != 2 or data.shape[1] < 2:
        raise ValueError("potential CSV must have two columns (x, V)")
    xs, vs = data[:, 0], data[:, 1]
    if xs[0] > grid.x[0] or xs[-1] < grid.x[-1]:
        raise ValueError("potential samples do not cover the box")
    return np.interp(grid.x, xs, vs)


# ---------------------------------------------------------------------------
# operator model


@dataclass
class ModeState:
    """Discrete amplitudes z, radiation part f (P_c f = f) and the time t."""

    z: np.ndarray
    f: np.ndarray
    t: float = 0.0


@dataclass
class OperatorModel:
    grid: GridSpec
    v: np.ndarray
    c: float
    lam: np.ndarray               # bound eigenvalues, lam[0] = 0
    phi: np.ndarray               # (n+1, M) bound eigenvectors, quadrature-normalized
    mode_energies: np.ndarray     # all box eigenvalues of H (generic) or k^2 + c (free)
    _evecs: np.ndarray | None = field(default=None, repr=False)   # columns, l2-normalized
    _h_dense: np.ndarray | None = field(default=None, repr=False)
    is_free: bool = False

    @property
    def n(self) -> int:
        return len(self.lam) - 1

    @property
    def n_bound(self) -> int:
        return len(self.lam) - 1

    # -- mode transforms (quadrature-normalized eigenbasis) ------------------

    def mode_coeffs(self, vec: np.ndarray) -> np.ndarray:
        """Coefficients <e_j, vec> in the full box eigenbasis."""
        self._check_grid(vec)
        h = self.grid.h
        if self.is_free:
            return np.fft.fft(vec) * h / math.sqrt(2.0 * self.grid.l_box)
        return math.sqrt(h) * (self._evecs.T @ vec)

    def from_mode_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        h = self.grid.h
        if self.is_free:
            return np.fft.ifft(coeffs) * math.sqrt(2.0 * self.grid.l_box) / h
        return (self._evecs @ coeffs) / math.sqrt(h)

    def apply_h(self, vec: np.ndarray) -> np.ndarray:
        self._check_grid(vec)
        if self.is_free:
            return np.fft.ifft(self.grid.k ** 2 * np.fft.fft(vec)) + self.c * vec
        return self._h_dense @ vec

    def project_pc(self, vec: np.ndarray) -> np.ndarray:
        """Remove the bound-state components (projection onto the continuum)."""
        self._check_grid(vec)
        if self.is_free or len(self.lam) == 0:
            return np.asarray(vec, dtype=complex)
        h = self.grid.h
        out = np.asarray(vec, dtype=complex).copy()
        for j in range(len(self.lam)):
            out -= (h * np.dot(self.phi[j], vec)) * self.phi[j]
        return out

    def pd_weight(self, vec: np.ndarray) -> float:
        """Norm of the bound-state component of vec."""
        if len(self.lam) == 0:
            return 0.0
        h = self.grid.h
        comps = np.array([h * np.dot(self.phi[j], vec) for j in range(len(self.lam))])
        return float(np.linalg.norm(comps))

    def n_continuum_start(self) -> int:
        """Index separating bound modes from continuum modes in mode_energies."""
        return 0 if self.is_free else len(self.lam)

    def _check_grid(self, vec):
        if np.shape(vec)[-1] != self.grid.m_pts:
            raise GridMismatchError(
                f"vector of length {np.shape(vec)[-1]} on grid with {self.grid.m_pts} points"
            )


def kinetic_matrix(grid: GridSpec) -> np.ndarray:
    """Dense circulant for -d2/dx2 with the FFT symbol k^2."""
    col = np.fft.ifft(grid.k ** 2).real
    idx = (np.arange(grid.m_pts)[:, None] - np.arange(grid.m_pts)) % grid.m_pts
    t = col[idx]
    return 0.5 * (t + t.T)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # column convention: the largest-magnitude component is positive
    out = vecs.copy()
    for j in range(out.shape[1]):
        i = int(np.argmax(np.abs(out[:, j])))
        if out[i, j] < 0:
            out[:, j] = -out[:, j]
    return out


def _edge_fraction(vec_abs: np.ndarray) -> float:
    m = len(vec_abs)
    w = max(m // 40, 4)
    edge = max(vec_abs[:w].max(), vec_abs[-w:].max())
    return float(edge / vec_abs.max())


def build_operator(grid: GridSpec, v: np.ndarray, c_target: float | None = None) -> OperatorModel:
    """Diagonalize -Delta + V, tune c so the ground state sits exactly at 0.

    Bound states are the boundary-localized eigenvectors below c.  Raises
    EmptySpectrumError when -Delta + V >= 0 (no discrete spectrum) and
    BoundaryDecayError when V fails to decay at the box edge.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.m_pts,):
        raise GridMismatchError("potential not sampled on the grid")
    if max(abs(v[0]), abs(v[-1])) > V_BOUNDARY_DECAY:
        raise BoundaryDecayError(
            f"|V| = {max(abs(v[0]), abs(v[-1])):.3e} at the box boundary "
            f"(required < {V_BOUNDARY_DECAY:.0e}); enlarge the box"
        )

    h0 = kinetic_matrix(grid) + np.diag(v)
    evals, evecs = np.linalg.eigh(h0)
    if evals[0] >= -TOL_GROUND:
        raise EmptySpectrumError("empty discrete spectrum: -Delta + V has no bound state")

    c = -float(evals[0])
    energies = evals + c
    energies[0] = 0.0  # exact by construction
    evecs = _fix_signs(evecs)

    bound = []
    for j in range(len(energies)):
        if energies[j] >= c - 1e-8:
            break
        if _edge_fraction(np.abs(evecs[:, j])) < EDGE_LOCALIZATION:
            bound.append(j)
    if not bound or bound[0] != 0:
        raise EmptySpectrumError("ground state is not boundary-localized; enlarge the box")

    sqh = math.sqrt(grid.h)
    phi = np.stack([evecs[:, j] / sqh for j in bound])
    lam = energies[np.array(bound)]

    if c_target is not None and abs(c - c_target) > 0.1 * max(abs(c_target), 1.0):
        import warnings

        warnings.warn(f"tuned c = {c:.6g} is far from the requested c_target = {c_target:.6g}")

    model = OperatorModel(
        grid=grid, v=v, c=c, lam=lam, phi=phi,
        mode_energies=energies, _evecs=evecs, _h_dense=h0 + c * np.eye(grid.m_pts),
    )
    _validate_eigenpairs(model)
    return model


def free_operator(grid: GridSpec, c: float = 0.0) -> OperatorModel:
    """V = 0 model diagonalized by the FFT; used by oracle tests.

    Continuum threshold is c and there are no bound states, so this model is
    intentionally not constructible through build_operator.
    """
    energies = grid.k ** 2 + c  # FFT ordering, matching mode_coeffs
    return OperatorModel(
        grid=grid, v=np.zeros(grid.m_pts), c=c,
        lam=np.empty(0), phi=np.empty((0, grid.m_pts)),
        mode_energies=energies, is_free=True,
    )


def _validate_eigenpairs(model: OperatorModel):
    h = model.grid.h
    nb = len(model.lam)
    gram = h * (model.phi @ model.phi.T)
    if np.max(np.abs(gram - np.eye(nb))) > 1e-10:
        raise NumericalError("bound eigenvectors fail quadrature orthonormality")
    for j in range(nb):
        res = l2_norm(model.apply_h(model.phi[j]) - model.lam[j] * model.phi[j], h)
        if res > TOL_EIG_RESIDUAL:
            raise NumericalError(f"eigenpair residual {res:.2e} for mode {j}")


# ---------------------------------------------------------------------------
# coordinates


def project_modes(u: np.ndarray, model: OperatorModel) -> ModeState:
    """Split u = z . phi + f with f in the continuum subspace."""
    model._check_grid(u)
    u = np.asarray(u, dtype=complex)
    h = model.grid.h
    z = np.array([h * np.dot(model.phi[j], u) for j in range(len(model.lam))])
    f = u - (z[:, None] * model.phi).sum(axis=0) if len(z) else u.copy()
    return ModeState(z=z, f=f, t=0.0)


def reconstruct(state: ModeState, model: OperatorModel) -> np.ndarray:
    if len(state.z) == 0:
        return state.f.copy()
    return (state.z[:, None] * model.phi).sum(axis=0) + state.f


# ---------------------------------------------------------------------------
# resolvents


def resolvent_apply(
    model: OperatorModel,
    zeta: complex,
    b: np.ndarray,
    reduced: bool = False,
) -> np.ndarray:
    """Solve (H - zeta) x = b through the eigenbasis.

    Real zeta must lie below the continuum threshold and clear the discrete
    eigenvalues by 1e-8, unless `reduced` is set and b carries no weight on the
    offending eigenvector (then that component is dropped: the resolvent of H
    restricted to its orthogonal complement).
    """
    model._check_grid(b)
    zeta = complex(zeta)
    e = model.mode_energies
    coeffs = model.mode_coeffs(np.asarray(b, dtype=complex))
    bnorm = float(np.linalg.norm(coeffs))
    if bnorm == 0.0:
        return np.zeros(model.grid.m_pts, dtype=complex)

    if zeta.imag == 0.0:
        s = zeta.real
        if s > model.c - 1e-12:
            raise SingularResolventError(
                f"real resolvent argument {s:.6g} inside the continuum [c, inf); "
                "use a +/- i*eps side or resolvent_limit"
            )
        kill = np.zeros(len(e), dtype=bool)
        for j, lj in enumerate(model.lam):
            if abs(lj - s) < 1e-8:
                if reduced and abs(coeffs[j]) <= 1e-10 * bnorm:
                    kill[j] = True
                else:
                    raise SingularResolventError(
                        f"resolvent argument {s:.6g} hits the eigenvalue lambda_{j} = {lj:.6g}"
                    )
        denom = e - s
        out_coeffs = np.where(kill, 0.0, coeffs / np.where(kill, 1.0, denom))
    else:
        out_coeffs = coeffs / (e - zeta)

    x = model.from_mode_coeffs(out_coeffs)
    resid = model.apply_h(x) - zeta * x - np.asarray(b, dtype=complex)
    if zeta.imag == 0.0 and np.any(np.abs(model.lam - zeta.real) < 1e-8):
        # reduced solve: the residual equals the dropped component, by design
        resid = model.project_pc(resid)
    rnorm = l2_norm(resid, model.grid.h) / l2_norm(b, model.grid.h)
    if rnorm > TOL_RESOLVENT:
        raise NumericalError(f"resolvent residual {rnorm:.2e} exceeds {TOL_RESOLVENT:.0e}")
    return x


def lap_eps_schedule(model: OperatorModel, w: float) -> np.ndarray:
    """Geometric eps nodes decaying from (w-c)/2, cut at the box floor.

    The floor keeps the Lorentzian width above the discrete level spacing of
    the box; on large boxes the node count (not the floor) ends the schedule.
    """
    a = w - model.c
    if a <= 0:
        raise ValueError("schedule requested below the continuum threshold")
    efloor = LAP_FLOOR * math.sqrt(a) / model.grid.l_box
    nodes = []
    e = LAP_EMAX_FRAC * a
    while len(nodes) < LAP_NODES and (e >= efloor or len(nodes) < 3):
        nodes.append(e)
        e *= LAP_RATIO
    return np.array(nodes)


def _box_noise(model: OperatorModel, w: float, eps_min: float) -> float:
    """Relative size of the level-discreteness error at the smallest node."""
    return math.exp(-model.grid.l_box * eps_min / math.sqrt(w - model.c))


def _extrapolate_to_zero(eps: np.ndarray, vals: np.ndarray, noise: float):
    """Polynomial extrapolation to eps = 0; returns (value, error scale).

    Clean nodes (box noise below 1e-6) take full-degree Neville; noisy nodes
    fall back to a least-squares quadratic, which does not amplify the
    level-discreteness wiggle.
    """
    scale = float(np.max(np.abs(vals))) if len(vals) else 0.0
    if noise < 1e-6:
        tab = list(vals)
        n = len(eps)
        corner_prev = tab[-1]
        for j in range(1, n):
            for i in range(n - 1, j - 1, -1):
                tab[i] = tab[i] + (tab[i] - tab[i - 1]) * eps[i] / (eps[i - j] - eps[i])
            if j == n - 2:
                corner_prev = tab[-1]
        err = abs(tab[-1] - corner_prev) + noise * scale
        return float(tab[-1]), float(err)
    deg = min(LAP_FIT_DEGREE, len(eps) - 1)
    a = np.vander(eps, deg + 1, increasing=True)
    coef, _, _, _ = np.linalg.lstsq(a, vals, rcond=None)
    fit = a @ coef
    err = float(np.max(np.abs(fit - vals))) + noise * scale
    return float(coef[0]), err


def resolvent_limit(
    model: OperatorModel,
    w: float,
    b: np.ndarray,
    side: str = "+",
    eps_schedule=None,
) -> np.ndarray:
    """Boundary value R(w +/- i0) b on the continuous spectrum, extrapolated.

    Componentwise polynomial extrapolation of R(w +/- i eps) b over the eps
    schedule.  For real-symmetric H the two sides are complex conjugates on
    conjugate data.
    """
    if side not in ("+", "-"):
        raise ValueError("side must be '+' or '-'")
    if w <= model.c:
        return resolvent_apply(model, w, np.asarray(b, dtype=complex), reduced=True)
    eps = np.asarray(eps_schedule if eps_schedule is not None else lap_eps_schedule(model, w))
    sign = 1.0 if side == "+" else -1.0
    e = model.mode_energies
    coeffs = model.mode_coeffs(np.asarray(b, dtype=complex))
    sols = np.empty((len(eps), model.grid.m_pts), dtype=complex)
    for i, ee in enumerate(eps):
        sols[i] = model.from_mode_coeffs(coeffs / (e - (w + sign * 1j * ee)))
    return _extrapolate_array(np.asarray(eps, dtype=float), sols,
                              _box_noise(model, w, float(np.min(eps))))


def _extrapolate_array(eps: np.ndarray, vals: np.ndarray, noise: float) -> np.ndarray:
    """Componentwise version of the eps -> 0 extrapolation for stacked data."""
    if noise < 1e-6:
        tab = [v.copy() for v in vals]
        n = len(eps)
        for j in range(1, n):
            for i in range(n - 1, j - 1, -1):
                tab[i] = tab[i] + (tab[i] - tab[i - 1]) * eps[i] / (eps[i - j] - eps[i])
        return tab[-1]
    deg = min(LAP_FIT_DEGREE, len(eps) - 1)
    a = np.vander(eps, deg + 1, increasing=True)
    flat = vals.reshape(len(eps), -1)
    coef, _, _, _ = np.linalg.lstsq(a, flat, rcond=None)
    return coef[0].reshape(vals.shape[1:])


# ---------------------------------------------------------------------------
# spectral density (Fermi-golden-rule quadratic form)


@dataclass
class DensityResult:
    value: float
    below_continuum: bool = False
    unreliable: bool = False
    small_signal: bool = False
    error_estimate: float = 0.0


def _continuum_weights(model: OperatorModel, phis) -> tuple[np.ndarray, np.ndarray]:
    """(energies, coefficient matrix) over continuum box modes only."""
    start = model.n_continuum_start()
    e = model.mode_energies[start:]
    cm = np.stack([model.mode_coeffs(p)[start:] for p in np.atleast_2d(phis)])
    return e, cm


def spectral_density_form(
    model: OperatorModel,
    w: float,
    phi: np.ndarray,
    eps_schedule=None,
    details: bool = False,
):
    """<delta(H - w) conj(phi), phi> by extrapolated limiting absorption.

    Primary estimator: Im <phi, R(w + i eps) phi> / pi evaluated on a geometric
    eps schedule and extrapolated to eps = 0 by a least-squares polynomial.
    Returns 0 with a flag for w at or below the continuum threshold.
    """
    model._check_grid(phi)
    phi = np.asarray(phi, dtype=complex)
    norm2 = l2_norm(phi, model.grid.h) ** 2
    if w <= model.c + 1e-12:
        res = DensityResult(value=0.0, below_continuum=True)
        return res if details else res.value
    if norm2 == 0.0:
        res = DensityResult(value=0.0)
        return res if details else res.value

    eps = np.asarray(eps_schedule if eps_schedule is not None else lap_eps_schedule(model, w), dtype=float)
    if np.any(np.diff(eps) >= 0):
        eps = np.sort(eps)[::-1]
    e, cm = _continuum_weights(model, phi)
    c2 = np.abs(cm[0]) ** 2
    vals = np.array([(c2 * (ee / np.pi) / ((e - w) ** 2 + ee ** 2)).sum() for ee in eps])
    value, err = _extrapolate_to_zero(eps, vals, _box_noise(model, w, float(eps.min())))
    unreliable = err > 0.25 * max(abs(value), 1e-300) and abs(value) > 1e-14 * norm2
    if unreliable:
        import warnings

        warnings.warn(f"spectral density extrapolation unreliable at w = {w:.6g}")
    small = abs(value) < 5e-3 * norm2 * _density_scale(model, w)
    if value < 0.0 and -value <= max(err, 1e-12 * norm2):
        value = 0.0
    res = DensityResult(value=value, unreliable=unreliable, small_signal=small, error_estimate=err)
    return res if details else res.value


def _density_scale(model: OperatorModel, w: float) -> float:
    # crude scale of a unit-norm density at energy w: 1/(2 pi sqrt(a)) free value
    return 1.0 / (2.0 * math.pi * math.sqrt(w - model.c))


def histogram_density(
    model: OperatorModel,
    w: float,
    phi: np.ndarray,
    sigma: float | None = None,
) -> float:
    """Secondary estimator: box-spectrum histogram, fourth-order Gaussian kernel."""
    model._check_grid(phi)
    if w <= model.c + 1e-12:
        return 0.0
    a = w - model.c
    if sigma is None:
        spacing = 2.0 * math.sqrt(a) * math.pi / model.grid.l_box
        sigma = min(HIST_SIGMA_FACTOR * spacing, HIST_SIGMA_EDGE_CAP * a)
    e, cm = _continuum_weights(model, np.asarray(phi, dtype=complex))
    c2 = np.abs(cm[0]) ** 2
    u = (e - w) / sigma
    kernel = np.exp(-u ** 2 / 2.0) / (sigma * math.sqrt(2.0 * math.pi)) * (1.5 - u ** 2 / 2.0)
    return float((c2 * kernel).sum())


def density_gram(
    model: OperatorModel,
    w: float,
    phis,
    estimator: str = "histogram",
    eps_schedule=None,
) -> np.ndarray:
    """Hermitian matrix G_ab = <delta(H - w) conj(phi_a), phi_b>.

    The quadratic form of any packet of couplings at frequency w; `estimator`
    selects the histogram kernel (default, accurate on desk-size boxes) or the
    extrapolated limiting absorption route.
    """
    phis = [np.asarray(p, dtype=complex) for p in phis]
    nv = len(phis)
    if w <= model.c + 1e-12 or nv == 0:
        return np.zeros((nv, nv), dtype=complex)
    e, cm = _continuum_weights(model, phis)
    if estimator == "histogram":
        a = w - model.c
        spacing = 2.0 * math.sqrt(a) * math.pi / model.grid.l_box
        sigma = min(HIST_SIGMA_FACTOR * spacing, HIST_SIGMA_EDGE_CAP * a)
        u = (e - w) / sigma
        kern = np.exp(-u ** 2 / 2.0) / (sigma * math.sqrt(2.0 * math.pi)) * (1.5 - u ** 2 / 2.0)
        g = np.conj(cm) * kern @ cm.T
    elif estimator == "lap":
        eps = np.asarray(eps_schedule if eps_schedule is not None else lap_eps_schedule(model, w))
        mats = np.empty((len(eps), nv, nv), dtype=complex)
        for i, ee in enumerate(eps):
            kern = (ee / np.pi) / ((e - w) ** 2 + ee ** 2)
            mats[i] = np.conj(cm) * kern @ cm.T
        g = _extrapolate_array(eps, mats, _box_noise(model, w, float(eps.min())))
    else:
        raise ValueError("estimator must be 'histogram' or 'lap'")
    return 0.5 * (g + np.conj(g.T))


def pv_gram(model: OperatorModel, w: float, phis, eps_schedule=None) -> np.ndarray:
    """Hermitian matrix of principal-value pairings <P.V. (H - w)^{-1} conj(phi_a), phi_b>."""
    phis = [np.asarray(p, dtype=complex) for p in phis]
    nv = len(phis)
    if nv == 0:
        return np.zeros((0, 0), dtype=complex)
    e, cm = _continuum_weights(model, phis)
    eps = np.asarray(eps_schedule if eps_schedule is not None else lap_eps_schedule(model, w))
    mats = np.empty((len(eps), nv, nv), dtype=complex)
    for i, ee in enumerate(eps):
        kern = (e - w) / ((e - w) ** 2 + ee ** 2)
        mats[i] = np.conj(cm) * kern @ cm.T
    g = _extrapolate_array(eps, mats, _box_noise(model, w, float(eps.min())))
    return 0.5 * (g + np.conj(g.T))


def threshold_blowup_report(model: OperatorModel, probe=None) -> dict:
    """(H4) proxy: growth of ||R(c - delta) b|| as delta -> 0.

    A threshold resonance shows up as growth ~ 1/delta; the generic rate in
    1-D is ~ 1/sqrt(delta).  Reported, never enforced.
    """
    h = model.grid.h
    if probe is None:
        probe = np.exp(-model.grid.x ** 2 / 8.0).astype(complex)
    probe = model.project_pc(probe)
    gap = model.c - (model.lam[-1] if len(model.lam) else model.c - 1.0)
    deltas = np.array([0.2, 0.1, 0.05, 0.025]) * gap
    norms = []
    for d in deltas:
        x = resolvent_apply(model, model.c - d, probe, reduced=True)
        norms.append(l2_norm(x, h))
    norms = np.array(norms)
    rates = np.log(norms[1:] / norms[:-1]) / np.log(deltas[1:] / deltas[:-1])
    return {
        "deltas": deltas.tolist(),
        "norms": norms.tolist(),
        "growth_exponents": rates.tolist(),
        "suspicious": bool(np.any(rates < -0.9)),
    }


def export_eigenpairs_csv(model: OperatorModel, path):
    """Columns x, phi_0 ... phi_n; eigenvalue row is embedded as a comment."""
    header = "x," + ",".join(f"phi_{j}" for j in range(len(model.lam)))
    meta = "eigenvalues: " + ", ".join(f"{l:.12g}" for l in model.lam) + f"; c: {model.c:.12g}"
    data = np.column_stack([model.grid.x] + [model.phi[j] for j in range(len(model.lam))])
    np.savetxt(path, data, delimiter=",", header=meta + "\n" + header)
