"""Split-step integration of the forced NLS with mode/radiation monitors.

The stepper is a Strang splitting: exact half-steps of the kinetic phase in
Fourier space around an exact pointwise phase rotation for the potential and
the nonlinearity sampled at the midpoint time.  Mass is conserved to rounding
and the map is exactly time-reversible.

The box wraps radiation after t_wrap = L / (2 v_max); runs beyond that keep
only qualitative meaning unless the absorbing sponge is enabled (off by
default to preserve the Hamiltonian structure).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .birkhoff import ReducedForm
from .errors import ConfigError, NumericalError
from .fgr import FgrPacket, packet_form
from .hamalg import HamExpansion, gradient_zbar
from .resonance import IndexTriple, ResonanceCatalog, TOL_RES
from .spectral import (
    GridSpec,
    OperatorModel,
    ModeState,
    l2_norm,
    pairing,
    project_modes,
    resolvent_limit,
)

DEFAULT_STRICHARTZ_PAIRS = ((6.0, 6.0), (8.0, 4.0))  # 1-D surrogate table


@dataclass
class SimConfig:
    gamma0: float = 0.0
    gamma1: float = 0.0
    nonlinearity: str = "cubic"          # or "quintic"
    t_end: float = 200.0
    dt: float = 1e-3
    output_stride: int = 100
    mode_amplitudes: tuple = ()
    radiation: np.ndarray | None = None
    u0: np.ndarray | None = None          # raw initial data overrides the above
    sponge: bool = False
    sponge_strength: float = 5.0
    sponge_start_frac: float = 0.8
    weight_s: float = 2.0                 # S in the weighted L^{2,-S} monitor
    strichartz_pairs: tuple = DEFAULT_STRICHARTZ_PAIRS
    wrap_policy: str = "warn"             # "warn" | "error" | "ignore"
    snapshot_times: tuple = ()

    def __post_init__(self):
        if self.nonlinearity not in ("cubic", "quintic"):
            raise ConfigError("nonlinearity must be 'cubic' or 'quintic'")
        if self.dt <= 0 or self.t_end < 0:
            raise ConfigError("dt and t_end must be positive")
        if self.wrap_policy not in ("warn", "error", "ignore"):
            raise ConfigError("wrap_policy must be warn, error or ignore")


@dataclass
class ReducedAux:
    """Catalog-dependent monitor data produced by the analysis pipeline."""

    catalog: ResonanceCatalog
    reduced: ReducedForm
    packets: list
    zeta_couplings: list
    g_couplings: list


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    z: np.ndarray
    mass: np.ndarray
    energy: np.ndarray
    f_l2: np.ndarray
    f_h1: np.ndarray
    f_weighted: np.ndarray
    eps_h1: float
    dt_safe: float
    t_wrap: float
    zeta: np.ndarray | None = None
    g_weighted: np.ndarray | None = None
    fgr_flux: np.ndarray | None = None
    zsq_integrals: dict = field(default_factory=dict)
    strichartz: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)
    sponge_used: bool = False


def gamma_of_t(t, gamma0: float, gamma1: float):
    return gamma0 + gamma1 * np.cos(t)


def initial_state(model: OperatorModel, config: SimConfig) -> np.ndarray:
    if config.u0 is not None:
        u = np.asarray(config.u0, dtype=complex)
        if u.shape != (model.grid.m_pts,):
            raise ConfigError("raw initial data not on the model grid")
        return u.copy()
    u = np.zeros(model.grid.m_pts, dtype=complex)
    amps = np.asarray(config.mode_amplitudes, dtype=complex)
    if len(amps) > len(model.lam):
        raise ConfigError("more mode amplitudes than bound states")
    for j, a in enumerate(amps):
        u += a * model.phi[j]
    if config.radiation is not None:
        u += model.project_pc(np.asarray(config.radiation, dtype=complex))
    return u


def h1_norm(u, grid: GridSpec) -> float:
    du = np.fft.ifft(1j * grid.k * np.fft.fft(u))
    return math.sqrt(l2_norm(u, grid.h) ** 2 + l2_norm(du, grid.h) ** 2)


def weighted_l2(u, grid: GridSpec, s: float) -> float:
    w = (1.0 + grid.x ** 2) ** (-s / 2.0)
    return l2_norm(w * u, grid.h)


def energy_value(model: OperatorModel, u, t: float, gamma0, gamma1,
                 nonlinearity: str = "cubic") -> float:
    grid = model.grid
    du = np.fft.ifft(1j * grid.k * np.fft.fft(u))
    kin = l2_norm(du, grid.h) ** 2
    pot = float(np.real(grid.h * np.sum((model.v + model.c) * np.abs(u) ** 2)))
    g = float(gamma_of_t(t, gamma0, gamma1))
    # the /2 (cubic) and /3 (quintic) normalizations generate the simulated
    # nonlinearities g|u|^2 u and g|u|^4 u under the Wirtinger gradient
    if nonlinearity == "cubic":
        ep = g * float(grid.h * np.sum(np.abs(u) ** 4)) / 2.0
    else:
        ep = g * float(grid.h * np.sum(np.abs(u) ** 6)) / 3.0
    return kin + pot + ep


def dt_safe_bound(grid: GridSpec) -> float:
    # accuracy heuristic, not a stability limit: the splitting is exact in
    # each factor, so we only keep dt below the grid-scale h^2
    return grid.h ** 2


def wrap_time(model: OperatorModel, aux: ReducedAux | None) -> float:
    if aux is not None and aux.catalog.x_values:
        kmax = math.sqrt(max(aux.catalog.x_values) - model.c)
    else:
        kmax = math.sqrt(max(model.c, 1.0))
    vmax = 2.0 * kmax
    return model.grid.l_box / (2.0 * vmax)


def _sponge_mask(grid: GridSpec, dt: float, strength: float, start_frac: float):
    x0 = start_frac * grid.l_box
    ramp = np.clip((np.abs(grid.x) - x0) / (grid.l_box - x0), 0.0, 1.0)
    return np.exp(-dt * strength * ramp ** 2)


def step(u: np.ndarray, dt: float, t: float, model: OperatorModel,
         config: SimConfig, half_kinetic=None, sponge=None) -> np.ndarray:
    """One Strang step from t to t + dt."""
    grid = model.grid
    if half_kinetic is None:
        half_kinetic = np.exp(-0.5j * grid.k ** 2 * dt)
    u = np.fft.ifft(np.fft.fft(u) * half_kinetic)
    g = float(gamma_of_t(t + 0.5 * dt, config.gamma0, config.gamma1))
    amp2 = np.abs(u) ** 2
    nl = amp2 if config.nonlinearity == "cubic" else amp2 ** 2
    u = u * np.exp(-1j * dt * (model.v + model.c + g * nl))
    u = np.fft.ifft(np.fft.fft(u) * half_kinetic)
    if sponge is not None:
        u = u * sponge
    if not np.all(np.isfinite(u.real)):
        raise NumericalError(f"non-finite state at t = {t + dt:.6g}")
    return u


def simulate(model: OperatorModel, config: SimConfig,
             aux: ReducedAux | None = None) -> TrajectoryRecord:
    """Integrate and record the monitor set at the output stride."""
    grid = model.grid
    dt = config.dt
    if dt > dt_safe_bound(grid) * (1.0 + 1e-12):
        raise ConfigError(
            f"dt = {dt:.3g} above the safe bound {dt_safe_bound(grid):.3g}")
    t_wrap = wrap_time(model, aux)
    if config.t_end > t_wrap and not config.sponge:
        if config.wrap_policy == "error":
            raise ConfigError(
                f"t_end = {config.t_end:.6g} beyond the wrap horizon {t_wrap:.6g}")
        if config.wrap_policy == "warn":
            import warnings

            warnings.warn(
                f"run extends beyond the radiation wrap horizon t_wrap = {t_wrap:.4g}; "
                "monitors are qualitative past that time")

    u = initial_state(model, config)
    eps = h1_norm(u, grid)
    n_steps = int(round(config.t_end / dt))
    stride = max(1, int(config.output_stride))
    half_kinetic = np.exp(-0.5j * grid.k ** 2 * dt)
    sponge = (_sponge_mask(grid, dt, config.sponge_strength, config.sponge_start_frac)
              if config.sponge else None)

    n_out = n_steps // stride + 1
    nb = len(model.lam)
    times = np.empty(n_out)
    zs = np.empty((n_out, nb), dtype=complex)
    mass = np.empty(n_out)
    energy = np.empty(n_out)
    f_l2 = np.empty(n_out)
    f_h1 = np.empty(n_out)
    f_w = np.empty(n_out)
    g_w = np.empty(n_out) if aux is not None else None
    zetas = np.empty((n_out, nb), dtype=complex) if aux is not None else None
    flux = np.empty(n_out) if aux is not None else None

    minimal = aux.catalog.minimal if aux is not None else []
    zsq_acc = {(tr.m, tr.mu, tr.nu): 0.0 for tr in minimal}
    pairs = {f"r={r:g},p={p:g}": 0.0 for (r, p) in config.strichartz_pairs}
    sup_h1_f = 0.0
    sample_dt = stride * dt
    snapshots = {}
    snap_left = sorted(config.snapshot_times)

    def record(i, t, u):
        nonlocal sup_h1_f
        state = project_modes(u, model)
        times[i] = t
        zs[i] = state.z
        mass[i] = l2_norm(u, grid.h)
        energy[i] = energy_value(model, u, t, config.gamma0, config.gamma1,
                                 config.nonlinearity)
        f_l2[i] = l2_norm(state.f, grid.h)
        f_h1[i] = h1_norm(state.f, grid)
        f_w[i] = weighted_l2(state.f, grid, config.weight_s)
        sup_h1_f = max(sup_h1_f, f_h1[i])
        for (r, p) in config.strichartz_pairs:
            pairs[f"r={r:g},p={p:g}"] += sample_dt * _w1p_norm(state.f, grid, p) ** r
        for tr in minimal:
            zmon = 1.0 + 0.0j
            for j, e in enumerate(np.array(tr.mu) + np.array(tr.nu)):
                if e:
                    zmon *= state.z[j] ** int(e)
            zsq_acc[(tr.m, tr.mu, tr.nu)] += sample_dt * abs(zmon) ** 2
        if aux is not None:
            zetas[i] = zeta_transform(state.z, t, aux.zeta_couplings)
            flux[i] = math.pi * sum(packet_form(p, zetas[i]) for p in aux.packets)
            g_w[i] = weighted_l2(g_transform(state, t, aux.g_couplings),
                                 grid, config.weight_s)

    record(0, 0.0, u)
    t = 0.0
    out_i = 1
    for i_step in range(1, n_steps + 1):
        u = step(u, dt, t, model, config, half_kinetic, sponge)
        t = i_step * dt
        while snap_left and t >= snap_left[0] - 0.5 * dt:
            ts = snap_left.pop(0)
            snapshots[ts] = free_flow_undo(u, t, grid, model.c)
        if i_step % stride == 0:
            record(out_i, t, u)
            out_i += 1

    strich = {key: val ** (1.0 / float(key.split(",")[0].split("=")[1]))
              for key, val in pairs.items()}
    strich["r=inf,p=2"] = sup_h1_f
    return TrajectoryRecord(
        times=times, z=zs, mass=mass, energy=energy,
        f_l2=f_l2, f_h1=f_h1, f_weighted=f_w,
        eps_h1=eps, dt_safe=dt_safe_bound(grid), t_wrap=t_wrap,
        zeta=zetas, g_weighted=g_w, fgr_flux=flux,
        zsq_integrals={k: v for k, v in zsq_acc.items()},
        strichartz=strich, snapshots=snapshots, sponge_used=config.sponge,
    )


def _w1p_norm(f, grid: GridSpec, p: float) -> float:
    df = np.fft.ifft(1j * grid.k * np.fft.fft(f))
    fp = float(grid.h * np.sum(np.abs(f) ** p)) ** (1.0 / p)
    dfp = float(grid.h * np.sum(np.abs(df) ** p)) ** (1.0 / p)
    return (fp ** p + dfp ** p) ** (1.0 / p)


def free_flow_undo(u, t: float, grid: GridSpec, c: float) -> np.ndarray:
    """Scattering profile e^{+i t (-Delta + c)} u(t) (the c-phase included)."""
    return np.fft.ifft(np.fft.fft(u) * np.exp(1j * (grid.k ** 2 + c) * t))


def linear_reference(model: OperatorModel, u0, t: float) -> np.ndarray:
    """Exact e^{-i H t} u0 through the dense eigenbasis (oracle for gamma = 0)."""
    coeffs = model.mode_coeffs(np.asarray(u0, dtype=complex))
    return model.from_mode_coeffs(np.exp(-1j * model.mode_energies * t) * coeffs)


# ---------------------------------------------------------------------------
# changes of variables


@dataclass
class ZetaCoupling:
    j: int
    m: int
    mu: tuple
    nu: tuple        # exponent of conj(z) after the 1/conj(z_j) cancellation
    coef: complex


def build_zeta_couplings(model: OperatorModel, reduced: ReducedForm,
                         tol_res: float = TOL_RES) -> list:
    """Precompute the oscillatory-correction monomials of the zeta variables.

    Pairs from M x M' and M' x M' with nonvanishing denominators
    m + m' - lambda.(mu + mu' - nu - nu') contribute; the boundary-value
    pairings <R^+- Psi, Phi> are cached as scalars.
    """
    lam = np.asarray(model.lam, dtype=float)
    cat = reduced.catalog
    out: list[ZetaCoupling] = []

    rplus_cache: dict = {}

    def rplus(trip) -> np.ndarray:
        if trip not in rplus_cache:
            arg = float(lam @ (np.array(trip.mu) - np.array(trip.nu))) - trip.m
            psi = reduced.z1_mprime[trip]
            rplus_cache[trip] = resolvent_limit(model, arg, psi, side="+")
        return rplus_cache[trip]

    h = model.grid.h
    # first family: (m, mu, nu) in M, (m', mu', nu') in M'
    for ta in cat.minimal:
        phi_a = reduced.z1_m[ta]
        for tb in cat.minimal_prime:
            denom = (ta.m + tb.m) - float(
                lam @ (np.array(ta.mu) + np.array(tb.mu)
                       - np.array(ta.nu) - np.array(tb.nu)))
            if abs(denom) < tol_res:
                continue
            coupling = pairing(rplus(tb), phi_a, h)
            mu_tot = tuple(np.array(ta.mu) + np.array(tb.mu))
            nu_tot = np.array(ta.nu) + np.array(tb.nu)
            for j in range(len(lam)):
                if ta.nu[j] == 0:
                    continue
                nu_red = nu_tot.copy()
                nu_red[j] -= 1
                out.append(ZetaCoupling(
                    j=j, m=ta.m + tb.m, mu=mu_tot, nu=tuple(nu_red),
                    coef=ta.nu[j] * coupling / denom))
    # second family: (m, mu, nu) in M', (m', mu', nu') in M'
    for ta in cat.minimal_prime:
        psi_a = reduced.z1_mprime[ta]
        for tb in cat.minimal_prime:
            denom = (ta.m - tb.m) - float(
                lam @ (np.array(ta.mu) + np.array(tb.nu)
                       - np.array(ta.nu) - np.array(tb.mu)))
            if abs(denom) < tol_res:
                continue
            # R^-(s) conj(Psi) = conj(R^+(s) Psi) for the real-symmetric H
            rminus = np.conj(rplus(tb))
            coupling = pairing(rminus, psi_a, h)
            mu_tot = tuple(np.array(ta.mu) + np.array(tb.nu))
            nu_tot = np.array(ta.nu) + np.array(tb.mu)
            for j in range(len(lam)):
                if ta.nu[j] == 0:
                    continue
                nu_red = nu_tot.copy()
                nu_red[j] -= 1
                out.append(ZetaCoupling(
                    j=j, m=ta.m - tb.m, mu=mu_tot, nu=tuple(nu_red),
                    coef=ta.nu[j] * coupling / denom))
    return out


def zeta_transform(z, t: float, couplings) -> np.ndarray:
    """zeta_j = z_j minus the precomputed oscillatory corrections."""
    z = np.asarray(z, dtype=complex)
    zb = np.conj(z)
    zeta = z.copy()
    for cp in couplings:
        val = cp.coef * np.exp(1j * cp.m * t)
        for j, e in enumerate(cp.mu):
            if e:
                val *= z[j] ** e
        for j, e in enumerate(cp.nu):
            if e:
                val *= zb[j] ** e
        zeta[cp.j] -= val
    return zeta


@dataclass
class GCoupling:
    m: int
    mu: tuple
    nu: tuple
    vector: np.ndarray


def build_g_couplings(model: OperatorModel, reduced: ReducedForm) -> list:
    """R^+ tails of the M' couplings entering the g variable."""
    lam = np.asarray(model.lam, dtype=float)
    out = []
    for trip, psi in reduced.z1_mprime.items():
        arg = float(lam @ (np.array(trip.mu) - np.array(trip.nu))) - trip.m
        if arg <= model.c:
            raise NumericalError(
                f"catalog corruption: M' argument {arg:.6g} below the threshold")
        out.append(GCoupling(m=trip.m, mu=trip.mu, nu=trip.nu,
                             vector=resolvent_limit(model, arg, psi, side="+")))
    return out


def g_transform(state: ModeState, t: float, g_couplings) -> np.ndarray:
    """g = f + sum over M' of e^{imt} z^mu conj(z)^nu R^+ Psi."""
    z = np.asarray(state.z, dtype=complex)
    zb = np.conj(z)
    g = state.f.astype(complex).copy()
    for gc in g_couplings:
        val = np.exp(1j * gc.m * t)
        for j, e in enumerate(gc.mu):
            if e:
                val *= z[j] ** e
        for j, e in enumerate(gc.nu):
            if e:
                val *= zb[j] ** e
        g += val * gc.vector
    return g


# ---------------------------------------------------------------------------
# reduced mode system


def reduced_ode_rhs(z, f, reduced: ReducedForm, model: OperatorModel,
                    t: float = 0.0) -> np.ndarray:
    """dz_j/dt of the normal-form mode system (remainder gradient excluded).

    i zdot_j = lambda_j z_j + dZ0/dconj(z_j)
             + sum_M nu_j e^{imt} z^mu conj(z)^{nu - e_j} <f, Phi>
             + sum_M' nu_j e^{imt} z^mu conj(z)^{nu - e_j} <conj f, Psi>.
    """
    z = np.asarray(z, dtype=complex)
    zb = np.conj(z)
    h = model.grid.h
    nb = len(z)
    f = np.zeros(model.grid.m_pts, dtype=complex) if f is None else np.asarray(f, dtype=complex)
    rhs = model.lam * z
    for j in range(nb):
        rhs[j] += gradient_zbar(reduced.z0, j).evaluate(t, z, f, h)
    fb = np.conj(f)
    for trip, phi in reduced.z1_m.items():
        pair = pairing(f, phi, h)
        if pair == 0.0:
            continue
        base = np.exp(1j * trip.m * t) * pair
        for j, e in enumerate(trip.mu):
            if e:
                base *= z[j] ** e
        for j in range(nb):
            if trip.nu[j] == 0:
                continue
            val = trip.nu[j] * base
            for jj, e in enumerate(trip.nu):
                ee = e - (1 if jj == j else 0)
                if ee:
                    val *= zb[jj] ** ee
            rhs[j] += val
    for trip, psi in reduced.z1_mprime.items():
        pair = pairing(fb, psi, h)
        if pair == 0.0:
            continue
        base = np.exp(1j * trip.m * t) * pair
        for j, e in enumerate(trip.mu):
            if e:
                base *= z[j] ** e
        for j in range(nb):
            if trip.nu[j] == 0:
                continue
            val = trip.nu[j] * base
            for jj, e in enumerate(trip.nu):
                ee = e - (1 if jj == j else 0)
                if ee:
                    val *= zb[jj] ** ee
            rhs[j] += val
    return -1j * rhs


def integrate_reduced(z0, t_grid, reduced: ReducedForm, model: OperatorModel,
                      f: np.ndarray | None = None) -> np.ndarray:
    """RK4 integration of the reduced system on the given time grid."""
    t_grid = np.asarray(t_grid, dtype=float)
    out = np.empty((len(t_grid), len(z0)), dtype=complex)
    z = np.asarray(z0, dtype=complex).copy()
    out[0] = z
    for i in range(1, len(t_grid)):
        t0, t1 = t_grid[i - 1], t_grid[i]
        dt = t1 - t0
        k1 = reduced_ode_rhs(z, f, reduced, model, t0)
        k2 = reduced_ode_rhs(z + 0.5 * dt * k1, f, reduced, model, t0 + 0.5 * dt)
        k3 = reduced_ode_rhs(z + 0.5 * dt * k2, f, reduced, model, t0 + 0.5 * dt)
        k4 = reduced_ode_rhs(z + dt * k3, f, reduced, model, t1)
        z = z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i] = z
    return out
