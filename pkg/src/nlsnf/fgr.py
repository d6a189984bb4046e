"""Fermi-golden-rule machinery: packet assembly, the resonant quadratic form,
the cancellation identities behind the Lyapunov balance, and the balance
residual along trajectories.

Each packet collects the minimal-set couplings sharing one continuum energy w
and caches the hermitian Gram matrices <delta(H - w) conj(Phi_a), Phi_b> and
<P.V. (H - w)^{-1} conj(Phi_a), Phi_b>, so trajectory-long evaluation reduces
to small quadratic forms in the mode monomials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .birkhoff import ReducedForm
from .errors import NlsnfError
from .hamalg import HamExpansion, gradient_zbar
from .resonance import IndexTriple
from .spectral import OperatorModel, density_gram, pv_gram

POSITIVITY_ALARM = 1e-8


@dataclass
class FgrPacket:
    w: float
    members: list                    # list of (IndexTriple, coupling vector)
    gram: np.ndarray                 # delta-form Gram, hermitian PSD
    gram_lap: np.ndarray | None = None
    gram_pv: np.ndarray | None = None
    clipped_mass: float = 0.0        # negative estimator noise removed from gram

    def monomials(self, zeta: np.ndarray) -> np.ndarray:
        zb = np.conj(zeta)
        out = np.empty(len(self.members), dtype=complex)
        for i, (trip, _) in enumerate(self.members):
            val = 1.0 + 0.0j
            for j, e in enumerate(trip.mu):
                if e:
                    val *= zeta[j] ** e
            for j, e in enumerate(trip.nu):
                if e:
                    val *= zb[j] ** e
            out[i] = val
        return out


def build_packets(
    model: OperatorModel,
    reduced: ReducedForm,
    estimator: str = "histogram",
    with_pv: bool = True,
) -> list[FgrPacket]:
    """One packet per w in X, Gram matrices precomputed.

    The delta-form backend defaults to the histogram estimator (the accurate
    one on desk-size boxes); the extrapolated limiting-absorption Gram is kept
    alongside for agreement monitoring.  Both Grams are clipped to the
    positive cone: delta(H - w) is positive semidefinite exactly, so negative
    eigenvalues are estimator noise (the removed mass is recorded).
    """
    packets = []
    for w in reduced.catalog.x_values:
        triples = reduced.catalog.m_w[w]
        members = []
        for trip in triples:
            phi = reduced.z1_m.get(trip)
            if phi is None:
                raise NlsnfError(f"missing coupling for {trip}")
            members.append((trip, phi))
        vecs = [p for _, p in members]
        gram, clipped = _psd_clip(density_gram(model, w, vecs, estimator=estimator))
        gram_lap, _ = _psd_clip(density_gram(model, w, vecs, estimator="lap"))
        gpv = pv_gram(model, w, vecs) if with_pv else None
        packets.append(FgrPacket(w=w, members=members, gram=gram,
                                 gram_lap=gram_lap, gram_pv=gpv,
                                 clipped_mass=clipped))
    return packets


def _psd_clip(gram: np.ndarray) -> tuple[np.ndarray, float]:
    vals, vecs = np.linalg.eigh(gram)
    clipped = float(-vals[vals < 0].sum())
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ np.conj(vecs.T), clipped


def assemble_phi_w(packet: FgrPacket, zeta: np.ndarray) -> np.ndarray:
    """Phi_w(zeta) = sum over the packet of zeta^mu conj(zeta)^nu Phi."""
    mono = packet.monomials(np.asarray(zeta, dtype=complex))
    cols = np.stack([p for _, p in packet.members])
    return mono @ cols


def packet_form(packet: FgrPacket, zeta, use_lap: bool = False) -> float:
    """<delta(H - w) conj(Phi_w), Phi_w> as a quadratic form in the monomials."""
    c = packet.monomials(np.asarray(zeta, dtype=complex))
    g = packet.gram_lap if use_lap else packet.gram
    return float(np.real(np.conj(c) @ g @ c))


@dataclass
class FgrFormResult:
    value: float
    per_w: dict
    alarm: bool


def fgr_form(packets, zeta, use_lap: bool = False) -> FgrFormResult:
    """Sum over w of the delta-form; negative beyond the alarm level flags."""
    per_w = {p.w: packet_form(p, zeta, use_lap=use_lap) for p in packets}
    value = float(sum(per_w.values()))
    scale = max((float(np.max(np.abs(p.gram))) for p in packets), default=0.0)
    alarm = value < -POSITIVITY_ALARM * max(1.0, scale)
    return FgrFormResult(value=value, per_w=per_w, alarm=alarm)


def monomial_l2(triples, zeta) -> float:
    """sum over M of |zeta^{mu + nu}|^2, the comparison side of the FGR form."""
    zeta = np.asarray(zeta, dtype=complex)
    total = 0.0
    for trip in triples:
        val = 1.0 + 0.0j
        for j, e in enumerate(np.array(trip.mu) + np.array(trip.nu)):
            if e:
                val *= zeta[j] ** int(e)
        total += abs(val) ** 2
    return float(total)


@dataclass
class RayleighReport:
    min_quotient: float
    max_quotient: float
    samples: int
    radii: tuple
    verdict: bool
    quotients: np.ndarray = field(repr=False, default=None)


def rayleigh_report(
    packets,
    triples,
    n_modes: int,
    n_samples: int = 1000,
    radii=(0.5, 1.0, 2.0),
    seed: int = 0,
) -> RayleighReport:
    """Sampled bounds of (sum_w delta-form) / (sum_M |zeta^{mu+nu}|^2).

    The hypothesis verdict is positive when the sampled minimum clears ten
    times the positivity alarm level.
    """
    rng = np.random.default_rng(seed)
    quotients = []
    for _ in range(n_samples):
        v = rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)
        v /= np.linalg.norm(v)
        for rad in radii:
            zeta = rad * v
            denom = monomial_l2(triples, zeta)
            if denom < 1e-300:
                continue
            num = sum(packet_form(p, zeta) for p in packets)
            quotients.append(num / denom)
    quotients = np.array(quotients)
    return RayleighReport(
        min_quotient=float(quotients.min()),
        max_quotient=float(quotients.max()),
        samples=len(quotients),
        radii=tuple(radii),
        verdict=bool(quotients.min() > 10.0 * POSITIVITY_ALARM),
        quotients=quotients,
    )


# ---------------------------------------------------------------------------
# cancellation identities


@dataclass
class CancellationReport:
    phase_residual: float      # Im sum_j conj(zeta_j) dZ0/dconj(zeta_j)
    pv_residual: float         # Im of the weighted principal-value double sum
    delta_residual: float      # weighted delta double sum vs -sum_w <delta Phi_w, Phi_w>
    ok: bool


def cancellation_checks(
    z0: HamExpansion,
    packets,
    zeta_samples,
    tol_phase: float = 1e-12,
    tol_sums: float = 1e-10,
) -> CancellationReport:
    """The three algebraic identities behind the Lyapunov balance.

    (a) the Z0 phase sum is real; (b) the weighted P.V. double sum is real;
    (c) the weighted delta double sum collapses to minus the packet forms.
    All three hold for any hermitian Gram data, so residuals above tolerance
    indicate a structural bug rather than estimator error.
    """
    z0 = z0.merged()
    worst_a = worst_b = worst_c = 0.0
    for zeta in zeta_samples:
        zeta = np.asarray(zeta, dtype=complex)
        nm = len(zeta)
        # (a)
        total = 0.0 + 0.0j
        scale = 1e-300
        for j in range(nm):
            gj = gradient_zbar(z0, j).evaluate(0.0, zeta, np.zeros(1), 1.0) \
                if len(z0) else 0.0
            term = np.conj(zeta[j]) * gj
            total += term
            scale = max(scale, abs(term))
        worst_a = max(worst_a, abs(total.imag) / max(scale, 1.0))

        # (b) and (c)
        pv_sum = 0.0 + 0.0j
        delta_sum = 0.0
        delta_direct = 0.0
        dscale = 1e-300
        for p in packets:
            c = p.monomials(zeta)
            sizes_mu = np.array([sum(t.mu) for t, _ in p.members])
            sizes_nu = np.array([sum(t.nu) for t, _ in p.members])
            if p.gram_pv is not None:
                # weight |nu_a| + |mu_b| on <P.V. conj(c_b Phi_b), c_a Phi_a>
                wmat = sizes_nu[:, None] + sizes_mu[None, :]
                pv_sum += np.sum(wmat * (np.conj(c)[None, :] * c[:, None]) * p.gram_pv.T)
            wmat_c = (sizes_mu[None, :] - sizes_nu[:, None])
            block = np.real((np.conj(c)[None, :] * c[:, None]) * p.gram.T)
            delta_sum += float(np.sum(wmat_c * block))
            q = float(np.real(np.conj(c) @ p.gram @ c))
            delta_direct += q
            dscale = max(dscale, abs(q), float(np.sum(np.abs(block))))
        worst_b = max(worst_b, abs(pv_sum.imag) / max(abs(pv_sum.real), dscale, 1.0))
        worst_c = max(worst_c, abs(delta_sum + delta_direct) / max(dscale, 1.0))

    return CancellationReport(
        phase_residual=worst_a,
        pv_residual=worst_b,
        delta_residual=worst_c,
        ok=(worst_a < tol_phase and worst_b < tol_sums and worst_c < tol_sums),
    )


# ---------------------------------------------------------------------------
# Lyapunov balance along a trajectory


@dataclass
class BalanceResult:
    times: np.ndarray
    residual: np.ndarray           # r(t) = d/dt (1/2) sum |zeta|^2 + pi sum_w Q_w
    residual_integral: float       # int |r| dt
    drift: np.ndarray              # (1/2)|zeta|^2(t) + pi int_0^t sum Q - initial
    fgr_flux: np.ndarray           # pi sum_w Q_w(zeta(t))


def lyapunov_balance(times, zeta_series, packets) -> BalanceResult:
    """Balance residual of the half-action identity on a sampled trajectory.

    Uses centered differences on uniform samples; raises on non-uniform
    spacing.  The residual is the measured source term sum_j Im(D_j conj(zeta_j)).
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 3:
        raise ValueError("need at least three samples")
    dt = np.diff(times)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * max(dt[0], 1e-12):
        raise ValueError("non-uniform sampling")
    step = dt[0]
    zetas = np.asarray(zeta_series, dtype=complex)
    action = 0.5 * np.sum(np.abs(zetas) ** 2, axis=1)
    flux = np.array([np.pi * sum(packet_form(p, z) for p in packets) for z in zetas])

    ddt = np.empty_like(action)
    ddt[1:-1] = (action[2:] - action[:-2]) / (2.0 * step)
    ddt[0] = (action[1] - action[0]) / step
    ddt[-1] = (action[-1] - action[-2]) / step
    residual = ddt + flux

    cum_flux = np.concatenate([[0.0], np.cumsum(0.5 * (flux[1:] + flux[:-1]) * step)])
    drift = action + cum_flux - action[0]
    res_int = float(np.trapezoid(np.abs(residual), times))
    return BalanceResult(times=times, residual=residual, residual_integral=res_int,
                         drift=drift, fgr_flux=flux)
