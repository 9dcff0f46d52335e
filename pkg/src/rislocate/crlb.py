"""Observation model with analytic Jacobian, Fisher information and position CRLB."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import make_pilot, steering_vector
from .errors import DegenerateGeometry, DimensionMismatch, InvalidInput, SingularFim, UnbalancedSchedule
from .scenario import SPEED_OF_LIGHT, ArrayGeometry, SystemConfig, build_geometry, link_cosine
from .signaling import ReflectionSchedule

FIM_CONDITION_LIMIT = 1e12
FD_STEP_FRACTION = 1e-4


class ObservationModel:
    """Noise-free reflected observation as a function of UE position.

    Everything on the BS side (delays, pathloss, pilot beam gain) and the
    schedule are fixed at construction; only the RIS-UE link depends on the
    position.  Per segment ``l`` the model is::

        Y[n, t, i] = sum_l beta[t, l] * amp_l * E[l, n] * R[l, i]

    with ``beta`` the schedule/response inner product, ``E`` the delay phase
    over subcarriers and ``R`` the receive steering vector.
    """

    def __init__(self, config: SystemConfig, schedule: ReflectionSchedule, pilot=None,
                 geometry: ArrayGeometry | None = None):
        if schedule.num_elements != config.num_ris_elements:
            raise DimensionMismatch("schedule element count does not match the configuration")
        self.config = config
        self.schedule = schedule
        self.geometry = geometry or build_geometry(config)
        self.pilot = make_pilot(config, self.geometry) if pilot is None else np.asarray(pilot, dtype=complex)
        if self.pilot.shape != (config.num_tx_antennas,):
            raise DimensionMismatch("pilot length must equal num_tx_antennas")

        cfg = config
        m = cfg.segment_size
        self.centers = self.geometry.segment_centers
        bs = self.geometry.bs_reference
        d_bs = np.linalg.norm(self.centers - bs, axis=1)
        cos_bs = link_cosine(bs, self.centers)
        beam = steering_vector(cfg.num_tx_antennas, cos_bs).conj() @ self.pilot
        self.static_amp = d_bs ** (-cfg.pathloss_exponent / 2) * beam  # (L,)
        self.toa_bs = d_bs / SPEED_OF_LIGHT
        self.freqs = cfg.subcarrier_frequencies()
        self.k = np.arange(m)
        self.rx_index = np.arange(cfg.num_rx_antennas)
        psi = schedule.values.reshape(cfg.num_partitions, m, schedule.num_slots)
        # weights so that beta[t, l] = sum_k weights[t, l, k] * exp(j pi k cos_l)
        self.weights = np.transpose(psi * steering_vector(m, cos_bs)[:, :, None], (2, 0, 1))
        # constant part of the delay phase
        self.bs_phase = np.exp(-2j * np.pi * np.outer(self.toa_bs, self.freqs))  # (L, N)

    # -- per-position link parameters ------------------------------------

    def _link(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (2,) or not np.all(np.isfinite(p)):
            raise InvalidInput("position must be a finite 2-vector")
        q = self.centers - p
        d = np.linalg.norm(q, axis=1)
        if np.any(d < 1e-6):
            raise DegenerateGeometry("position coincides with a RIS segment center")
        return q, d, q[:, 0] / d

    def _factors(self, p):
        q, d, u = self._link(p)
        mu = self.config.pathloss_exponent
        amp = self.static_amp * d ** (-mu / 2)
        delay = self.bs_phase * np.exp(-2j * np.pi * np.outer(d / SPEED_OF_LIGHT, self.freqs))
        rx = np.exp(-1j * np.pi * np.outer(u, self.rx_index))
        ris = np.exp(1j * np.pi * np.outer(u, self.k))
        beta = np.einsum("tlk,lk->tl", self.weights, ris)
        return q, d, u, amp, delay, rx, ris, beta

    def predict(self, p) -> np.ndarray:
        """Noise-free observation, shape (N, T, N_R)."""
        _, _, _, amp, delay, rx, _, beta = self._factors(p)
        return np.einsum("tl,ln,li->nti", beta * amp, delay, rx, optimize=True)

    def _chain(self, q, d, u):
        # derivatives of distance and cosine w.r.t. position, each (L, 2)
        dd = -q / d[:, None]
        du = np.column_stack([-(1 - u**2) / d, u * (q[:, 1] / d) / d])
        return dd, du

    def predict_with_jacobian(self, p):
        """Observation and its position Jacobian, shapes (N, T, N_R) and (N, T, N_R, 2)."""
        q, d, u, amp, delay, rx, ris, beta = self._factors(p)
        mu = self.config.pathloss_exponent
        dbeta = np.einsum("tlk,lk->tl", self.weights, 1j * np.pi * self.k * ris)
        dd, du = self._chain(q, d, u)
        # d/dd: amplitude and delay; d/du: RIS response and receive steering
        dist_factor = (-mu / (2 * d))[:, None] - 2j * np.pi * self.freqs[None, :] / SPEED_OF_LIGHT  # (L, N)
        ba = beta * amp
        y = np.einsum("tl,ln,li->nti", ba, delay, rx, optimize=True)
        jac = np.zeros(y.shape + (2,), dtype=complex)
        for dim in range(2):
            w_dist = ba * dd[:, dim]
            w_rx = ba * du[:, dim]
            w_beta = dbeta * amp * du[:, dim]
            jac[..., dim] = (
                np.einsum("tl,ln,li->nti", w_dist, delay * dist_factor, rx, optimize=True)
                + np.einsum("tl,ln,li->nti", w_beta, delay, rx, optimize=True)
                + np.einsum("tl,ln,li->nti", w_rx, delay, rx * (-1j * np.pi * self.rx_index), optimize=True)
            )
        return y, jac

    def objective(self, p, observed) -> float:
        """Squared Frobenius distance between the model at ``p`` and ``observed``."""
        r = self.predict(p) - np.asarray(observed)
        return float(np.vdot(r, r).real)

    def objective_and_gradient(self, p, observed):
        """Objective and its gradient, using contractions rather than the full Jacobian."""
        q, d, u, amp, delay, rx, ris, beta = self._factors(p)
        mu = self.config.pathloss_exponent
        y = np.einsum("tl,ln,li->nti", beta * amp, delay, rx, optimize=True)
        r = y - np.asarray(observed)
        value = float(np.vdot(r, r).real)
        rc = r.conj()
        # V[t, l] = sum_{n,i} conj(r) E R, plus frequency- and index-weighted variants
        v0 = np.einsum("nti,ln,li->tl", rc, delay, rx, optimize=True)
        vf = np.einsum("nti,ln,li->tl", rc, delay * self.freqs, rx, optimize=True)
        vi = np.einsum("nti,ln,li->tl", rc, delay, rx * self.rx_index, optimize=True)
        dbeta = np.einsum("tlk,lk->tl", self.weights, 1j * np.pi * self.k * ris)
        g_dist = 2 * np.real(amp * np.sum(beta * (v0 * (-mu / (2 * d)) - 2j * np.pi / SPEED_OF_LIGHT * vf), axis=0))
        g_cos = 2 * np.real(amp * np.sum(dbeta * v0 - 1j * np.pi * beta * vi, axis=0))
        dd, du = self._chain(q, d, u)
        grad = g_dist @ dd + g_cos @ du
        return value, grad


def observation_jacobian(p, schedule: ReflectionSchedule, config: SystemConfig, mode: str = "analytic",
                         pilot=None, model: ObservationModel | None = None) -> np.ndarray:
    """Position Jacobian of the noise-free observation, shape (N, T, N_R, 2)."""
    model = model or ObservationModel(config, schedule, pilot)
    p = np.asarray(p, dtype=float)
    if mode == "analytic":
        return model.predict_with_jacobian(p)[1]
    if mode != "finite-difference":
        raise InvalidInput("mode must be 'analytic' or 'finite-difference'")
    # the carrier phase turns over once per wavelength, so the step is set by
    # the wavelength rather than by the size of the coordinates
    h = FD_STEP_FRACTION * config.wavelength / (2 * np.pi)
    cols = []
    for dim in range(2):
        step = np.zeros(2)
        step[dim] = h
        cols.append((model.predict(p + step) - model.predict(p - step)) / (2 * h))
    return np.stack(cols, axis=-1)


def _require_balanced(schedule: ReflectionSchedule) -> None:
    if not schedule.is_balanced():
        raise UnbalancedSchedule("Fisher information formula requires a schedule balanced over its full length")


def fim_from_jacobian(jac: np.ndarray, noise_power: float) -> np.ndarray:
    j = jac.reshape(-1, jac.shape[-1])
    info = 2.0 / noise_power * np.real(j.conj().T @ j)
    return (info + info.T) / 2


def fim(p, schedule: ReflectionSchedule, config: SystemConfig, pilot=None,
        model: ObservationModel | None = None) -> np.ndarray:
    """2x2 Fisher information of the position (units 1/m^2)."""
    _require_balanced(schedule)
    jac = observation_jacobian(p, schedule, config, "analytic", pilot, model)
    return fim_from_jacobian(jac, config.noise_power_watts)


def crlb_from_fim(info: np.ndarray) -> float:
    if not np.all(np.isfinite(info)) or np.linalg.cond(info) > FIM_CONDITION_LIMIT:
        raise SingularFim("Fisher information is singular or ill-conditioned")
    return float(np.sqrt(np.trace(np.linalg.inv(info))))


def crlb(p, schedule: ReflectionSchedule, config: SystemConfig, pilot=None,
         model: ObservationModel | None = None) -> float:
    """Root of the trace of the inverse Fisher information (meters)."""
    return crlb_from_fim(fim(p, schedule, config, pilot, model))


@dataclass(frozen=True)
class CrlbReport:
    position: np.ndarray
    fim: np.ndarray
    crlb_m: float
    schedule_tag: str


def grid_positions(config: SystemConfig, nx: int, ny: int) -> np.ndarray:
    """Cell centres of an ``nx`` by ``ny`` grid over the area of interest, row-major in y then x."""
    if nx < 2 or ny < 2:
        raise InvalidInput("grid resolution must be at least 2x2")
    x0, x1, y0, y1 = config.area_of_interest
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def designed_schedule(position, config: SystemConfig, geometry=None) -> ReflectionSchedule:
    """FPB phases towards ``position`` rotated one level per slot over all T slots."""
    from .beamforming import extend_balanced, fpb

    return extend_balanced(fpb(position, config, geometry), config, config.num_slots)


def crlb_map(positions, policy: str, config: SystemConfig, rng: np.random.Generator | None = None) -> list[CrlbReport]:
    """CRLB at each position under a shared random schedule or a per-cell designed one.

    ``policy`` is ``"random"`` (one balanced random schedule for every cell,
    drawn from ``rng``) or ``"fpb"`` (phases designed for the true cell
    position, rotated across the whole window).
    """
    from .signaling import balanced_random_schedule

    geometry = build_geometry(config)
    pilot = make_pilot(config, geometry)
    positions = np.asarray(positions, dtype=float)
    reports = []
    if policy == "random":
        rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
        shared = balanced_random_schedule(rng, config, config.num_slots)
        model = ObservationModel(config, shared, pilot, geometry)
    elif policy != "fpb":
        raise InvalidInput("policy must be 'random' or 'fpb'")
    for p in positions:
        if policy == "fpb":
            sched = designed_schedule(p, config, geometry)
            model = ObservationModel(config, sched, pilot, geometry)
        info = fim(p, model.schedule, config, pilot, model)
        reports.append(CrlbReport(p.copy(), info, crlb_from_fim(info), policy))
    return reports
