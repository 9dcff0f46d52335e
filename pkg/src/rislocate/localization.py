"""Coarse-to-fine localization: IFFT ToA/AoA search, back-projection through each
RIS segment, and BFGS refinement of the least-squares likelihood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crlb import ObservationModel
from .errors import DimensionMismatch, EmptyWindow, NonFiniteObjective
from .scenario import SPEED_OF_LIGHT, ArrayGeometry, SystemConfig
from .signaling import MeasurementTensor, ReflectionSchedule

MAX_ITERATIONS = 50
GRAD_RTOL = 1e-9
STEP_TOL_M = 1e-12
ARMIJO_C = 1e-4
SHRINK = 0.5
MAX_BACKTRACKS = 60

PROFILES = ("none", "common", "segment")
SEARCH_MARGIN_M = 10.0
PROFILED_STEP_TOL_M = 1e-6


@dataclass
class CoarseResult:
    toa_hat: float
    aoa_hat: float
    candidates: np.ndarray
    valid: np.ndarray
    objective_values: np.ndarray
    best_index: int

    @property
    def estimate(self) -> np.ndarray:
        return self.candidates[self.best_index]


@dataclass
class FineResult:
    refined: np.ndarray
    objective_values: np.ndarray
    iterations_used: np.ndarray
    converged: np.ndarray
    best_index: int = 0

    @property
    def final_estimate(self) -> np.ndarray:
        return self.refined[self.best_index]


class MleObjective:
    """``||Y_model(p) - Y_obs||_F^2`` bound to one observation, with fast gradients.

    The model is a sum over segments of rank-one (slot x subcarrier x antenna)
    terms, so inner products factor into small Gram matrices and one
    projection of the data per evaluation.

    Positions outside ``region`` (the area of interest padded by
    ``SEARCH_MARGIN_M`` unless given) evaluate to ``inf``; far from the RIS the
    model fades to zero and the unconstrained objective would otherwise
    drift towards infinity at low SNR.

    ``profile`` optionally minimises over nuisance complex gains in closed
    form: ``"common"`` scales the whole model by one complex number and
    ``"segment"`` gives every segment its own.  Both remove carrier-phase
    fringes from the landscape (all of them for ``"segment"``, the common
    range fringe for ``"common"``).
    """

    def __init__(self, model: ObservationModel, observed, region=None):
        obs = np.asarray(observed.data if isinstance(observed, MeasurementTensor) else observed, dtype=complex)
        n, t, r = model.config.num_subcarriers, model.schedule.num_slots, model.config.num_rx_antennas
        if obs.shape != (n, t, r):
            raise DimensionMismatch(f"observation shape {obs.shape} does not match model {(n, t, r)}")
        self.model = model
        self.observed = obs
        self._conj_obs = np.ascontiguousarray(obs.conj())
        self.data_energy = float(np.vdot(obs, obs).real)
        self.evaluations = 0
        if region is None:
            x0, x1, y0, y1 = model.config.area_of_interest
            region = (x0 - SEARCH_MARGIN_M, x1 + SEARCH_MARGIN_M, y0 - SEARCH_MARGIN_M, y1 + SEARCH_MARGIN_M)
        self.region = tuple(float(v) for v in region)

    def clip(self, p) -> np.ndarray:
        x0, x1, y0, y1 = self.region
        return np.array([min(max(p[0], x0), x1), min(max(p[1], y0), y1)], dtype=float)

    def inside(self, p) -> bool:
        x0, x1, y0, y1 = self.region
        return bool(x0 <= p[0] <= x1 and y0 <= p[1] <= y1)

    def exact_value(self, p) -> float:
        """Objective from the explicit residual (no cancellation; slower)."""
        r = self.model.predict(np.asarray(p, dtype=float)) - self.observed
        return float(np.vdot(r, r).real)

    def value(self, p, profile: str = "none") -> float:
        return self.value_and_grad(p, profile, need_grad=False)[0]

    def value_and_grad(self, p, profile: str = "none", need_grad: bool = True):
        m = self.model
        mu = m.config.pathloss_exponent
        p = np.asarray(p, dtype=float)
        if not self.inside(p):
            # outside the search region the line search sees an infinite wall
            return np.inf, np.full(2, np.nan) if need_grad else None
        q, d, u, amp, delay, rx, ris, beta = m._factors(p)
        self.evaluations += 1
        c = beta * amp  # (T, L)
        rx_i = rx * m.rx_index
        proj = self._conj_obs @ np.concatenate([rx, rx_i]).T  # (N, T, 2L)
        nseg = len(d)
        v0 = np.einsum("ntl,ln->tl", proj[..., :nseg], delay)
        ge = delay.conj() @ delay.T
        gr = rx.conj() @ rx.T
        # projections <X_l, Y_obs> and Gram of the per-segment model terms
        b = np.sum(c * v0, axis=0).conj()
        gx = (c.conj().T @ c) * ge * gr
        alpha = _profile_gains(gx, b, profile)
        value = self.data_energy + float(np.real(alpha.conj() @ gx @ alpha)) - 2 * float(np.real(alpha.conj() @ b))
        if not np.isfinite(value):
            raise NonFiniteObjective("objective is not finite")
        value = max(value, 0.0)
        if not need_grad:
            return value, None

        vf = np.einsum("ntl,ln->tl", proj[..., :nseg], delay * m.freqs)
        vi = np.einsum("ntl,ln->tl", proj[..., nseg:], delay)
        gef = delay.conj() @ (delay * m.freqs).T
        gri = rx.conj() @ rx_i.T
        dbeta = np.einsum("tlk,lk->tl", m.weights, 1j * np.pi * m.k * ris)

        ct = c * alpha
        dct = dbeta * amp * alpha
        cc = ct.conj().T @ ct  # [l', l]
        cdb = ct.conj().T @ dct
        dist_amp = -mu / (2 * d)
        delay_rate = -2j * np.pi / SPEED_OF_LIGHT
        model_d = np.sum(cc * (dist_amp[None, :] * ge + delay_rate * gef) * gr, axis=0)
        model_u = np.sum(cdb * ge * gr + cc * ge * (-1j * np.pi) * gri, axis=0)
        data_d = np.sum(ct * (dist_amp * v0 + delay_rate * vf), axis=0)
        data_u = np.sum(dct * v0 - 1j * np.pi * ct * vi, axis=0)
        g_dist = 2 * np.real(model_d - data_d)
        g_cos = 2 * np.real(model_u - data_u)
        dd, du = m._chain(q, d, u)
        return value, g_dist @ dd + g_cos @ du


def _profile_gains(gram: np.ndarray, proj: np.ndarray, profile: str) -> np.ndarray:
    size = len(proj)
    if profile == "none":
        return np.ones(size, dtype=complex)
    if profile == "common":
        den = np.real(np.sum(gram))
        return np.full(size, np.sum(proj) / den if den > 0 else 0.0, dtype=complex)
    if profile == "segment":
        ridge = 1e-12 * np.real(np.trace(gram)) / size
        return np.linalg.solve(gram + ridge * np.eye(size), proj)
    raise ValueError(f"unknown profile {profile!r}")


# -- quasi-Newton ------------------------------------------------------------------


@dataclass
class BfgsResult:
    position: np.ndarray
    objective: float
    iterations: int
    converged: bool
    history: list


def bfgs_minimize(fun, x0, max_iter: int = MAX_ITERATIONS, grad_rtol: float = GRAD_RTOL,
                  step_tol: float = STEP_TOL_M, initial_step: float = 1.0) -> BfgsResult:
    """BFGS with Armijo backtracking on ``fun(x) -> (value, gradient)``.

    The inverse Hessian starts as ``initial_step * I / ||g_0||`` so the first
    trial step has length ``initial_step`` (1 by default).  Accepted steps
    never increase the objective.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjective("objective or gradient is not finite at the starting point")
    g0 = np.linalg.norm(g)
    history = [f]
    if g0 == 0.0:
        return BfgsResult(x, f, 0, True, history)
    eye = np.eye(len(x))
    h = eye * initial_step / g0
    for it in range(1, max_iter + 1):
        direction = -h @ g
        slope = g @ direction
        if slope >= 0:
            h = eye * initial_step / np.linalg.norm(g)
            direction = -h @ g
            slope = g @ direction
        lam = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            trial = x + lam * direction
            try:
                f_new, g_new = fun(trial)
            except (NonFiniteObjective, ArithmeticError, ValueError):
                f_new = np.inf
            if np.isfinite(f_new) and f_new <= f + ARMIJO_C * lam * slope:
                accepted = True
                break
            lam *= SHRINK
        if not accepted:
            # no decrease representable along a descent direction: numerical minimum
            return BfgsResult(x, f, it - 1, True, history)
        s = trial - x
        y = g_new - g
        x, f, g = trial, f_new, g_new
        history.append(f)
        sy = s @ y
        if sy > 1e-300:
            rho = 1.0 / sy
            v = eye - rho * np.outer(s, y)
            h = v @ h @ v.T + rho * np.outer(s, s)
        if np.linalg.norm(g) <= grad_rtol * g0:
            return BfgsResult(x, f, it, True, history)
        if np.linalg.norm(s) < step_tol:
            return BfgsResult(x, f, it, True, history)
    return BfgsResult(x, f, max_iter, False, history)


# -- coarse stage --------------------------------------------------------------------


def _window_data(separated) -> np.ndarray:
    data = np.asarray(separated.data if isinstance(separated, MeasurementTensor) else separated)
    if data.ndim != 3 or data.shape[1] == 0:
        raise EmptyWindow("coarse estimation needs at least one slot")
    return data


def coarse_toa(separated, config: SystemConfig) -> float:
    """Delay on a grid of ``1 / (c0 N df)`` maximising the zero-padded IFFT energy."""
    data = _window_data(separated)
    size = config.oversampling_factor * config.num_subcarriers
    energy = np.sum(np.abs(np.fft.ifft(data, n=size, axis=0)) ** 2, axis=(1, 2))
    k = int(np.argmax(energy))
    return k / (size * config.subcarrier_spacing_hz)


def coarse_aoa(separated, config: SystemConfig) -> float:
    """Direction cosine on a grid of ``2 / (c0 N_R)`` in ``[-1, 1)``."""
    data = _window_data(separated)
    size = config.oversampling_factor * config.num_rx_antennas
    energy = np.sum(np.abs(np.fft.ifft(data, n=size, axis=2)) ** 2, axis=(0, 1))
    k = int(np.argmax(energy))
    f = 2.0 * k / size
    return f - 2.0 if f >= 1.0 else f


def coarse_candidates(toa: float, aoa: float, geometry: ArrayGeometry, config: SystemConfig | None = None):
    """Back-project ``(toa, aoa)`` through every segment centre.

    Returns the candidates (L, 2) and a validity mask; candidates whose
    remaining range is not positive are flagged and placed at
    ``min_distance_hint`` from their segment instead.
    """
    centers = geometry.segment_centers
    bs_dist = np.linalg.norm(centers - geometry.bs_reference, axis=1)
    rng = SPEED_OF_LIGHT * toa - bs_dist
    valid = rng > 0
    if config is not None:
        rng = np.where(valid, rng, config.min_distance_hint)
    f = float(np.clip(aoa, -1.0, 1.0))
    direction = np.array([-f, -np.sqrt(1.0 - f * f)])
    return centers + rng[:, None] * direction[None, :], valid


def coarse_localize(separated_first, schedule_first: ReflectionSchedule, config: SystemConfig,
                    model: ObservationModel | None = None, pilot=None) -> CoarseResult:
    geometry = model.geometry if model is not None else None
    model = model or ObservationModel(config, schedule_first, pilot)
    toa = coarse_toa(separated_first, config)
    aoa = coarse_aoa(separated_first, config)
    cands, valid = coarse_candidates(toa, aoa, geometry or model.geometry, config)
    objective = MleObjective(model, _window_data(separated_first))
    values = np.array([_safe_value(objective, c) for c in cands])
    return CoarseResult(toa, aoa, cands, valid, values, int(np.argmin(values)))


def _safe_value(objective: MleObjective, p, profile: str = "none") -> float:
    try:
        return objective.value(p, profile)
    except (ArithmeticError, ValueError):
        return np.inf


# -- fine stage -------------------------------------------------------------------------


def mle_objective(p, separated, schedule: ReflectionSchedule, config: SystemConfig, pilot=None) -> float:
    """``||Y_model(p) - Y_sep||_F^2`` for a separated tensor."""
    model = ObservationModel(config, schedule, pilot)
    return MleObjective(model, _window_data(separated)).exact_value(p)


def fine_refine(candidate, separated, schedule: ReflectionSchedule, config: SystemConfig,
                objective: MleObjective | None = None, profile: str = "none",
                max_iter: int = MAX_ITERATIONS):
    """BFGS on the least-squares objective from ``candidate``.

    Returns ``(position, objective, iterations, converged)``.
    """
    objective = objective or MleObjective(ObservationModel(config, schedule), _window_data(separated))
    res = bfgs_minimize(lambda x: objective.value_and_grad(x, profile), candidate, max_iter=max_iter)
    value = objective.exact_value(res.position) if profile == "none" else res.objective
    return res.position, value, res.iterations, res.converged


def _stage(objective: MleObjective, x, profile: str, step: float, max_iter: int) -> BfgsResult:
    step_tol = STEP_TOL_M if profile == "none" else PROFILED_STEP_TOL_M
    return bfgs_minimize(lambda z: objective.value_and_grad(z, profile), x, max_iter=max_iter,
                         initial_step=step, step_tol=step_tol)


def graduated_refine(candidate, objective: MleObjective, max_iter: int = MAX_ITERATIONS):
    """Refine through progressively less profiled objectives.

    Per-segment gains are profiled first (no carrier fringes), then a single
    common gain.  The estimate is then shifted along range so the common
    carrier phase cancels, which lands it on the nearest fringe, and the full
    objective is polished with wavelength-sized steps.

    Returns ``(position, objective, iterations, converged)``.
    """
    first = _stage(objective, np.asarray(candidate, dtype=float), "segment", 1.0, max_iter)
    x, f, k, ok = _polish(first.position, objective, max_iter)
    return x, f, first.iterations + k, ok


def _polish(x, objective: MleObjective, max_iter: int):
    wavelength = objective.model.config.wavelength
    common = _stage(objective, x, "common", wavelength / 4, max_iter)
    start = align_carrier_phase(common.position, objective)
    full = _stage(objective, start, "none", wavelength / 16, max_iter)
    return full.position, full.objective, common.iterations + full.iterations, full.converged


def align_carrier_phase(p, objective: MleObjective) -> np.ndarray:
    """Move ``p`` along its range direction so the best common gain has zero phase.

    A range shift ``delta`` rotates the reflected signal by
    ``exp(-j 2 pi delta / lambda)``, so the residual phase of the profiled
    common gain maps to a sub-wavelength shift.
    """
    m = objective.model
    _, _, _, amp, delay, rx, _, beta = m._factors(p)
    c = beta * amp
    v0 = np.einsum("nti,ln,li->tl", objective._conj_obs, delay, rx, optimize=True)
    b = np.sum(c * v0, axis=0).conj()
    gain = _profile_gains((c.conj().T @ c) * (delay.conj() @ delay.T) * (rx.conj() @ rx.T), b, "common")[0]
    if gain == 0:
        return np.asarray(p, dtype=float)
    direction = np.asarray(p, dtype=float) - m.centers.mean(axis=0)
    direction /= np.linalg.norm(direction)
    shift = -np.angle(gain) * m.config.wavelength / (2 * np.pi)
    return np.asarray(p, dtype=float) + shift * direction


def localize(separated: MeasurementTensor, schedule: ReflectionSchedule, config: SystemConfig,
             first_window: int | None = None, pilot=None, strategy: str | None = None,
             coarse: CoarseResult | None = None):
    """Two-stage estimate from a separated full-window tensor.

    The coarse stage uses the first ``first_window`` slots (default ``T/2``);
    every coarse candidate is then refined on all slots and the refinement
    with the smallest objective wins.  ``strategy`` is ``"graduated"``
    (default from the config) or ``"direct"`` for plain BFGS on the full
    objective.
    """
    data = _window_data(separated)
    if data.shape[1] != schedule.num_slots:
        raise DimensionMismatch("tensor and schedule disagree on the number of slots")
    strategy = strategy or config.fine_strategy
    half = schedule.num_slots // 2 if first_window is None else first_window
    full_model = ObservationModel(config, schedule, pilot)
    if coarse is None:
        first_sched = schedule.slots(0, half)
        first_model = ObservationModel(config, first_sched, full_model.pilot, full_model.geometry)
        coarse = coarse_localize(data[:, :half, :], first_sched, config, first_model)
    objective = MleObjective(full_model, data)
    fine = refine_candidates(coarse.candidates, objective, strategy)
    return coarse, fine


def refine_candidates(candidates, objective: MleObjective, strategy: str = "graduated") -> FineResult:
    """Refine every candidate and keep the one with the smallest objective.

    Under the graduated strategy, candidates whose fringe-free first stage
    ends within a quarter wavelength of an earlier one share that one's
    remaining stages.
    """
    wavelength = objective.model.config.wavelength
    refined, values, iters, conv = [], [], [], []
    polished = []  # (first-stage position, polish result)
    for cand in candidates:
        cand = objective.clip(np.asarray(cand, dtype=float))
        try:
            if strategy == "graduated":
                first = _stage(objective, cand, "segment", 1.0, MAX_ITERATIONS)
                hit = next((r for pos, r in polished if np.linalg.norm(pos - first.position) < wavelength / 4), None)
                if hit is None:
                    hit = _polish(first.position, objective, MAX_ITERATIONS)
                    polished.append((first.position, hit))
                x, f, k, ok = hit[0], hit[1], first.iterations + hit[2], hit[3]
            else:
                res = _stage(objective, cand, "none", 1.0, MAX_ITERATIONS)
                x, f, k, ok = res.position, res.objective, res.iterations, res.converged
            f = objective.exact_value(x)
        except (NonFiniteObjective, ArithmeticError, ValueError):
            x, f, k, ok = cand, np.inf, 0, False
        refined.append(x)
        values.append(f)
        iters.append(k)
        conv.append(ok)
    values = np.array(values)
    return FineResult(
        refined=np.array(refined),
        objective_values=values,
        iterations_used=np.array(iters),
        converged=np.array(conv),
        best_index=int(np.argmin(values)),
    )
