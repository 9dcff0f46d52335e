"""Exact near-field and partitioned far-field channels, NLoS multipath, and the
per-segment response vectors ``g`` and ``z`` used for beamforming and bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, DimensionMismatch
from .scenario import SPEED_OF_LIGHT, ArrayGeometry, PathGeometry, SystemConfig, link_cosine
from .signaling import MODEL, MeasurementTensor, ReflectionSchedule

NLOS_EXCESS_DELAY_S = 200e-9
NLOS_EXCESS_LOSS_DB = (10.0, 20.0)


def steering_vector(length: int, f) -> np.ndarray:
    """``exp(-j*pi*k*f)`` for ``k = 0..length-1``; broadcasts over ``f``."""
    k = np.arange(length)
    return np.exp(-1j * np.pi * np.multiply.outer(np.asarray(f, dtype=float), k))


def make_pilot(config: SystemConfig, geometry: ArrayGeometry) -> np.ndarray:
    """Pilot ``x = sqrt(P_T) * v``; ``v`` steers towards the RIS centre or is uniform."""
    n_t = config.num_tx_antennas
    if config.precoder == "uniform":
        v = np.ones(n_t, dtype=complex) / np.sqrt(n_t)
    else:
        cos = link_cosine(geometry.bs_reference, np.asarray(config.ris_center))
        v = steering_vector(n_t, cos) / np.sqrt(n_t)
    return np.sqrt(config.tx_power_watts) * v


# -- exact model -------------------------------------------------------------


def _element_links(geometry: ArrayGeometry, ue_position, pathloss_exponent: float):
    """Distances and amplitudes between every RIS element and every BS/UE antenna."""
    ue = geometry.ue_element_positions_for(ue_position)
    ris = geometry.ris_element_positions
    d_bs = np.linalg.norm(ris[:, None, :] - geometry.bs_element_positions[None, :, :], axis=2)
    d_ue = np.linalg.norm(ue[:, None, :] - ris[None, :, :], axis=2)
    if d_bs.min() < 1e-6 or d_ue.min() < 1e-6:
        raise DegenerateGeometry("an antenna coincides with a RIS element")
    return d_bs, d_ue


def near_field_cascade(geometry: ArrayGeometry, ue_position, phase_vector, frequency_hz: float,
                       pathloss_exponent: float) -> np.ndarray:
    """Element-wise spherical-wave RIS cascade, shape (N_R, N_T).

    Entry ``(i, j)`` sums ``sqrt(rho_mj * rho_mi) * exp(-j 2 pi f (tau_mj + tau_mi)) * psi_m``
    over all RIS elements ``m``.
    """
    psi = np.asarray(phase_vector, dtype=complex)
    d_bs, d_ue = _element_links(geometry, ue_position, pathloss_exponent)
    if psi.shape != (d_bs.shape[0],):
        raise DimensionMismatch("phase_vector length must equal the number of RIS elements")
    mu = pathloss_exponent
    h_mt = d_bs ** (-mu / 2) * np.exp(-2j * np.pi * frequency_hz * d_bs / SPEED_OF_LIGHT)
    h_rm = d_ue ** (-mu / 2) * np.exp(-2j * np.pi * frequency_hz * d_ue / SPEED_OF_LIGHT)
    return (h_rm * psi[None, :]) @ h_mt


# -- partitioned far-field model ----------------------------------------------


def farfield_segment_channels(path: PathGeometry, frequency_hz: float, config: SystemConfig):
    """Per-segment rank-one channels.

    Returns
    -------
    h_mt : ndarray, shape (L, M/L, N_T)
        BS to RIS segment.
    h_rm : ndarray, shape (L, N_R, M/L)
        RIS segment to UE.
    """
    m = config.segment_size
    gain_mt = np.sqrt(path.pathloss_bs_ris) * np.exp(-2j * np.pi * path.toa_bs_ris * frequency_hz)
    gain_rm = np.sqrt(path.pathloss_ris_ue) * np.exp(-2j * np.pi * path.toa_ris_ue * frequency_hz)
    h_mt = gain_mt[:, None, None] * (
        steering_vector(m, path.aoa_ris)[:, :, None]
        * steering_vector(config.num_tx_antennas, path.aod_bs).conj()[:, None, :]
    )
    h_rm = gain_rm[:, None, None] * (
        steering_vector(config.num_rx_antennas, path.aoa_ue)[:, :, None]
        * steering_vector(m, path.aod_ris).conj()[:, None, :]
    )
    return h_mt, h_rm


def cascaded_partitioned(path: PathGeometry, phase_vector, frequency_hz: float, config: SystemConfig) -> np.ndarray:
    """Sum over segments of ``H_rm diag(psi_seg) H_mt``, shape (N_R, N_T)."""
    psi = np.asarray(phase_vector, dtype=complex)
    if psi.shape != (config.num_ris_elements,):
        raise DimensionMismatch("phase_vector length must equal num_ris_elements")
    h_mt, h_rm = farfield_segment_channels(path, frequency_hz, config)
    psi_seg = psi.reshape(config.num_partitions, config.segment_size)
    return np.einsum("lik,lk,lkj->ij", h_rm, psi_seg, h_mt)


def end_to_end_response(path: PathGeometry, segment_size: int, segment: int | None = None) -> np.ndarray:
    """``g = conj(a(aod_ris)) * a(aoa_ris)``; shape (L, M/L), or (M/L,) for one segment."""
    g = steering_vector(segment_size, path.aod_ris).conj() * steering_vector(segment_size, path.aoa_ris)
    return g if segment is None else g[segment]


def z_vector(path: PathGeometry, pilot, frequencies_hz, num_rx_antennas: int) -> np.ndarray:
    """Position-dependent part of the reflected signal, shape (L, N, N_R).

    ``z[l, n] = sqrt(rho_mt rho_rm) exp(-j 2 pi tau_total f_n) a_NR(aoa_ue) a_NT^H(aod_bs) x``.
    A scalar frequency yields shape (L, N_R).
    """
    pilot = np.asarray(pilot, dtype=complex)
    beam = steering_vector(len(pilot), path.aod_bs).conj() @ pilot
    amp = np.sqrt(path.pathloss_bs_ris * path.pathloss_ris_ue) * beam
    f = np.asarray(frequencies_hz, dtype=float)
    delay = np.exp(-2j * np.pi * np.multiply.outer(path.toa_total, f))
    rx = steering_vector(num_rx_antennas, path.aoa_ue)
    if f.ndim == 0:
        return amp[:, None] * delay[:, None] * rx
    return amp[:, None, None] * delay[:, :, None] * rx[:, None, :]


def noise_free_observation(path: PathGeometry, schedule: ReflectionSchedule, pilot, config: SystemConfig) -> MeasurementTensor:
    """Noise-free RIS-reflected observation built from the segment channel matrices."""
    pilot = np.asarray(pilot, dtype=complex)
    psi = schedule.values.reshape(config.num_partitions, config.segment_size, schedule.num_slots)
    out = np.empty((config.num_subcarriers, schedule.num_slots, config.num_rx_antennas), dtype=complex)
    for n, f in enumerate(config.subcarrier_frequencies()):
        h_mt, h_rm = farfield_segment_channels(path, f, config)
        incident = h_mt @ pilot  # (L, m)
        out[n] = np.einsum("lik,lkt,lk->ti", h_rm, psi, incident)
    return MeasurementTensor(out, MODEL)


# -- NLoS ----------------------------------------------------------------------


@dataclass(frozen=True)
class NlosSpec:
    """Scatter-path delays and pathlosses, each shape (K, N_R, N_T)."""

    toa: np.ndarray
    pathloss: np.ndarray

    @property
    def num_paths(self) -> int:
        return self.toa.shape[0]


def nlos_channel(rng: np.random.Generator, config: SystemConfig, ue_position, geometry: ArrayGeometry | None = None):
    """Random single-bounce multipath between BS and UE.

    Delays are uniform over ``[direct, direct + 200 ns]`` and each path is
    10 to 20 dB weaker than free-space loss over the direct distance.

    Returns
    -------
    response : ndarray, shape (N, N_R, N_T)
    spec : NlosSpec
    """
    geometry = geometry or _geometry_for(config)
    k = config.num_scatterers
    n_r, n_t = config.num_rx_antennas, config.num_tx_antennas
    ue = geometry.ue_element_positions_for(ue_position)
    direct = np.linalg.norm(ue[:, None, :] - geometry.bs_element_positions[None, :, :], axis=2)
    if direct.min() < 1e-6:
        raise DegenerateGeometry("UE antenna coincides with a BS antenna")
    shape = (k, 1, 1) if config.nlos_common_per_path else (k, n_r, n_t)
    excess_delay = rng.uniform(0.0, NLOS_EXCESS_DELAY_S, size=shape)
    excess_loss_db = rng.uniform(*NLOS_EXCESS_LOSS_DB, size=shape)
    toa = np.broadcast_to(direct / SPEED_OF_LIGHT + excess_delay, (k, n_r, n_t)).copy()
    pathloss = np.broadcast_to(direct ** (-config.pathloss_exponent) * 10 ** (-excess_loss_db / 10), (k, n_r, n_t)).copy()
    freqs = config.subcarrier_frequencies()
    if k == 0:
        response = np.zeros((len(freqs), n_r, n_t), dtype=complex)
    else:
        phase = np.exp(-2j * np.pi * np.multiply.outer(freqs, toa))  # (N, K, N_R, N_T)
        response = np.einsum("nkij,kij->nij", phase, np.sqrt(pathloss))
    return response, NlosSpec(toa, pathloss)


def _geometry_for(config: SystemConfig) -> ArrayGeometry:
    from .scenario import build_geometry

    return build_geometry(config)


# -- realization -----------------------------------------------------------------


@dataclass(frozen=True)
class ChannelRealization:
    """Everything needed to synthesise observations for one UE position.

    ``mode`` is ``"partitioned"`` (per-segment far-field) or ``"exact"``
    (element-wise spherical wavefront).
    """

    config: SystemConfig
    geometry: ArrayGeometry
    path: PathGeometry
    nlos: np.ndarray
    nlos_spec: NlosSpec
    mode: str = "partitioned"

    def cascade(self, phase_vector, subcarrier: int) -> np.ndarray:
        f = self.config.subcarrier_frequencies()[subcarrier]
        if self.mode == "exact":
            return near_field_cascade(self.geometry, self.path.ue_position, phase_vector, f,
                                      self.config.pathloss_exponent)
        return cascaded_partitioned(self.path, phase_vector, f, self.config)

    def ris_response(self, schedule: ReflectionSchedule, pilot) -> np.ndarray:
        """RIS-reflected pilot for every (n, t), shape (N, T, N_R)."""
        if schedule.num_elements != self.config.num_ris_elements:
            raise DimensionMismatch("schedule element count does not match the configuration")
        if self.mode != "exact":
            return factorized_observation(self.path, schedule, pilot, self.config)
        cfg = self.config
        d_bs, d_ue = _element_links(self.geometry, self.path.ue_position, cfg.pathloss_exponent)
        mu = cfg.pathloss_exponent
        psi = schedule.values
        out = np.empty((cfg.num_subcarriers, schedule.num_slots, cfg.num_rx_antennas), dtype=complex)
        for n, f in enumerate(cfg.subcarrier_frequencies()):
            h_mt = d_bs ** (-mu / 2) * np.exp(-2j * np.pi * f * d_bs / SPEED_OF_LIGHT)
            h_rm = d_ue ** (-mu / 2) * np.exp(-2j * np.pi * f * d_ue / SPEED_OF_LIGHT)
            incident = h_mt @ np.asarray(pilot, dtype=complex)
            out[n] = (h_rm @ (psi * incident[:, None])).T
        return out

    def nlos_response(self, pilot) -> np.ndarray:
        """Time-invariant non-RIS pilot contribution, shape (N, N_R)."""
        return self.nlos @ np.asarray(pilot, dtype=complex)


def realize_channel(rng: np.random.Generator, config: SystemConfig, geometry: ArrayGeometry, ue_position) -> ChannelRealization:
    from .scenario import path_geometry

    path = path_geometry(geometry, ue_position, config)
    nlos, spec = nlos_channel(rng, config, ue_position, geometry)
    return ChannelRealization(config, geometry, path, nlos, spec, config.channel_mode)


def factorized_observation(path: PathGeometry, schedule: ReflectionSchedule, pilot, config: SystemConfig) -> np.ndarray:
    """``sum_l (psi_tl^T g_l) z_nl`` evaluated directly, shape (N, T, N_R)."""
    g = end_to_end_response(path, config.segment_size)
    psi = schedule.values.reshape(config.num_partitions, config.segment_size, schedule.num_slots)
    beta = np.einsum("lkt,lk->tl", psi, g)
    z = z_vector(path, pilot, config.subcarrier_frequencies(), config.num_rx_antennas)
    return np.einsum("tl,lni->nti", beta, z)


def farfield_phase_error(geometry: ArrayGeometry, ue_position, config: SystemConfig,
                         frequency_hz: float | None = None) -> np.ndarray:
    """Per-element phase discrepancy of the partitioned model, shape (M,).

    Compares the exact element path BS -> RIS element -> UE (first antennas)
    with the segment's far-field reconstruction.  The constant phase of each
    segment is removed first since it only reflects the choice of reference
    point inside the segment.
    """
    from .scenario import path_geometry

    f = config.carrier_frequency_hz if frequency_hz is None else frequency_hz
    path = path_geometry(geometry, ue_position, config)
    ris = geometry.ris_element_positions
    d = (np.linalg.norm(ris - geometry.bs_reference, axis=1)
         + np.linalg.norm(ris - np.asarray(ue_position, dtype=float), axis=1))
    exact = -2 * np.pi * f * d / SPEED_OF_LIGHT
    m = config.segment_size
    k = np.arange(m)
    model = (-2 * np.pi * f * path.toa_total[:, None]
             - np.pi * k[None, :] * (path.aoa_ris - path.aod_ris)[:, None])
    err = np.angle(np.exp(1j * (exact.reshape(config.num_partitions, m) - model)))
    offset = np.angle(np.exp(1j * err).mean(axis=1))
    return np.angle(np.exp(1j * (err - offset[:, None]))).ravel()
