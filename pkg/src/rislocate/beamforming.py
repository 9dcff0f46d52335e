"""Discrete-phase RIS beamforming.

The gain of a segment ``|psi^T g|^2`` is maximised over phases restricted to
``exp(j*2*pi*s/2^b)``.  The optimum lies in the one-parameter family of
omega-beamformers (quantise ``omega - arg(g_k)`` to the nearest level), and
that family is piecewise constant in ``omega`` with at most ``2^b * len(g)``
breakpoints, so enumerating one point per piece is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidWindow, TooLarge, ZeroChannelEntry, ZeroOperand
from .signaling import ReflectionSchedule

TWO_PI = 2.0 * np.pi
ORACLE_LIMIT = 2**24
_TIE_RTOL = 1e-12


def round_half_away(x):
    """Round to nearest integer, halves away from zero."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def internal_angle(x: complex, y: complex) -> float:
    """Angle in ``[0, pi]`` between two non-zero complex numbers."""
    if x == 0 or y == 0:
        raise ZeroOperand("internal angle of a zero operand is undefined")
    return float(np.pi - abs(abs(np.angle(x) - np.angle(y)) - np.pi))


def _check_channel(g) -> np.ndarray:
    g = np.asarray(g, dtype=complex)
    if g.ndim < 1 or g.shape[-1] == 0:
        raise DimensionMismatch("channel vector must be non-empty")
    if np.any(g == 0):
        raise ZeroChannelEntry("channel vector has a zero entry")
    return g


def omega_indices(g, omega, bits: int) -> np.ndarray:
    """Phase-level indices of the omega-beamformer; broadcasts ``omega`` against ``g``."""
    levels = 2**bits
    steps = round_half_away(levels * (np.asarray(omega)[..., None] - np.angle(g)) / TWO_PI)
    return np.mod(steps, levels).astype(np.int64)


def omega_beamformer(g, omega: float, bits: int) -> np.ndarray:
    """Quantise ``omega - arg(g_k)`` to the nearest of ``2^b`` phase levels."""
    g = _check_channel(g)
    return np.exp(TWO_PI * 1j * omega_indices(g, omega, bits) / 2**bits)


def candidate_set(g, bits: int) -> np.ndarray:
    """Sorted, de-duplicated rotation angles in ``[0, 2 pi)`` where some entry switches level."""
    g = _check_channel(g)
    levels = 2**bits
    arg = np.angle(g)
    base = np.ceil(-levels * arg / TWO_PI - 0.5)
    s = np.arange(levels)
    cand = arg[:, None] + TWO_PI / levels * (base[:, None] + s[None, :] + 0.5)
    cand = np.mod(cand.ravel(), TWO_PI)
    cand[cand >= TWO_PI] = 0.0
    return np.unique(cand)


def _representatives(breakpoints: np.ndarray) -> np.ndarray:
    # one angle strictly inside every arc between consecutive breakpoints
    nxt = np.append(breakpoints[1:], breakpoints[0] + TWO_PI)
    return np.mod((breakpoints + nxt) / 2.0, TWO_PI)


def _best(gains: np.ndarray) -> int:
    top = gains.max()
    return int(np.flatnonzero(gains >= top * (1 - _TIE_RTOL))[0])


def fpb_segment(g, bits: int):
    """Globally optimal discrete phases for one segment.

    Returns
    -------
    psi : ndarray of complex
        Optimal unit-modulus phases.
    omega : float
        Rotation angle whose omega-beamformer equals ``psi``.
    gain : float
        ``|psi^T g|^2``.
    """
    g = _check_channel(g)
    omegas = np.sort(_representatives(candidate_set(g, bits)))
    idx = omega_indices(g, omegas, bits)
    psi_all = np.exp(TWO_PI * 1j * idx / 2**bits)
    gains = np.abs(psi_all @ g) ** 2
    k = _best(gains)
    return psi_all[k], float(omegas[k]), float(gains[k])


def cpp(g, bits: int) -> np.ndarray:
    """Closest-point projection: quantise each conjugate channel phase independently."""
    return omega_beamformer(g, 0.0, bits)


def exhaustive_oracle(g, bits: int):
    """Full enumeration of ``F^len(g)``; ties go to the lexicographically smallest index vector.

    Global phase rotation leaves the gain unchanged, so the lexicographically
    smallest optimum always starts with index 0; only those vectors are
    enumerated, as a product of two half-enumerations.
    """
    g = _check_channel(g)
    m = len(g)
    levels = 2**bits
    if levels**m > ORACLE_LIMIT:
        raise TooLarge(f"2^(b*len) = {levels}^{m} exceeds the oracle limit 2^24")
    phases = np.exp(TWO_PI * 1j * np.arange(levels) / levels)
    if m == 1:
        return np.ones(1, dtype=complex), float(abs(g[0]) ** 2)
    free = m - 1
    head = free // 2
    tail = free - head

    def partial_sums(part):
        if len(part) == 0:
            return np.zeros(1, dtype=complex), np.zeros((1, 0), dtype=np.int64)
        grid = np.indices((levels,) * len(part)).reshape(len(part), -1).T
        return (phases[grid] * part).sum(axis=1), grid

    s_head, i_head = partial_sums(g[1:1 + head])
    s_tail, i_tail = partial_sums(g[1 + head:])
    total = np.abs(g[0] + s_head[:, None] + s_tail[None, :]) ** 2
    flat = total.ravel()
    k = _best(flat)
    a, b = divmod(k, len(s_tail))
    index = np.concatenate([[0], i_head[a], i_tail[b]])
    return phases[index], float(flat[k])


def gain(psi, g) -> float:
    """``sum_l |psi_l^T g_l|^2`` for a full phase vector and per-segment responses (L, m)."""
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    psi = np.asarray(psi, dtype=complex)
    if psi.size != g.size:
        raise DimensionMismatch(f"phase vector has {psi.size} entries, responses have {g.size}")
    return float(np.sum(np.abs(np.sum(psi.reshape(g.shape) * g, axis=1)) ** 2))


@dataclass(frozen=True)
class BeamformerSolution:
    """Per-segment phases (as level indices), rotations and gains."""

    phase_indices: np.ndarray
    winning_rotation: np.ndarray
    segment_gain: np.ndarray
    phase_bits: int
    method: str = "FPB"

    @property
    def total_gain(self) -> float:
        return float(np.sum(self.segment_gain))

    @property
    def phase_vectors(self) -> np.ndarray:
        return np.exp(TWO_PI * 1j * self.phase_indices / 2**self.phase_bits)

    @property
    def full_indices(self) -> np.ndarray:
        return self.phase_indices.ravel()


def _indices_of(psi, bits: int) -> np.ndarray:
    levels = 2**bits
    return np.mod(np.rint(np.angle(psi) * levels / TWO_PI), levels).astype(np.int64)


def segment_responses(target, config, geometry=None) -> np.ndarray:
    """End-to-end responses ``g`` (L, M/L) for a PathGeometry or a UE position."""
    from .channel import end_to_end_response
    from .scenario import PathGeometry, build_geometry, path_geometry

    if not isinstance(target, PathGeometry):
        geometry = geometry or build_geometry(config)
        target = path_geometry(geometry, np.asarray(target, dtype=float), config)
    return end_to_end_response(target, config.segment_size)


def fpb(target, config, geometry=None) -> BeamformerSolution:
    """Optimal discrete phases for every segment towards ``target``.

    ``target`` is a PathGeometry or a (coarse) UE position.
    """
    g = segment_responses(target, config, geometry)
    out = [fpb_segment(row, config.phase_bits) for row in g]
    return BeamformerSolution(
        phase_indices=np.stack([_indices_of(psi, config.phase_bits) for psi, _, _ in out]),
        winning_rotation=np.array([w for _, w, _ in out]),
        segment_gain=np.array([v for _, _, v in out]),
        phase_bits=config.phase_bits,
        method="FPB",
    )


def cpp_solution(target, config, geometry=None) -> BeamformerSolution:
    g = segment_responses(target, config, geometry)
    idx = omega_indices(g, np.zeros(g.shape[0]), config.phase_bits)
    psi = np.exp(TWO_PI * 1j * idx / 2**config.phase_bits)
    return BeamformerSolution(
        phase_indices=idx,
        winning_rotation=np.zeros(g.shape[0]),
        segment_gain=np.abs(np.sum(psi * g, axis=1)) ** 2,
        phase_bits=config.phase_bits,
        method="CPP",
    )


def extend_balanced(solution: BeamformerSolution, config, window_length: int | None = None) -> ReflectionSchedule:
    """Rotate the optimal phases by one level per slot over the window.

    Slot ``t`` (0-based) uses ``exp(j*t*pi/2^(b-1)) * psi``, so every element
    cycles through all levels equally often and the window sums to zero.
    """
    levels = 2**solution.phase_bits
    window = config.num_slots // 2 if window_length is None else window_length
    if window < levels or window % levels:
        raise InvalidWindow(f"window of {window} slots is not a multiple of 2^b = {levels}")
    base = solution.full_indices
    idx = np.mod(base[:, None] + np.arange(window)[None, :], levels)
    return ReflectionSchedule(idx, solution.phase_bits, config.num_partitions)
