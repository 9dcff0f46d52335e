"""Balanced RIS reflection schedules, pilot reception and LoS separation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidInput, InvalidWindow, UnbalancedSchedule

_BALANCE_TOL = 1e-12

RAW = "raw"
SEPARATED = "separated"
MODEL = "model"


@dataclass(frozen=True)
class ReflectionSchedule:
    """Discrete RIS phases as integer indices into ``exp(j*2*pi*s/2^b)``.

    Parameters
    ----------
    phase_indices : ndarray of int, shape (M, T)
        Row ``m`` is the phase sequence of RIS element ``m``.
    phase_bits : int
        Resolution ``b``; entries lie in ``[0, 2^b)``.
    num_partitions : int
        Number of equal contiguous segments the rows split into.
    """

    phase_indices: np.ndarray
    phase_bits: int
    num_partitions: int = 1

    def __post_init__(self):
        idx = np.asarray(self.phase_indices)
        if idx.ndim != 2:
            raise DimensionMismatch("phase_indices must be a 2-D (M, T) array")
        if not np.issubdtype(idx.dtype, np.integer):
            if not np.all(idx == np.round(idx)):
                raise InvalidInput("phase_indices must be integers")
        idx = idx.astype(np.int64)
        levels = 2**self.phase_bits
        if idx.size and (idx.min() < 0 or idx.max() >= levels):
            raise InvalidInput(f"phase indices must lie in [0, {levels})")
        if idx.shape[0] % self.num_partitions:
            raise DimensionMismatch("number of RIS elements is not divisible by num_partitions")
        idx.setflags(write=False)
        object.__setattr__(self, "phase_indices", idx)

    @property
    def num_elements(self) -> int:
        return self.phase_indices.shape[0]

    @property
    def num_slots(self) -> int:
        return self.phase_indices.shape[1]

    @property
    def levels(self) -> int:
        return 2**self.phase_bits

    @property
    def values(self) -> np.ndarray:
        """Complex reflection coefficients, shape (M, T)."""
        return np.exp(2j * np.pi * self.phase_indices / self.levels)

    def segment_of(self, element: int) -> int:
        return element // (self.num_elements // self.num_partitions)

    def slots(self, start: int, stop: int) -> "ReflectionSchedule":
        return ReflectionSchedule(self.phase_indices[:, start:stop], self.phase_bits, self.num_partitions)

    def concat(self, other: "ReflectionSchedule") -> "ReflectionSchedule":
        if other.phase_bits != self.phase_bits or other.num_elements != self.num_elements:
            raise DimensionMismatch("schedules differ in resolution or element count")
        return ReflectionSchedule(
            np.hstack([self.phase_indices, other.phase_indices]), self.phase_bits, self.num_partitions
        )

    def is_balanced(self, windows=None) -> bool:
        """Check that every element's coefficients sum to zero over each window.

        ``windows`` is a list of ``(start, stop)`` slot ranges; by default the
        whole schedule.  Antipodal counting is exact in integers; otherwise the
        complex sum is compared against a 1e-12 tolerance.
        """
        if windows is None:
            windows = [(0, self.num_slots)]
        for start, stop in windows:
            block = self.phase_indices[:, start:stop]
            if block.shape[1] == 0:
                return False
            if not _balanced_exact(block, self.levels):
                sums = np.exp(2j * np.pi * block / self.levels).sum(axis=1)
                if np.max(np.abs(sums)) > _BALANCE_TOL:
                    return False
        return True

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(self.phase_indices.tolist())

    @classmethod
    def from_csv(cls, path, phase_bits: int, num_partitions: int = 1) -> "ReflectionSchedule":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [[int(v) for v in row] for row in csv.reader(fh) if row]
        return cls(np.array(rows, dtype=np.int64), phase_bits, num_partitions)


def _balanced_exact(block: np.ndarray, levels: int) -> bool:
    # each index s cancels against s + levels/2 when counts match
    half = levels // 2
    counts = np.stack([(block == s).sum(axis=1) for s in range(levels)], axis=1)
    return bool(np.all(counts[:, :half] == counts[:, half:]))


@dataclass(frozen=True)
class MeasurementTensor:
    """Complex observations indexed (subcarrier n, slot t, receive antenna i)."""

    data: np.ndarray
    kind: str = RAW

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=complex)
        if arr.ndim != 3:
            raise DimensionMismatch("measurement tensor must be 3-D (N, T, N_R)")
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("measurement tensor has non-finite entries")
        if self.kind not in (RAW, SEPARATED, MODEL):
            raise InvalidInput(f"unknown tensor kind {self.kind!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def slots(self, start: int, stop: int) -> "MeasurementTensor":
        return MeasurementTensor(self.data[:, start:stop, :], self.kind)

    def dump_csv(self, path) -> None:
        """Write rows ``n, t, i, re, im`` in n-major, then t, then i order."""
        n, t, i = np.indices(self.shape)
        flat = self.data.ravel()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "t", "i", "re", "im"])
            for row in zip(n.ravel(), t.ravel(), i.ravel(), flat.real, flat.imag):
                w.writerow([row[0], row[1], row[2], repr(float(row[3])), repr(float(row[4]))])

    def dump_binary(self, path) -> None:
        """Little-endian complex128, row-major (n, t, i), no header."""
        Path(path).write_bytes(self.data.astype("<c16").tobytes(order="C"))

    @classmethod
    def load_binary(cls, path, shape, kind: str = RAW) -> "MeasurementTensor":
        arr = np.frombuffer(Path(path).read_bytes(), dtype="<c16").reshape(shape)
        return cls(arr.copy(), kind)


def balanced_random_schedule(rng: np.random.Generator, config, window_length: int) -> ReflectionSchedule:
    """Random schedule whose slots come in antipodal pairs ``(s, s + 2^(b-1))``.

    The first slot of a pair is uniform over all levels, so either slot can
    carry any phase; the per-element sum over the window is exactly zero.
    """
    if window_length < 2 or window_length % 2:
        raise InvalidWindow(f"window_length must be even and positive, got {window_length}")
    levels = 2**config.phase_bits
    m = config.num_ris_elements
    pairs = window_length // 2
    first = rng.integers(0, levels, size=(m, pairs))
    second = (first + levels // 2) % levels
    idx = np.stack([first, second], axis=2).reshape(m, window_length)
    return ReflectionSchedule(idx, config.phase_bits, config.num_partitions)


def complex_noise(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with ``E|w|^2 = variance``."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_reception(channel, schedule: ReflectionSchedule, pilot, rng: np.random.Generator, config,
                       noiseless: bool = False) -> MeasurementTensor:
    """Received pilots for every subcarrier and slot of ``schedule``.

    ``channel`` is a :class:`~rislocate.channel.ChannelRealization`.  With
    ``noiseless`` the receiver noise is omitted and ``rng`` is not consumed.
    """
    pilot = np.asarray(pilot, dtype=complex)
    if pilot.shape != (config.num_tx_antennas,):
        raise DimensionMismatch("pilot length must equal num_tx_antennas")
    ris = channel.ris_response(schedule, pilot)
    nlos = channel.nlos_response(pilot)
    y = ris + nlos[:, None, :]
    if not noiseless:
        y = y + complex_noise(rng, y.shape, config.noise_power_watts)
    return MeasurementTensor(y, RAW)


def separate_los(raw: MeasurementTensor, schedule: ReflectionSchedule | None = None):
    """Remove the per-(n, i) time mean.

    Returns the centred tensor and the mean itself, which estimates the
    time-invariant non-RIS component.  If ``schedule`` is given it must be
    balanced over its full length.
    """
    if schedule is not None:
        if schedule.num_slots != raw.shape[1]:
            raise DimensionMismatch("schedule and tensor disagree on the number of slots")
        if not schedule.is_balanced():
            raise UnbalancedSchedule("schedule does not sum to zero over the window")
    mean = raw.data.mean(axis=1)
    centred = raw.data - mean[:, None, :]
    return MeasurementTensor(centred, SEPARATED), mean
