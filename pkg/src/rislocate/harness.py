"""End-to-end protocol runs, seeded Monte Carlo experiments and CSV output."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import beamforming as bf
from .channel import make_pilot, realize_channel
from .crlb import ObservationModel, crlb_from_fim, crlb_map, fim_from_jacobian, grid_positions
from .errors import InvalidInput, IoError, RisLocateError
from .localization import CoarseResult, FineResult, coarse_localize, localize
from .scenario import SystemConfig, build_geometry, sample_positions
from .signaling import MeasurementTensor, ReflectionSchedule, balanced_random_schedule, separate_los, simulate_reception

EXPERIMENTS = ("beamform-cdf", "beamform-timing", "crlb-map", "rmse-vs-snr", "loc-cdf")
PROBE_POINTS = ((10.0, 10.0), (10.0, 30.0), (30.0, 30.0), (30.0, 10.0), (20.0, 20.0))
DEFAULT_SNR_SWEEP = tuple(float(s) for s in range(-10, 31, 2))
SIGNIFICANT_DIGITS = 9
TIMING_REPEATS = 3


def trial_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for one trial, derived from the base seed and stream indices."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]))


@dataclass
class ProtocolTrace:
    ue_position: np.ndarray
    first_schedule: ReflectionSchedule
    second_schedule: ReflectionSchedule
    coarse: CoarseResult
    beamformer: bf.BeamformerSolution
    fine: FineResult
    wallclock_s: dict
    first_window_gain: float
    second_window_gain: float
    raw: MeasurementTensor | None = None

    @property
    def schedule(self) -> ReflectionSchedule:
        return self.first_schedule.concat(self.second_schedule)

    @property
    def coarse_error(self) -> float:
        return float(np.linalg.norm(self.coarse.estimate - self.ue_position))

    @property
    def fine_error(self) -> float:
        return float(np.linalg.norm(self.fine.final_estimate - self.ue_position))


def _mean_window_gain(schedule: ReflectionSchedule, g: np.ndarray) -> float:
    psi = schedule.values.reshape(g.shape[0], g.shape[1], schedule.num_slots)
    return float(np.mean(np.sum(np.abs(np.einsum("lkt,lk->tl", psi, g)) ** 2, axis=1)))


def run_protocol(ue_position, config: SystemConfig, rng: np.random.Generator, noiseless: bool = False) -> ProtocolTrace:
    """Balanced random window, coarse estimate, FPB design, designed window, fine estimate."""
    p = np.asarray(ue_position, dtype=float)
    clock = {}
    tic = time.perf_counter()
    geometry = build_geometry(config)
    pilot = make_pilot(config, geometry)
    channel = realize_channel(rng, config, geometry, p)
    half = config.num_slots // 2

    first = balanced_random_schedule(rng, config, half)
    raw_first = simulate_reception(channel, first, pilot, rng, config, noiseless)
    sep_first, _ = separate_los(raw_first, first)
    clock["signaling"] = time.perf_counter() - tic

    tic = time.perf_counter()
    first_model = ObservationModel(config, first, pilot, geometry)
    coarse = coarse_localize(sep_first, first, config, first_model)
    clock["coarse"] = time.perf_counter() - tic

    tic = time.perf_counter()
    solution = bf.fpb(coarse.estimate, config, geometry)
    second = bf.extend_balanced(solution, config)
    clock["beamforming"] = time.perf_counter() - tic

    tic = time.perf_counter()
    raw_second = simulate_reception(channel, second, pilot, rng, config, noiseless)
    schedule = first.concat(second)
    raw = MeasurementTensor(np.concatenate([raw_first.data, raw_second.data], axis=1))
    separated, _ = separate_los(raw, schedule)
    _, fine = localize(separated, schedule, config, first_window=half, pilot=pilot, coarse=coarse)
    clock["fine"] = time.perf_counter() - tic

    g_true = channel_g(channel)
    return ProtocolTrace(
        ue_position=p,
        first_schedule=first,
        second_schedule=second,
        coarse=coarse,
        beamformer=solution,
        fine=fine,
        wallclock_s=clock,
        first_window_gain=_mean_window_gain(first, g_true),
        second_window_gain=_mean_window_gain(second, g_true),
        raw=raw,
    )


def channel_g(channel) -> np.ndarray:
    from .channel import end_to_end_response

    return end_to_end_response(channel.path, channel.config.segment_size)


def trace_crlb(trace: ProtocolTrace, config: SystemConfig) -> float:
    """CRLB at the true position for the schedule the trace actually used."""
    model = ObservationModel(config, trace.schedule)
    _, jac = model.predict_with_jacobian(trace.ue_position)
    return crlb_from_fim(fim_from_jacobian(jac, config.noise_power_watts))


# -- experiments -------------------------------------------------------------------------


@dataclass
class ExperimentSpec:
    kind: str
    trials: int = 200
    snr_list_db: tuple = (8.0,)
    overrides: dict = field(default_factory=dict)
    out: str | None = None
    grid: tuple = (10, 10)
    phases: str = "fpb"
    sizes: tuple = (32, 64, 128, 256)
    record_timing: bool = True

    def __post_init__(self):
        if self.kind not in EXPERIMENTS:
            raise InvalidInput(f"unknown experiment {self.kind!r}; choose from {EXPERIMENTS}")
        if int(self.trials) < 1:
            raise InvalidInput("trials must be >= 1")
        if not all(math.isfinite(float(s)) for s in self.snr_list_db):
            raise InvalidInput("SNR values must be finite")


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append([row.get(c, "") for c in self.columns])

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]


def monte_carlo(spec: ExperimentSpec, config: SystemConfig) -> Table:
    """Run one experiment; every trial draws from its own (seed, index) stream."""
    config = config.replace(**spec.overrides) if spec.overrides else config
    runner = {
        "beamform-cdf": _beamform_cdf,
        "beamform-timing": _beamform_timing,
        "crlb-map": _crlb_map,
        "rmse-vs-snr": _rmse_vs_snr,
        "loc-cdf": _loc_cdf,
    }[spec.kind]
    table = runner(spec, config)
    if not spec.record_timing and "wallclock_us" in table.columns:
        # wall-clock is a property of the machine, not of the seed
        k = table.columns.index("wallclock_us")
        for row in table.rows:
            row[k] = ""
        table.summary = [r for r in table.summary if "slope" not in r[0]]
    return table


def _gain_db(value: float) -> float:
    return 10 * math.log10(value) if value > 0 else float("-inf")


def _beamform_cdf(spec, config) -> Table:
    table = Table(["method", "M", "L", "b", "trial", "gain_db", "wallclock_us"])
    geometry = build_geometry(config)
    for trial in range(spec.trials):
        rng = trial_rng(config.rng_seed, trial)
        p = sample_positions(rng, config, 1)[0]
        g = bf.segment_responses(p, config, geometry)
        for method in ("FPB", "CPP"):
            tic = time.perf_counter()
            sol = bf.fpb(p, config, geometry) if method == "FPB" else bf.cpp_solution(p, config, geometry)
            elapsed = time.perf_counter() - tic
            table.add(method=method, M=config.num_ris_elements, L=config.num_partitions, b=config.phase_bits,
                      trial=trial, gain_db=_gain_db(bf.gain(sol.phase_vectors, g)), wallclock_us=elapsed * 1e6)
    for method in ("FPB", "CPP"):
        vals = [r[5] for r in table.rows if r[0] == method]
        for q in (0.2, 0.5, 0.8):
            table.summary.append([f"{method}_gain_db_q{int(q * 100)}", float(np.quantile(vals, q))])
    return table


def _beamform_timing(spec, config) -> Table:
    """Single-segment solve time per instance, amortised over a batch of instances.

    Each batch is timed ``TIMING_REPEATS`` times and the fastest run is kept.
    """
    table = Table(["method", "M", "L", "b", "trial", "gain_db", "wallclock_us"])
    slopes = {}
    for method in ("FPB", "CPP"):
        xs, ys = [], []
        for size in spec.sizes:
            rng = trial_rng(config.rng_seed, size)
            g = np.exp(2j * np.pi * rng.random((spec.trials, size)))
            best = math.inf
            for _ in range(TIMING_REPEATS):
                tic = time.perf_counter()
                if method == "FPB":
                    gains = [bf.fpb_segment(row, config.phase_bits)[2] for row in g]
                else:
                    psi = bf.omega_beamformer(g, np.zeros(spec.trials), config.phase_bits)
                    gains = list(np.abs(np.sum(psi * g, axis=1)) ** 2)
                best = min(best, time.perf_counter() - tic)
            per = best / spec.trials * 1e6
            for trial, v in enumerate(gains):
                table.add(method=method, M=size, L=1, b=config.phase_bits, trial=trial,
                          gain_db=_gain_db(v), wallclock_us=per)
            xs.append(math.log(size))
            ys.append(math.log(per))
        slopes[method] = float(np.polyfit(xs, ys, 1)[0])
        table.summary.append([f"{method}_loglog_slope", slopes[method]])
    return table


def _crlb_map(spec, config) -> Table:
    table = Table(["x_m", "y_m", "crlb_m", "fim_11", "fim_12", "fim_22"])
    nx, ny = spec.grid
    positions = grid_positions(config, nx, ny)
    for snr in spec.snr_list_db:
        cfg = config.with_snr_db(snr)
        reports = crlb_map(positions, spec.phases, cfg, trial_rng(config.rng_seed, 0))
        for r in reports:
            table.add(x_m=r.position[0], y_m=r.position[1], crlb_m=r.crlb_m,
                      fim_11=r.fim[0, 0], fim_12=r.fim[0, 1], fim_22=r.fim[1, 1])
        table.summary.append([f"median_crlb_m_snr{snr:g}", float(np.median([r.crlb_m for r in reports]))])
    return table


def _loc_cdf(spec, config) -> Table:
    table = Table(["trial", "true_x", "true_y", "coarse_err_m", "fine_err_m", "objective", "converged",
                   "snr_db", "error"])
    for si, snr in enumerate(spec.snr_list_db):
        cfg = config.with_snr_db(snr)
        errs = []
        for trial in range(spec.trials):
            rng = trial_rng(config.rng_seed, si, trial)
            p = sample_positions(rng, cfg, 1)[0]
            try:
                tr = run_protocol(p, cfg, rng)
            except RisLocateError as exc:
                table.add(snr_db=snr, trial=trial, true_x=p[0], true_y=p[1], error=exc.code)
                continue
            errs.append(tr.fine_error)
            table.add(snr_db=snr, trial=trial, true_x=p[0], true_y=p[1], coarse_err_m=tr.coarse_error,
                      fine_err_m=tr.fine_error, objective=tr.fine.objective_values[tr.fine.best_index],
                      converged=int(tr.fine.converged[tr.fine.best_index]), error="")
        if errs:
            e = np.array(errs)
            for thr in (1e-3, 2e-3, 1e-2, 2e-2, 1e-1):
                table.summary.append([f"snr{snr:g}_frac_below_{thr:g}m", float(np.mean(e < thr))])
            for q in (0.5, 0.8, 0.9):
                table.summary.append([f"snr{snr:g}_fine_err_q{int(q * 100)}", float(np.quantile(e, q))])
    return table


def _rmse_vs_snr(spec, config) -> Table:
    table = Table(["snr_db", "x_m", "y_m", "trial", "fine_err_m", "crlb_m", "error"])
    for si, snr in enumerate(spec.snr_list_db):
        cfg = config.with_snr_db(snr)
        for pi, p in enumerate(PROBE_POINTS):
            sq_err, sq_bound = [], []
            for trial in range(spec.trials):
                rng = trial_rng(config.rng_seed, si, pi, trial)
                try:
                    tr = run_protocol(p, cfg, rng)
                    bound = trace_crlb(tr, cfg)
                except RisLocateError as exc:
                    table.add(snr_db=snr, x_m=p[0], y_m=p[1], trial=trial, error=exc.code)
                    continue
                sq_err.append(tr.fine_error**2)
                sq_bound.append(bound**2)
                table.add(snr_db=snr, x_m=p[0], y_m=p[1], trial=trial, fine_err_m=tr.fine_error,
                          crlb_m=bound, error="")
            if sq_err:
                rmse = math.sqrt(np.mean(sq_err))
                bound = math.sqrt(np.mean(sq_bound))
                tag = f"snr{snr:g}_p{p[0]:g}_{p[1]:g}"
                table.summary += [[f"{tag}_rmse_m", rmse], [f"{tag}_crlb_m", bound], [f"{tag}_ratio", rmse / bound]]
    return table


# -- output ---------------------------------------------------------------------------------


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.{SIGNIFICANT_DIGITS}g}"
    return str(value)


def emit_csv(table: Table, path) -> None:
    """UTF-8 CSV with a header row; floats at 9 significant digits.  Overwrites."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.columns)
            for row in table.rows:
                w.writerow([format_value(v) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def emit_summary(table: Table, path) -> None:
    emit_csv(Table(["metric", "value"], [list(r) for r in table.summary]), path)


def emit_two_column(xs, ys, path) -> None:
    """Whitespace-separated two-column data file (gnuplot style)."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in zip(xs, ys):
            fh.write(f"{format_value(float(x))} {format_value(float(y))}\n")


def read_csv(path) -> Table:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return Table(rows[0], rows[1:])
