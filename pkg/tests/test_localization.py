import numpy as np
import pytest

from rislocate import beamforming as bf
from rislocate.channel import factorized_observation, make_pilot
from rislocate.crlb import ObservationModel
from rislocate.errors import EmptyWindow
from rislocate.localization import (
    MleObjective,
    bfgs_minimize,
    coarse_aoa,
    coarse_candidates,
    coarse_toa,
    fine_refine,
    localize,
    mle_objective,
)
from rislocate.scenario import SPEED_OF_LIGHT, SystemConfig, build_geometry, path_geometry
from rislocate.signaling import MeasurementTensor, balanced_random_schedule, complex_noise, separate_los


def protocol_schedule(cfg, p_coarse, rng):
    first = balanced_random_schedule(rng, cfg, cfg.num_slots // 2)
    second = bf.extend_balanced(bf.fpb(p_coarse, cfg), cfg)
    return first.concat(second)


def noise_free(cfg, p, sched):
    geo = build_geometry(cfg)
    return factorized_observation(path_geometry(geo, p, cfg), sched, make_pilot(cfg, geo), cfg)


def test_coarse_toa_on_and_off_grid():
    cfg = SystemConfig()
    size = cfg.oversampling_factor * cfg.num_subcarriers
    n = np.arange(cfg.num_subcarriers)
    bin_width = 1 / (size * cfg.subcarrier_spacing_hz)
    for tau, tol in [(37 * bin_width, 1e-15), (37.3 * bin_width, bin_width / 2)]:
        data = np.exp(-2j * np.pi * n * cfg.subcarrier_spacing_hz * tau)[:, None, None] * np.ones((1, 2, 3))
        assert abs(coarse_toa(data, cfg) - tau) <= tol


def test_coarse_toa_picks_a_dominant_delay():
    cfg = SystemConfig()
    size = cfg.oversampling_factor * cfg.num_subcarriers
    n = np.arange(cfg.num_subcarriers)
    taus = np.array([40, 90]) / (size * cfg.subcarrier_spacing_hz)
    data = sum(np.exp(-2j * np.pi * n * cfg.subcarrier_spacing_hz * t) for t in taus)[:, None, None]
    assert np.min(np.abs(coarse_toa(data, cfg) - taus)) < 1e-15


def test_coarse_aoa_examples():
    cfg = SystemConfig()
    i = np.arange(cfg.num_rx_antennas)
    for f in (0.0, -0.25, 0.5):
        data = np.exp(-1j * np.pi * i * f)[None, None, :] * np.ones((4, 2, 1))
        assert coarse_aoa(data, cfg) == pytest.approx(f, abs=1e-12)
    noise = complex_noise(np.random.default_rng(0), (4, 2, cfg.num_rx_antennas), 1.0)
    assert -1 <= coarse_aoa(noise, cfg) < 1
    with pytest.raises(EmptyWindow):
        coarse_aoa(np.zeros((4, 0, 16)), cfg)


def test_back_projection_round_trip():
    cfg = SystemConfig()
    geo = build_geometry(cfg)
    p = np.array([20.0, 20.0])
    path = path_geometry(geo, p, cfg)
    for seg in range(cfg.num_partitions):
        cands, valid = coarse_candidates(path.toa_total[seg], path.aoa_ue[seg], geo, cfg)
        assert valid[seg]
        np.testing.assert_allclose(cands[seg], p, atol=1e-9)


def test_back_projection_special_cases():
    cfg = SystemConfig()
    geo = build_geometry(cfg)
    bs_dist = np.linalg.norm(geo.segment_centers - geo.bs_reference, axis=1)
    tau = (bs_dist[0] + 5.0) / SPEED_OF_LIGHT
    cands, _ = coarse_candidates(tau, 0.0, geo)
    np.testing.assert_allclose(cands[0], geo.segment_centers[0] - [0.0, 5.0], atol=1e-9)
    cands, valid = coarse_candidates(bs_dist[0] / SPEED_OF_LIGHT, 0.3, geo)
    np.testing.assert_allclose(cands[0], geo.segment_centers[0], atol=1e-6)
    # with a config the zero-range candidate is flagged and moved away from the RIS
    cands, valid = coarse_candidates(bs_dist[0] / SPEED_OF_LIGHT - 1e-9, 0.3, geo, cfg)
    assert not valid[0]
    assert np.linalg.norm(cands[0] - geo.segment_centers[0]) == pytest.approx(cfg.min_distance_hint)


def test_objective_noise_free_and_identifiable(rng):
    cfg = SystemConfig()
    p = np.array([20.0, 20.0])
    sched = protocol_schedule(cfg, p, rng)
    y = noise_free(cfg, p, sched)
    assert mle_objective(p, y, sched, cfg) <= 1e-18
    assert mle_objective(p, y, sched, cfg) <= mle_objective(p + [1.0, 0.0], y, sched, cfg)


def test_objective_noise_floor(rng):
    cfg = SystemConfig(num_subcarriers=32, num_rx_antennas=4)
    p = np.array([20.0, 20.0])
    sched = protocol_schedule(cfg, p, rng)
    clean = noise_free(cfg, p, sched)
    n, t, r = clean.shape
    values = []
    for _ in range(200):
        raw = MeasurementTensor(clean + complex_noise(rng, clean.shape, cfg.noise_power_watts))
        sep, _ = separate_los(raw, sched)
        values.append(mle_objective(p, sep, sched, cfg))
    expected = n * t * r * cfg.noise_power_watts * (1 - 1 / t)
    assert np.mean(values) == pytest.approx(expected, rel=0.05)


def test_fast_objective_matches_direct(rng):
    cfg = SystemConfig()
    p = np.array([20.0, 20.0])
    sched = protocol_schedule(cfg, p, rng)
    y = noise_free(cfg, p, sched) + complex_noise(rng, (128, 16, 16), 0.1)
    objective = MleObjective(ObservationModel(cfg, sched), y)
    model = ObservationModel(cfg, sched)
    for q in ([20.3, 19.6], [14.0, 27.0]):
        q = np.array(q)
        value, grad = objective.value_and_grad(q)
        ref_value, ref_grad = model.objective_and_gradient(q, y)
        assert value == pytest.approx(ref_value, rel=1e-9)
        np.testing.assert_allclose(grad, ref_grad, rtol=1e-6)
    assert objective.value(np.array([500.0, 0.0])) == np.inf


def test_profiled_objectives_bound_the_full_one(rng):
    cfg = SystemConfig()
    p = np.array([20.0, 20.0])
    sched = protocol_schedule(cfg, p, rng)
    objective = MleObjective(ObservationModel(cfg, sched), noise_free(cfg, p, sched))
    q = np.array([20.002, 19.999])
    full, common, seg = (objective.value(q, prof) for prof in ("none", "common", "segment"))
    assert seg <= common * (1 + 1e-9) <= full * (1 + 1e-9)


def test_bfgs_rosenbrock_monotone():
    def rosen(x):
        a, b = x
        value = (1 - a) ** 2 + 100 * (b - a * a) ** 2
        grad = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
        return value, grad

    res = bfgs_minimize(rosen, [-1.2, 1.0], max_iter=200)
    assert res.converged
    np.testing.assert_allclose(res.position, [1, 1], atol=1e-5)
    assert np.all(np.diff(res.history) <= 0)


def test_refine_from_truth_noise_free(rng):
    cfg = SystemConfig()
    p = np.array([20.0, 20.0])
    sched = protocol_schedule(cfg, p, rng)
    y = noise_free(cfg, p, sched)
    x, value, iters, ok = fine_refine(p, y, sched, cfg)
    assert ok and iters <= 2
    assert value <= 1e-18
    np.testing.assert_allclose(x, p, atol=1e-9)


def test_localize_noise_free(rng):
    cfg = SystemConfig()
    for p in (np.array([20.0, 20.0]), np.array([12.5, 27.0]), np.array([29.0, 11.0])):
        sched = protocol_schedule(cfg, p, rng)
        sep = MeasurementTensor(noise_free(cfg, p, sched), "separated")
        coarse, fine = localize(sep, sched, cfg)
        assert np.linalg.norm(fine.final_estimate - p) <= 1e-6


def test_direct_strategy_gets_close(rng):
    # plain BFGS on the full objective is fringe-limited but still lands near the truth
    cfg = SystemConfig()
    p = np.array([20.0, 20.0])
    sched = protocol_schedule(cfg, p, rng)
    sep = MeasurementTensor(noise_free(cfg, p, sched), "separated")
    _, fine = localize(sep, sched, cfg, strategy="direct")
    assert np.all(np.isfinite(fine.objective_values))
    assert np.linalg.norm(fine.final_estimate - p) < 5.0


def _coarse_errors(cfg, seed, count, noiseless=False):
    from rislocate.channel import realize_channel
    from rislocate.localization import coarse_localize
    from rislocate.scenario import sample_positions
    from rislocate.signaling import simulate_reception

    geo = build_geometry(cfg)
    pilot = make_pilot(cfg, geo)
    out = []
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        p = sample_positions(rng, cfg, 1)[0]
        channel = realize_channel(rng, cfg, geo, p)
        sched = balanced_random_schedule(rng, cfg, cfg.num_slots // 2)
        raw = simulate_reception(channel, sched, pilot, rng, cfg, noiseless)
        sep, _ = separate_los(raw, sched)
        coarse = coarse_localize(sep, sched, cfg, ObservationModel(cfg, sched, pilot, geo))
        out.append((p, coarse))
    return out


def test_coarse_error_saturates_with_snr():
    errs = {}
    for snr in (8.0, 24.0):
        cfg = SystemConfig().with_snr_db(snr)
        errs[snr] = np.array([np.linalg.norm(c.estimate - p) for p, c in _coarse_errors(cfg, 1, 150)])
    grid = np.geomspace(0.01, 20, 40)
    cdf = {s: (e[:, None] <= grid[None, :]).mean(axis=0) for s, e in errs.items()}
    assert np.max(np.abs(cdf[8.0] - cdf[24.0])) <= 0.05


def test_noise_free_candidate_coverage():
    cfg = SystemConfig()
    toa_bin = SPEED_OF_LIGHT / (cfg.oversampling_factor * cfg.num_subcarriers * cfg.subcarrier_spacing_hz)
    aoa_bin = 2.0 / (cfg.oversampling_factor * cfg.num_rx_antennas)
    geo = build_geometry(cfg)
    for p, coarse in _coarse_errors(cfg, 2, 20, noiseless=True):
        best = np.min(np.linalg.norm(coarse.candidates - p, axis=1))
        path = path_geometry(geo, p, cfg)
        rng_m = np.max(path.toa_ris_ue) * SPEED_OF_LIGHT
        arc = rng_m * aoa_bin / np.sqrt(1 - np.max(np.abs(path.aoa_ue)) ** 2)
        assert best <= toa_bin + arc


def test_selection_picks_minimum_objective(rng):
    cfg = SystemConfig()
    p = np.array([24.0, 16.0])
    sched = protocol_schedule(cfg, p, rng)
    y = noise_free(cfg, p, sched) + complex_noise(rng, (128, 16, 16), cfg.noise_power_watts)
    _, fine = localize(MeasurementTensor(y, "separated"), sched, cfg)
    assert fine.objective_values[fine.best_index] == np.min(fine.objective_values)
