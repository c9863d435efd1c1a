"""Acceptance suite: one PASS/FAIL line per criterion, at the required tolerances.

Run with ``pytest tests/test_acceptance.py -v``; the result lines are printed
even when output capture is on.
"""

import math
import time

import numpy as np
import pytest
from gradcheck import max_rel_error
from test_autodiff import BINARY, UNARY, param, weighted
from test_channel import scalar_emcsi, scalar_steering
from test_precoding import scalar_sinr

from rpahbf.autodiff import affine, concat, inv, layer_norm, softmax, stack
from rpahbf.baselines import (exhaustive_pattern_select, fixed_pattern, greedy_pattern_select,
                              link_budget)
from rpahbf.channel import (ArrayGeometry, EmCsiTensor, PatternCodebook, SystemConfig, apply_pattern,
                            build_emcsi, sample_emcsi, sample_path_set, steering_vector)
from rpahbf.dataset import generate_samples
from rpahbf.nn import TransformerEncoderConfig
from rpahbf.precoding import (AnalogPrecoder, DigitalPrecoderSet, SubarrayMapping, average_power,
                              sinr_matrix, sum_se, validate_analog)
from rpahbf.prhbfnet import PrHbfNet, PrHbfNetConfig, evaluate, loss, train

DESK = SystemConfig()
TRAIN_SEED, VAL_SEED = 11, 12


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def desk_run():
    train_set = generate_samples(DESK, 2048, TRAIN_SEED)
    val_set = generate_samples(DESK, 256, VAL_SEED)
    t0 = time.perf_counter()
    result = train(train_set, val_set, DESK, PrHbfNetConfig())
    return result, val_set, time.perf_counter() - t0


# -- 1 ----------------------------------------------------------------------------------

def test_feasibility_suite(report):
    t0 = time.perf_counter()
    tiny = TransformerEncoderConfig(depth=1, d_model=16, num_heads=2, d_ff=16)
    shapes = [dict(), dict(num_users=1), dict(num_users=4), dict(num_patterns=2),
              dict(num_patterns=3, num_rf_chains=2, num_users=2)]
    worst_mod = worst_pow = 0.0
    bad = 0
    checked = 0
    for k in range(200):
        cfg = DESK.replace(**shapes[k % len(shapes)])
        data = generate_samples(cfg, 4, 1000 + k)
        sigma2, pt = link_budget(cfg)
        net = PrHbfNetConfig(prn=tiny, analog=tiny, digital=tiny)
        model = PrHbfNet(cfg, net, seed=k, zero_residual=False)
        rng = np.random.default_rng(k)
        scale = rng.uniform(0.1, 2.0)
        for p in model.parameters().values():
            p.data = rng.standard_normal(p.shape) * scale
        for sol in model.solve(data, sigma2, pt):
            F = sol.analog.matrix
            support = model.mapping.support()
            bad += int(np.any(F[~support] != 0))
            worst_mod = max(worst_mod, float(np.max(np.abs(np.abs(F[support]) - 1))))
            worst_pow = max(worst_pow, abs(average_power(sol.analog, sol.digital) - pt) / pt)
            bad += int(not validate_analog(sol.analog, model.mapping))
            bad += int(sol.c.min() < 1 or sol.c.max() > cfg.num_patterns or sol.c.shape != (cfg.num_antennas,))
            checked += 1
    seconds = time.perf_counter() - t0
    ok = bad == 0 and worst_mod < 1e-9 and worst_pow < 1e-9 and seconds < 60
    report(1, ok, f"{checked} solutions from 200 parameterizations, support/pattern violations {bad}, "
                  f"max | |F|-1 | {worst_mod:.1e}, max power rel. error {worst_pow:.1e}, {seconds:.1f}s")


# -- 2 ----------------------------------------------------------------------------------

def scalar_se(H, F, blocks, sigma2):
    Nc, K = H.shape[0], H.shape[1]
    total = 0.0
    for g in range(Nc):
        for u in range(K):
            total += math.log2(1 + scalar_sinr(H[g], F, blocks[g], sigma2, u))
    return total / Nc


def test_numerical_oracle_equivalence(report):
    worst = {"steering": 0.0, "channel": 0.0, "sinr": 0.0, "se": 0.0}
    for k in range(50):
        rng = np.random.default_rng(2000 + k)
        Nt = int(rng.choice([2, 4]))
        n_rf = int(rng.choice([r for r in (1, 2) if Nt % r == 0]))
        K = int(rng.integers(1, n_rf + 1))
        M = int(rng.integers(1, 3))
        Nc = int(rng.integers(1, 5))
        cfg = SystemConfig(num_antennas=Nt, num_rf_chains=n_rf, num_users=K, num_subcarriers=Nc,
                           num_patterns=M, upa_rows=1, upa_cols=Nt, num_nlos_paths=2)
        geom = ArrayGeometry.from_config(cfg)
        cb = PatternCodebook.default(M)

        c = rng.integers(1, M + 1, Nt)
        th, ph = rng.uniform(0, np.pi), rng.uniform(-np.pi, np.pi)
        a = steering_vector(geom, cb, c, th, ph, cfg.carrier_freq_hz)
        ref = np.array(scalar_steering(geom.positions, cb, c, th, ph, cfg.carrier_freq_hz))
        worst["steering"] = max(worst["steering"], np.max(np.abs(a - ref)) / np.max(np.abs(ref)))

        paths = [sample_path_set(cfg, rng, u) for u in range(K)]
        e = build_emcsi(cfg, geom, cb, paths)
        ref = scalar_emcsi(cfg, geom.positions, cb, paths)
        worst["channel"] = max(worst["channel"], np.max(np.abs(e.data - ref)) / np.max(np.abs(ref)))

        H = apply_pattern(e, c) / np.abs(e.data).max()
        mapping = SubarrayMapping(Nt, n_rf)
        analog = AnalogPrecoder(rng.uniform(-np.pi, np.pi, Nt), mapping)
        blocks = rng.standard_normal((Nc, n_rf, K)) + 1j * rng.standard_normal((Nc, n_rf, K))
        sigma2 = float(rng.uniform(0.05, 1.0))
        gamma = sinr_matrix(H, analog, blocks, sigma2)
        for g in range(Nc):
            for u in range(K):
                ref = scalar_sinr(H[g], analog.matrix, blocks[g], sigma2, u)
                worst["sinr"] = max(worst["sinr"], abs(gamma[g, u] - ref) / ref)
        se = sum_se(H, analog, DigitalPrecoderSet(blocks), sigma2)
        ref = scalar_se(H, analog.matrix, blocks, sigma2)
        worst["se"] = max(worst["se"], abs(se - ref) / ref)
    ok = all(v < 1e-10 for v in worst.values())
    report(2, ok, "50 micro instances, max rel. error "
                  + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# -- 3 ----------------------------------------------------------------------------------

def op_checks():
    rng = np.random.default_rng(3000)
    out = []
    for name, fn in UNARY.items():
        a = param(rng, 2, 3, 4)
        out.append((name, max_rel_error(lambda: weighted(fn(a)), [a])))
    for name, fn in BINARY.items():
        a, b = param(rng, 2, 3, 4), param(rng, 3, 1)
        out.append((name, max_rel_error(lambda: weighted(fn(a, b)), [a, b])))
    a, b = param(rng, 2, 3, 4), param(rng, 2, 4, 3)
    out.append(("matmul", max_rel_error(lambda: weighted(a @ b), [a, b])))
    x, W, bias = param(rng, 2, 3, 4), param(rng, 4, 5), param(rng, 5)
    out.append(("affine", max_rel_error(lambda: weighted(affine(x, W, bias)), [x, W, bias])))
    g, beta = param(rng, 4), param(rng, 4)
    out.append(("layer_norm_affine", max_rel_error(lambda: weighted(layer_norm(x, g, beta)), [x, g, beta])))
    out.append(("softmax_last", max_rel_error(lambda: weighted(softmax(x, -1)), [x])))
    c, d = param(rng, 2, 3), param(rng, 2, 3)
    out.append(("concat", max_rel_error(lambda: weighted(concat([c, d], 1)), [c, d])))
    out.append(("stack", max_rel_error(lambda: weighted(stack([c, d], 0)), [c, d])))
    m = param(rng, 2, 3, 3)
    m.data += 3 * np.eye(3)
    out.append(("inv", max_rel_error(lambda: weighted(inv(m)), [m])))
    return out


def test_gradient_correctness(report):
    t0 = time.perf_counter()
    ops = op_checks()
    worst_op = max(ops, key=lambda t: t[1])
    cfg = SystemConfig(num_antennas=4, num_rf_chains=2, num_users=1, num_subcarriers=2, num_patterns=2,
                       upa_rows=1, upa_cols=4)
    enc = TransformerEncoderConfig(depth=1, d_model=8, num_heads=2, d_ff=8)
    net = PrHbfNetConfig(prn=enc, analog=enc, digital=enc, pilot_subcarriers=2)
    e2e = 0.0
    for seed in range(3):
        data = generate_samples(cfg, 2, 3100 + seed)
        sigma2, pt = link_budget(cfg)
        model = PrHbfNet(cfg, net, seed=seed, zero_residual=False)
        rng = np.random.default_rng(seed)
        for p in model.parameters().values():
            p.data = rng.standard_normal(p.shape) * 0.2
        params = list(model.group("analog").values()) + list(model.group("digital").values())
        e2e = max(e2e, max_rel_error(lambda: loss(model, data, sigma2, pt), params))
    seconds = time.perf_counter() - t0
    ok = worst_op[1] < 1e-5 and e2e < 1e-4 and seconds < 300
    report(3, ok, f"{len(ops)} ops, worst {worst_op[0]} {worst_op[1]:.1e} (< 1e-5); "
                  f"end-to-end micro pipeline {e2e:.1e} (< 1e-4); {seconds:.1f}s")


# -- 4 ----------------------------------------------------------------------------------

def test_oracle_sandwich(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4000)
    fixed, greedy, exhaustive = [], [], []
    for k in range(50):
        Nt = int(rng.choice([4, 6]))
        rows, cols = (2, 2) if Nt == 4 else (2, 3)
        cfg = DESK.replace(num_antennas=Nt, num_rf_chains=2, upa_rows=rows, upa_cols=cols,
                           num_patterns=int(rng.integers(2, 5)), num_users=int(rng.integers(1, 3)))
        e = sample_emcsi(cfg, np.random.default_rng(4100 + k))
        fixed.append(fixed_pattern(e, cfg).achieved_se)
        greedy.append(greedy_pattern_select(e, None, cfg).achieved_se)
        exhaustive.append(exhaustive_pattern_select(e, cfg).achieved_se)
    f, g, x = map(np.array, (fixed, greedy, exhaustive))
    strict = float(np.mean(x > f + 1e-9))
    seconds = time.perf_counter() - t0
    ok = x.mean() >= g.mean() >= f.mean() and strict >= 0.9 and seconds < 600
    report(4, ok, f"mean SE exhaustive {x.mean():.4f} >= greedy {g.mean():.4f} >= fixed {f.mean():.4f}; "
                  f"exhaustive > fixed on {strict:.0%} of 50; {seconds:.1f}s")


# -- 5 ----------------------------------------------------------------------------------

def test_scaled_headline(report, desk_run):
    result, val_set, train_seconds = desk_run
    net = evaluate(val_set, "prhbfnet", DESK, result.model).mean
    greedy = evaluate(val_set, "greedy", DESK).mean
    fixed = evaluate(val_set, "fixed", DESK).mean
    epochs = PrHbfNetConfig().epochs
    ok = net >= 0.95 * greedy and net >= 1.02 * fixed and epochs <= 50 and train_seconds < 1800
    report(5, ok, f"network {net:.4f} = {net / greedy:.3f} x greedy {greedy:.4f}, "
                  f"{net / fixed:.3f} x fixed {fixed:.4f}; {epochs} epochs, {train_seconds:.0f}s training")


# -- 6 ----------------------------------------------------------------------------------

def test_trend_reproduction(report, desk_run):
    model = desk_run[0].model
    data = generate_samples(DESK, 64, 6000)
    pt_levels = [20.0, 30.0, 40.0, 50.0]
    curves = {}
    for solver in ("fixed", "random", "greedy", "prhbfnet"):
        curves[solver] = [evaluate(data, solver, DESK, model if solver == "prhbfnet" else None,
                                   pt=10 ** ((p - 30) / 10)).mean for p in pt_levels]
    increasing = all(all(b > a for a, b in zip(c, c[1:])) for c in curves.values())
    gaps = []
    for k in (1, 2, 4):
        cfg = DESK.replace(num_users=k)
        pts = generate_samples(cfg, 64, 6100 + k)
        gaps.append(evaluate(pts, "greedy", cfg).mean - evaluate(pts, "fixed", cfg).mean)
    widening = all(b >= a for a, b in zip(gaps, gaps[1:]))
    detail = "; ".join(f"{s} " + "/".join(f"{v:.2f}" for v in c) for s, c in curves.items())
    report(6, increasing and widening,
           f"Pt 20/30/40/50 dBm: {detail}; greedy-fixed gap K=1/2/4: "
           + "/".join(f"{g:.3f}" for g in gaps))


# -- 7 ----------------------------------------------------------------------------------

def test_complexity_direction(report, desk_run):
    model = desk_run[0].model
    data = generate_samples(DESK, 256, 7000)
    sigma2, pt = link_budget(DESK)
    model.solve(data[:8], sigma2, pt)
    t0 = time.perf_counter()
    model.solve(data, sigma2, pt)
    net_per = (time.perf_counter() - t0) / len(data)
    t0 = time.perf_counter()
    for i in range(64):
        greedy_pattern_select(EmCsiTensor(data[i]), None, DESK)
    greedy_per = (time.perf_counter() - t0) / 64
    ratio = greedy_per / net_per
    report(7, ratio >= 10, f"network {net_per * 1e3:.3f} ms/sample, greedy {greedy_per * 1e3:.3f} ms/sample, "
                           f"speed-up {ratio:.1f}x (>= 10x)")


# -- 8 ----------------------------------------------------------------------------------

def test_residual_identity(report):
    data = generate_samples(DESK, 20, 8000)
    sigma2, pt = link_budget(DESK)
    sols = PrHbfNet(DESK).solve(data, sigma2, pt, force_pattern=1)
    worst = max(abs(s.achieved_se - fixed_pattern(EmCsiTensor(d), DESK, 1).achieved_se)
                / fixed_pattern(EmCsiTensor(d), DESK, 1).achieved_se for s, d in zip(sols, data))
    report(8, worst < 1e-9, f"20 samples, max rel. SE difference {worst:.1e} (< 1e-9)")
