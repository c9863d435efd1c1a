import numpy as np
import pytest
from gradcheck import max_rel_error

from rpahbf.baselines import (exhaustive_pattern_select, fixed_pattern, greedy_pattern_select,
                              hbf_solve_batch, link_budget)
from rpahbf.channel import ConfigError, EmCsiTensor, SystemConfig, apply_pattern
from rpahbf.dataset import generate_samples
from rpahbf.nn import TransformerEncoderConfig
from rpahbf.precoding import average_power, sum_se, validate_analog
from rpahbf.prhbfnet import (PrHbfNet, PrHbfNetConfig, evaluate, load_model, loss, pilot_indices,
                             save_model, train)

TINY_ENC = TransformerEncoderConfig(depth=1, d_model=8, num_heads=2, d_ff=8)
TINY_NET = PrHbfNetConfig(prn=TINY_ENC, analog=TINY_ENC, digital=TINY_ENC, pilot_subcarriers=2)


def micro_system(**kw):
    base = dict(num_antennas=4, num_rf_chains=2, num_users=1, num_subcarriers=2, num_patterns=2,
                upa_rows=1, upa_cols=4)
    base.update(kw)
    return SystemConfig(**base)


def randomize(model, rng, scale=0.3):
    for p in model.parameters().values():
        p.data = rng.standard_normal(p.shape) * scale


def desk_batch(n=8, seed=0):
    cfg = SystemConfig()
    return cfg, generate_samples(cfg, n, seed)


# -- config -----------------------------------------------------------------------

def test_pilot_indices():
    np.testing.assert_array_equal(pilot_indices(8, 8), np.arange(8))
    np.testing.assert_array_equal(pilot_indices(60, 6), [0, 10, 20, 30, 40, 50])
    np.testing.assert_array_equal(pilot_indices(4, 8), np.arange(4))
    with pytest.raises(ConfigError):
        pilot_indices(10, 4)


def test_config_validation_and_round_trip():
    with pytest.raises(ConfigError):
        PrHbfNetConfig(batch_size=0)
    with pytest.raises(ConfigError):
        PrHbfNetConfig(training_mode="alternating")
    with pytest.raises(ConfigError):
        PrHbfNetConfig(temperature=0.0)
    cfg = PrHbfNetConfig(prn=TINY_ENC, epochs=3)
    assert PrHbfNetConfig.from_dict(cfg.to_dict()) == cfg


# -- pattern network ------------------------------------------------------------------

def test_single_mode_always_selected():
    cfg = SystemConfig(num_patterns=1)
    data = generate_samples(cfg, 4, 1)
    model = PrHbfNet(cfg, TINY_NET)
    randomize(model, np.random.default_rng(0))
    out = model.forward(data, *link_budget(cfg))
    assert np.all(out.c == 1)


def test_duplicate_antennas_give_identical_rows():
    cfg, data = desk_batch(2)
    data = data.copy()
    data[..., 1, :] = data[..., 0, :]
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8))
    model.prn_pos.data[1] = model.prn_pos.data[0]
    logits = model.pattern_logits(data / np.abs(data).max()).data
    np.testing.assert_allclose(logits[:, 1], logits[:, 0], rtol=1e-12, atol=1e-14)


def test_one_hot_matches_logit_argmax():
    cfg, data = desk_batch(6)
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8))
    out = model.forward(data, *link_budget(cfg))
    oh = out.one_hot.data
    assert set(np.unique(oh)) <= {0.0, 1.0}
    np.testing.assert_array_equal(oh.sum(-1), 1.0)
    np.testing.assert_array_equal(out.c, np.argmax(out.logits.data, axis=-1) + 1)


# -- residual identity and feasibility -----------------------------------------------------

def test_residual_identity_against_fixed_pattern():
    cfg, data = desk_batch(8, seed=3)
    sigma2, pt = link_budget(cfg)
    model = PrHbfNet(cfg)
    sols = model.solve(data, sigma2, pt, force_pattern=1)
    for i, sol in enumerate(sols):
        ref = fixed_pattern(EmCsiTensor(data[i]), cfg, 1)
        assert sol.achieved_se == pytest.approx(ref.achieved_se, rel=1e-9)
        np.testing.assert_allclose(np.exp(1j * sol.analog.phases), np.exp(1j * ref.analog.phases),
                                   atol=1e-9)
        np.testing.assert_allclose(sol.digital.blocks, ref.digital.blocks, rtol=1e-7, atol=1e-9)


def test_feasible_for_random_parameters():
    cfg, data = desk_batch(6, seed=4)
    sigma2, pt = link_budget(cfg)
    for seed in range(5):
        model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8), seed=seed, zero_residual=False)
        randomize(model, np.random.default_rng(seed), scale=1.0)
        for i, sol in enumerate(model.solve(data, sigma2, pt)):
            assert validate_analog(sol.analog, model.mapping)
            assert average_power(sol.analog, sol.digital) == pytest.approx(pt, rel=1e-9)
            assert sol.c.min() >= 1 and sol.c.max() <= cfg.num_patterns
            H = apply_pattern(EmCsiTensor(data[i]), sol.c)
            assert sum_se(H, sol.analog, sol.digital, sigma2) == pytest.approx(sol.achieved_se, rel=1e-9)


def test_hard_and_soft_gather_agree():
    cfg, data = desk_batch(4, seed=5)
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8), zero_residual=False)
    randomize(model, np.random.default_rng(5))
    soft = model.forward(data, *link_budget(cfg))
    hard = model.forward(data, *link_budget(cfg), hard_gather=True)
    np.testing.assert_array_equal(soft.c, hard.c)
    np.testing.assert_allclose(soft.se.data, hard.se.data, rtol=1e-12)
    np.testing.assert_allclose(soft.phases.data, hard.phases.data, rtol=1e-12, atol=1e-14)


def test_graph_se_matches_core_evaluation():
    cfg, data = desk_batch(4, seed=6)
    sigma2, pt = link_budget(cfg)
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8), zero_residual=False)
    randomize(model, np.random.default_rng(6))
    out = model.forward(data, sigma2, pt)
    blocks = out.digital.numpy()
    for i in range(4):
        H = apply_pattern(EmCsiTensor(data[i]), out.c[i])
        F = np.zeros((8, 4), complex)
        F[np.arange(8), model.mapping.rf_of_antenna] = np.exp(1j * out.phases.data[i])
        assert out.se.data[i] == pytest.approx(sum_se(H, F, blocks[i], sigma2), rel=1e-9)


# -- loss ------------------------------------------------------------------------------

def test_loss_single_and_duplicated_batch():
    cfg, data = desk_batch(2, seed=7)
    sigma2, pt = link_budget(cfg)
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8))
    one = loss(model, data[:1], sigma2, pt).item()
    sol = model.solve(data[:1], sigma2, pt)[0]
    assert one == pytest.approx(-sol.achieved_se, rel=1e-9)
    two = loss(model, np.concatenate([data[:1], data[:1]]), sigma2, pt).item()
    assert two == pytest.approx(one, rel=1e-12)


def test_loss_equals_negative_core_se():
    cfg, data = desk_batch(5, seed=8)
    sigma2, pt = link_budget(cfg)
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8))
    value = loss(model, data, sigma2, pt).item()
    ses = [s.achieved_se for s in model.solve(data, sigma2, pt)]
    assert value == pytest.approx(-np.mean(ses), rel=1e-9)


def test_loss_rejects_empty_batch():
    cfg = SystemConfig()
    with pytest.raises(ValueError):
        loss(PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8)), np.zeros((0, 8, 2, 8, 4), complex),
             *link_budget(cfg))


def test_loss_invariant_to_channel_scale_and_power_unit():
    cfg, data = desk_batch(3, seed=9)
    sigma2, pt = link_budget(cfg)
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8), zero_residual=False)
    randomize(model, np.random.default_rng(9))
    a = loss(model, data, sigma2, pt).item()
    # scaling channels by s and noise by s^2 leaves every SINR unchanged
    b = loss(model, 1e3 * data, sigma2 * 1e6, pt).item()
    assert b == pytest.approx(a, rel=1e-9)


# -- gradients ---------------------------------------------------------------------------

def test_end_to_end_finite_differences():
    cfg = micro_system()
    data = generate_samples(cfg, 2, 10)
    sigma2, pt = link_budget(cfg)
    model = PrHbfNet(cfg, TINY_NET, zero_residual=False)
    randomize(model, np.random.default_rng(10), scale=0.2)
    params = list(model.group("analog").values()) + list(model.group("digital").values())
    err = max_rel_error(lambda: loss(model, data, sigma2, pt), params, h=1e-5)
    assert err < 1e-4


def test_gradient_reaches_all_encoders():
    cfg, data = desk_batch(4, seed=11)
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8), zero_residual=False)
    randomize(model, np.random.default_rng(11))
    loss(model, data, *link_budget(cfg)).backward()
    for name in ("prn", "analog", "digital"):
        norm = sum(float(np.sum(p.grad ** 2)) for k, p in model.group(name).items() if "encoder" in k)
        assert norm > 0, name


def test_zero_heads_still_train_prn():
    cfg, data = desk_batch(4, seed=12)
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8))
    loss(model, data, *link_budget(cfg)).backward()
    assert sum(float(np.sum(p.grad ** 2)) for p in model.group("prn").values()) > 0
    assert np.any(model.analog_head.weight.grad != 0)
    assert np.any(model.digital_head.weight.grad != 0)


# -- training ------------------------------------------------------------------------------

def test_zero_epochs(tmp_path):
    cfg, data = desk_batch(4)
    net = TINY_NET.replace(pilot_subcarriers=8, epochs=0)
    res = train(data, data, cfg, net, out_dir=tmp_path)
    assert res.history.steps == [] and res.history.val_se == []
    init = PrHbfNet(cfg, net).state_dict()
    for k, v in res.best_state.items():
        np.testing.assert_array_equal(v, init[k])
    for name in ("best.rpac", "last.rpac", "history.csv"):
        assert (tmp_path / name).exists()
    assert (tmp_path / "history.csv").read_text() == "step,lr,loss,mean_se\n"


def test_training_is_deterministic(tmp_path):
    cfg, data = desk_batch(16, seed=13)
    net = TINY_NET.replace(pilot_subcarriers=8, epochs=2, batch_size=8)
    a = train(data, data[:4], cfg, net, out_dir=tmp_path / "a")
    b = train(data, data[:4], cfg, net, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
    assert a.history.val_se == b.history.val_se
    steps = [r["step"] for r in a.history.steps]
    assert steps == list(range(1, 5))


def test_single_user_training_beats_anchor():
    cfg = micro_system(num_subcarriers=4)
    data = generate_samples(cfg, 16, 14)
    sigma2, pt = link_budget(cfg)
    net = TINY_NET.replace(epochs=200, batch_size=16, peak_lr=3e-3, warmup_steps=20)
    res = train(data, None, cfg, net)
    trained = np.mean([s.achieved_se for s in res.model.solve(data, sigma2, pt)])
    start = PrHbfNet(cfg, net)
    baseline = np.mean([s.achieved_se for s in start.solve(data, sigma2, pt)])
    assert trained >= baseline


def test_stagewise_mode_freezes_groups():
    cfg, data = desk_batch(8, seed=15)
    net = TINY_NET.replace(pilot_subcarriers=8, epochs=2, batch_size=8, training_mode="stagewise")
    init = PrHbfNet(cfg, net).state_dict()
    res = train(data, None, cfg, net)
    changed = {k for k, v in res.last_state.items() if not np.array_equal(v, init[k])}
    assert any(k.startswith("prn_") for k in changed)
    assert any(k.startswith(("analog_", "digital_")) for k in changed)


def test_save_load_round_trip(tmp_path):
    cfg, data = desk_batch(3, seed=16)
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8), zero_residual=False)
    randomize(model, np.random.default_rng(16))
    save_model(tmp_path / "m.rpac", model)
    back = load_model(tmp_path / "m.rpac", cfg)
    sigma2, pt = link_budget(cfg)
    np.testing.assert_array_equal(model.forward(data, sigma2, pt).se.data,
                                  back.forward(data, sigma2, pt).se.data)
    with pytest.raises(ConfigError):
        load_model(tmp_path / "m.rpac", cfg.replace(num_users=3))


# -- evaluation ------------------------------------------------------------------------------

def test_single_mode_solvers_coincide():
    cfg = micro_system(num_patterns=1, num_users=2)
    data = generate_samples(cfg, 4, 17)
    f = evaluate(data, "fixed", cfg)
    g = evaluate(data, "greedy", cfg)
    x = evaluate(data, "exhaustive", cfg)
    np.testing.assert_allclose(f.per_sample, g.per_sample, rtol=1e-12)
    np.testing.assert_allclose(f.per_sample, x.per_sample, rtol=1e-12)


def test_single_sample_statistics():
    cfg, data = desk_batch(1, seed=18)
    r = evaluate(data, "fixed", cfg)
    assert r.n == 1 and r.mean == r.per_sample[0] and r.std == 0.0


def test_solver_ordering_across_samples():
    cfg = SystemConfig(num_antennas=4, num_rf_chains=2, upa_rows=2, upa_cols=2)
    data = generate_samples(cfg, 64, 19)
    f, g, x = (evaluate(data, s, cfg).mean for s in ("fixed", "greedy", "exhaustive"))
    assert x >= g >= f


def test_evaluate_workers_and_random_seeds():
    cfg, data = desk_batch(6, seed=20)
    a = evaluate(data, "random", cfg, seed=3, workers=1)
    b = evaluate(data, "random", cfg, seed=3, workers=2)
    np.testing.assert_array_equal(a.per_sample, b.per_sample)
    np.testing.assert_array_equal(a.patterns, b.patterns)
    assert len({tuple(p) for p in a.patterns}) > 1


def test_evaluate_network_matches_solve():
    cfg, data = desk_batch(5, seed=21)
    model = PrHbfNet(cfg, TINY_NET.replace(pilot_subcarriers=8))
    r = evaluate(data, "prhbfnet", cfg, model, batch=2)
    sols = model.solve(data, *link_budget(cfg))
    np.testing.assert_allclose(r.per_sample, [s.achieved_se for s in sols], rtol=1e-12)


def test_evaluate_rejects_mismatch():
    cfg, data = desk_batch(2)
    with pytest.raises(ConfigError):
        evaluate(data, "fixed", cfg.replace(num_users=1))
    with pytest.raises(ValueError):
        evaluate(data, "simulated-annealing", cfg)
    with pytest.raises(ConfigError):
        evaluate(data, "prhbfnet", cfg)


def test_greedy_and_exhaustive_batch_scoring_consistent():
    cfg = micro_system(num_users=2)
    data = generate_samples(cfg, 1, 22)
    e = EmCsiTensor(data[0])
    sigma2, pt = link_budget(cfg)
    g = greedy_pattern_select(e, None, cfg)
    x = exhaustive_pattern_select(e, cfg)
    _, _, se = hbf_solve_batch(np.stack([apply_pattern(e, g.c), apply_pattern(e, x.c)]),
                               PrHbfNet(cfg, TINY_NET).mapping, sigma2, pt)
    np.testing.assert_allclose(se, [g.achieved_se, x.achieved_se], rtol=1e-10)
