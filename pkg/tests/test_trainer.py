import math

import numpy as np
import pytest

from wsntopo.harness import generate_instance
from wsntopo.mdp import initial_state, valid_indices
from wsntopo.nn import EpisodeSample, PolicyValueNet
from wsntopo.seeding import derive_rng, derive_seed
from wsntopo.trainer import (
    NetworkChange,
    ReplayBuffer,
    TrainConfig,
    Trainer,
    apply_network_change,
    evaluate,
    read_metrics,
    run_episode,
    run_training,
)

SMALL = dict(iterations=3, episodes_per_iter=2, sims_per_state=8, minibatch=4, replay_episodes=4,
             eval_realizations=5, conv_blocks=1, filters=4, value_head_hidden=8, random_baseline_seeds=5)


def small_config(**kw):
    return TrainConfig(**{**SMALL, **kw})


def test_two_node_episode():
    spec = generate_instance(2, seed=0)
    cfg = small_config()
    net = PolicyValueNet(cfg.net_config(2))
    samples, reward, topo = run_episode(spec, net, cfg, np.random.default_rng(0))
    assert len(samples) == 1
    assert topo.parent == (-1, 0)
    assert reward == 1.0
    assert samples[0].target_policy.tolist() == [0, 0, 1, 0]


def test_episode_samples_are_consistent():
    spec = generate_instance(6, seed=1).with_active([1, 1, 1, 0, 1, 1])
    cfg = small_config(sims_per_state=16)
    net = PolicyValueNet(cfg.net_config(6))
    samples, reward, topo = run_episode(spec, net, cfg, np.random.default_rng(3))
    assert len(samples) == 4
    assert all(s.target_value == reward for s in samples)
    for s in samples:
        assert abs(s.target_policy.sum() - 1.0) < 1e-12
        assert not s.target_policy[~s.valid_mask].any()
    assert topo.parent[3] == -1


def test_episode_is_seeded():
    spec = generate_instance(6, seed=1)
    cfg = small_config(dirichlet_alpha=0.5)
    net = PolicyValueNet(cfg.net_config(6))
    a = run_episode(spec, net, cfg, np.random.default_rng(5))
    b = run_episode(spec, net, cfg, np.random.default_rng(5))
    assert a[2] == b[2] and a[1] == b[1]
    assert all(np.array_equal(x.target_policy, y.target_policy) for x, y in zip(a[0], b[0]))


def test_replay_buffer_fifo_and_round_trip(tmp_path):
    buf = ReplayBuffer(3)
    items = [EpisodeSample(np.full((1, 2, 2), i, float), np.array([0, 1.0, 0, 0]), float(i)) for i in range(5)]
    buf.extend(items)
    assert [s.target_value for s in buf] == [2.0, 3.0, 4.0]
    buf.save(tmp_path / "b.npz")
    other = ReplayBuffer(3)
    other.load(tmp_path / "b.npz")
    assert [s.target_value for s in other] == [2.0, 3.0, 4.0]
    assert np.array_equal(other[0].valid_mask, items[2].valid_mask)
    empty = ReplayBuffer(None)
    empty.save(tmp_path / "e.npz")
    empty.load(tmp_path / "e.npz")
    assert len(empty) == 0


def test_network_change_rules():
    spec = generate_instance(6, seed=0).padded(8)
    net = PolicyValueNet(small_config().net_config(8))
    weights = {k: v.copy() for k, v in net.named_parameters()}
    removed = apply_network_change(spec, net, NetworkChange("remove", (2, 4)))
    assert removed.active.tolist() == [1, 1, 0, 1, 0, 1, 0, 0]
    back = apply_network_change(removed, net, NetworkChange("add", (2, 4)))
    assert np.array_equal(valid_indices(initial_state(back)), valid_indices(initial_state(spec)))
    grown = apply_network_change(spec, net, NetworkChange("add", (), ((10.0, 20.0),), (0.5,)))
    assert grown.active[6] and grown.n_reserved == 1
    assert grown.positions[6].tolist() == [10.0, 20.0] and grown.initial_energy[6] == 0.5
    assert all(np.array_equal(v, weights[k]) for k, v in net.named_parameters())

    with pytest.raises(ValueError, match="gateway"):
        apply_network_change(spec, net, NetworkChange("remove", (0,)))
    with pytest.raises(ValueError, match="at least one"):
        apply_network_change(spec, net, NetworkChange("remove", (1, 2, 3, 4, 5)))
    with pytest.raises(ValueError, match="re-pad"):
        apply_network_change(spec, net, NetworkChange("add", (), ((0, 0),) * 3))
    with pytest.raises(ValueError):
        NetworkChange("swap", (1,))


def test_trainer_is_deterministic(tmp_path):
    spec = generate_instance(5, seed=2)
    Trainer(spec, small_config(), out_dir=tmp_path / "a").run()
    Trainer(spec, small_config(), out_dir=tmp_path / "b").run()
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    rows = read_metrics(tmp_path / "a" / "metrics.csv")
    assert [int(r["iteration"]) for r in rows] == [1, 2, 3]
    assert (tmp_path / "a" / "checkpoints" / "LATEST").read_text().strip() == "iter_0003"


def test_resume_matches_uninterrupted_run(tmp_path):
    spec = generate_instance(5, seed=3)
    cfg = small_config(iterations=4, dirichlet_alpha=0.3, dirichlet_iterations=2)
    full = Trainer(spec, cfg, [(3, NetworkChange("remove", (2,)))], out_dir=tmp_path / "full")
    full.run()
    resumed = Trainer.from_checkpoint(tmp_path / "full" / "checkpoints" / "iter_0002", out_dir=tmp_path / "resumed")
    assert resumed.iteration == 2
    resumed.run()
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "resumed" / "metrics.csv").read_bytes()
    for (_, a), (_, b) in zip(full.net.named_parameters(), resumed.net.named_parameters()):
        assert np.array_equal(a, b)


def test_change_script_is_applied_before_its_iteration():
    spec = generate_instance(7, seed=4)
    trainer = Trainer(spec, small_config(iterations=4), [(3, NetworkChange("remove", (5, 6)))])
    trainer.run(2)
    before = [k for k, _ in trainer.net.named_parameters()]
    reports = trainer.run()
    assert [r.active_sensors for r in reports] == [6, 6, 4, 4]
    assert [r.change for r in reports] == ["", "", "remove:5,6", ""]
    assert reports[2].mst_lifetime != reports[1].mst_lifetime or reports[2].star_lifetime != reports[1].star_lifetime
    for r in reports[2:]:
        assert r.greedy_topology[5] == r.greedy_topology[6] == -1
        assert r.best_topology[5] == r.best_topology[6] == -1
    assert len(trainer.buffer) == 2 * 4 * 2
    assert [k for k, _ in trainer.net.named_parameters()] == before


def test_evaluate_returns_valid_topologies_untrained():
    spec = generate_instance(8, seed=0)
    net = PolicyValueNet(small_config().net_config(8))
    res = evaluate(spec, net, 20, "sample", 0)
    assert len(res.topologies) == 20 and res.best == max(res.lifetimes)
    greedy = evaluate(spec, net, 20, "greedy")
    assert len(greedy.topologies) == 1
    with pytest.raises(ValueError):
        evaluate(spec, net, 1, "beam")


def test_config_validation_and_presets():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(episodes_per_iter=10, replay_episodes=5)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"iters": 3})
    strict = TrainConfig().strict_paper()
    assert strict.replay_episodes is None and not strict.tree_reuse and strict.bare_encoding
    paper = TrainConfig().paper_scale()
    assert (paper.episodes_per_iter, paper.sims_per_state, paper.minibatch, paper.learning_rate) == (10, 100, 16, 1e-6)


def test_strict_paper_mode_runs():
    spec = generate_instance(5, seed=0)
    cfg = small_config(iterations=2).strict_paper()
    trainer = Trainer(spec, cfg)
    trainer.run()
    assert trainer.net.config.input_channels == 1
    assert len(trainer.buffer) == 2 * 2 * 4  # nothing evicted


def test_capacity_padding():
    spec = generate_instance(5, seed=0)
    trainer = Trainer(spec, small_config(iterations=1, capacity=7))
    assert trainer.spec.node_count == 7 and trainer.spec.n_reserved == 2
    trainer.run()
    trainer.apply_change(NetworkChange("add", (), ((5.0, 5.0),)))
    assert trainer.horizon == 5


def test_run_training_returns_reports():
    net, reports = run_training(generate_instance(4, seed=0), small_config(iterations=2))
    assert len(reports) == 2 and isinstance(net, PolicyValueNet)
    assert all(math.isfinite(r.loss) for r in reports)


def test_seed_derivation_is_stable():
    assert derive_seed(0, "episode", 1, 2) == derive_seed(0, "episode", 1, 2)
    assert derive_seed(0, "episode", 1, 2) != derive_seed(0, "episode", 2, 1)
    assert derive_rng(5, "x").random() == derive_rng(5, "x").random()


def test_lifetime_trend_improves():
    spec = generate_instance(8, seed=0)
    cfg = TrainConfig(iterations=30, episodes_per_iter=4, sims_per_state=32, eval_realizations=50,
                      conv_blocks=2, filters=16, random_baseline_seeds=5, seed=0)
    reports = Trainer(spec, cfg).run()
    first = np.mean([r.mean_lifetime for r in reports[:5]])
    last = np.mean([r.mean_lifetime for r in reports[-5:]])
    assert last > first
