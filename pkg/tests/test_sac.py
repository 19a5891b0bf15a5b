import math

import numpy as np
import pytest
import torch

from pfrlab.env import EnvConfig
from pfrlab.policy import ArchitectureSpec, NetRolloutPolicy, PolicyNet
from pfrlab.trainers.rollout import EnvPool, episode_seeds
from pfrlab.trainers.sac import (EpisodeReplay, ReplayUnderflow, SacConfig, SacLearner, actor_loss, joint_q,
                                 polyak_update, sac_update, soft_value)

SMALL = dict(pre_layers=(32,), recurrent_layers=(16,), post_layers=(32,))
T = 10


def make(seed=0):
    cfg = EnvConfig(episode_length=T)
    net = PolicyNet(ArchitectureSpec(cfg.schema().width, cfg.n_vnfs, q_heads=2, init_seed=seed, **SMALL))
    return cfg, net


def filled_replay(n=6, seed=0):
    cfg, net = make(seed)
    trajs = EnvPool(cfg, n).run(NetRolloutPolicy(net), episode_seeds(seed, 0, n), np.random.default_rng(seed))
    rep = EpisodeReplay(16, cfg.schema().width, cfg.n_vnfs, T)
    rep.add(trajs)
    return net, rep, trajs


def test_defaults():
    c = SacConfig()
    assert (c.epochs, c.learning_rate, c.reward_scale, c.target_period, c.tau, c.n_envs) == (25, 3e-4, 1, 1, 5e-3, 16)


def test_polyak_limit_and_rate():
    _, a = make(0)
    _, b = make(1)
    polyak_update(a, b, 1.0)
    assert torch.equal(a.flat_parameters(), b.flat_parameters())
    _, a = make(0)
    t0, o = a.flat_parameters(), b.flat_parameters()
    polyak_update(a, b, 5e-3)
    assert torch.allclose(a.flat_parameters(), 0.995 * t0 + 0.005 * o, atol=1e-7)


def test_target_converges_exponentially_under_frozen_online():
    _, target = make(0)
    _, online = make(1)
    gap0 = (target.flat_parameters() - online.flat_parameters()).double().norm()
    tau = 0.05
    for k in range(1, 41):
        polyak_update(target, online, tau)
        if k % 10 == 0:
            gap = (target.flat_parameters() - online.flat_parameters()).double().norm()
            assert gap / gap0 == pytest.approx((1 - tau) ** k, rel=1e-4)


def test_replay_underflow_and_reproducible_sampling():
    net, rep, _ = filled_replay(n=4)
    with pytest.raises(ReplayUnderflow):
        rep.sample(5, np.random.default_rng(0))
    a = rep.sample(3, np.random.default_rng(7))
    b = rep.sample(3, np.random.default_rng(7))
    assert np.array_equal(a["idx"], b["idx"]) and np.array_equal(a["obs"], b["obs"])


def test_replay_ring_overwrites_oldest():
    _, _, trajs = filled_replay(n=3)
    rep = EpisodeReplay(2, trajs[0].obs.shape[1], trajs[0].actions.shape[1], T)
    rep.add(trajs)
    assert len(rep) == 2 and rep.cursor == 1
    assert np.array_equal(rep.obs[0], trajs[2].obs.astype(np.float32))


def test_joint_q_and_soft_value_against_loops():
    g = torch.Generator().manual_seed(0)
    q = torch.randn(2, 3, 2, 4, 4, generator=g)
    acts = torch.randint(0, 4, (2, 3, 4), generator=g)
    out = joint_q(q, acts)
    for b in range(2):
        for t in range(3):
            for k in range(2):
                assert out[b, t, k].item() == pytest.approx(sum(q[b, t, k, v, acts[b, t, v]].item() for v in range(4)),
                                                             abs=1e-5)
    lp = torch.log_softmax(torch.randn(4, 4, generator=g), -1)
    qm = torch.randn(4, 4, generator=g)
    alpha = 0.3
    manual = sum(math.exp(lp[v, a]) * (qm[v, a] - alpha * lp[v, a]) for v in range(4) for a in range(4))
    assert soft_value(qm, lp, alpha).item() == pytest.approx(float(manual), rel=1e-5)


def test_actor_optimum_tends_to_uniform_as_temperature_grows():
    # the minimizer of sum_a pi(a) (alpha log pi(a) - Q(a)) is softmax(Q / alpha)
    q = torch.tensor([3.0, -1.0, 0.5, 2.0], dtype=torch.float64)
    for alpha, tol in ((1e2, 0.02), (1e4, 2e-4)):
        logits = torch.zeros(4, dtype=torch.float64, requires_grad=True)
        opt = torch.optim.SGD([logits], lr=0.5 / alpha)
        for _ in range(300):
            lp = torch.log_softmax(logits, -1)
            loss = (lp.exp() * (alpha * lp - q)).sum()
            opt.zero_grad()
            loss.backward()
            opt.step()
        p = torch.softmax(logits, -1)
        assert torch.allclose(p, torch.softmax(q / alpha, -1), atol=1e-3)
        assert torch.allclose(p, torch.full((4,), 0.25, dtype=torch.float64), atol=tol)


def test_learner_step_and_temperature_modes():
    net, rep, _ = filled_replay()
    learner = SacLearner(net, SacConfig(epochs=2, batch_episodes=4))
    a0 = learner.alpha
    report = sac_update(learner, rep, np.random.default_rng(0))
    assert all(np.isfinite(v) for v in report.values())
    assert learner.alpha != a0 and learner.updates == 2
    net2, rep2, _ = filled_replay()
    fixed = SacLearner(net2, SacConfig(epochs=2, batch_episodes=4, temperature_mode="fixed", initial_temperature=0.2))
    sac_update(fixed, rep2, np.random.default_rng(0))
    assert fixed.alpha == pytest.approx(0.2)


def test_actor_step_leaves_trunk_alone():
    net, rep, _ = filled_replay()
    learner = SacLearner(net, SacConfig(batch_episodes=4))
    data = rep.sample(4, np.random.default_rng(0))
    from pfrlab.trainers.sac import batch_to_tensors
    loss, _ = actor_loss(net, batch_to_tensors(data, torch.float32), 0.5)
    grads = torch.autograd.grad(loss, list(net.parameters()), allow_unused=True)
    named = dict(zip([n for n, _ in net.named_parameters()], grads))
    assert all(g is None for n, g in named.items() if not n.startswith("policy_head"))
    assert named["policy_head.weight"] is not None
    assert len(learner.actor_params) == 2


def test_learner_needs_q_heads():
    cfg = EnvConfig(episode_length=T)
    with pytest.raises(ValueError):
        SacLearner(PolicyNet(ArchitectureSpec(cfg.schema().width, 9, **SMALL)), SacConfig())


def test_config_validation():
    for bad in (dict(tau=0), dict(temperature_mode="warm"), dict(replay_capacity=2, batch_episodes=4)):
        with pytest.raises(ValueError):
            SacConfig(**bad).validate()
