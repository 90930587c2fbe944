import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfcombat import arena as ar
from lfcombat.errors import ConfigError
from lfcombat.flightdyn import DEFAULT_DYNAMICS as DYN, UavState, step_dynamics, trim_throttle, wrap_angle
from lfcombat.hrl import (
    DesiredAttitude, HierarchicalTeam, HierarchyConfig, ModelConfig, SubPolicyId, action_to_attitude, assign_roles,
    init_policy, low_level_control, network_dims, select_subpolicy, selector_input, subpolicy_act,
)
from lfcombat.neuralcore import Mlp, init_mlp

SMALL = ModelConfig(hidden=(16, 16))


def level(x=0.0, y=0.0, z=7000.0, v=230.0, psi=0.0):
    return UavState.from_attitude(x, y, z, v, psi=psi)


def new_arena(seed=0, team_size=6):
    cfg = ar.ArenaConfig(team_size=team_size)
    return ar.reset(cfg, seed)


def drive(arena, teams, physics_steps, hook=None):
    for _ in range(physics_steps):
        if arena.done:
            break
        controls = {}
        for t in teams:
            controls.update(t.act(arena))
            if hook:
                hook(t, arena, controls)
        arena, *_ = ar.step(arena, controls)
    return arena


def test_subpolicy_enum_has_three_members():
    assert [s.name for s in SubPolicyId] == ["APPROACH", "OFFENSIVE", "DEFENSIVE"]


# ---------------------------------------------------------------- roles

def test_six_uavs_form_two_groups():
    ra = assign_roles(range(6))
    assert sorted(ra.leader.values()) == [0, 3]
    assert [ra.role[u] for u in range(6)] == ["leader", "follower", "follower"] * 2


def test_three_uavs_one_group():
    ra = assign_roles([2, 0, 1])
    assert ra.leader == {0: 0}


def test_indivisible_team_rejected():
    with pytest.raises(ConfigError):
        assign_roles(range(4))


def test_leader_promotion_waits_for_next_selector_epoch():
    arena = new_arena(3)
    params = init_policy("lfmappo", 6, SMALL, np.random.default_rng(0))
    blue = HierarchicalTeam(params, "blue", rng=np.random.default_rng(1))
    red = HierarchicalTeam(params, "red", rng=np.random.default_rng(2))
    h = HierarchyConfig()
    epoch_phys = h.selector_epoch * h.agent_decimation
    arena = drive(arena, [blue, red], epoch_phys + 3 * h.agent_decimation)
    arena.agents[0].state.alive = False
    # still mid-epoch: no promotion yet
    arena = drive(arena, [blue, red], 2 * epoch_phys - arena.steps)
    assert arena.agents[1].role == "follower" and arena.roles["blue"].leader[0] == 0
    assert arena.steps == 2 * epoch_phys
    arena = drive(arena, [blue, red], 1)
    assert arena.agents[1].role == "leader" and arena.agents[2].role == "follower"
    assert arena.roles["blue"].leader_of(2) == 1
    d = {x.uid: x for x in blue.last_decisions}
    assert d[1].role == "leader" and d[2].leader_action == arena.agents[1].subpolicy


# ---------------------------------------------------------------- selector

def test_forced_logits_always_pick_approach():
    net = Mlp([np.zeros((5, 3))], [np.array([np.inf, -np.inf, -np.inf])])
    rng = np.random.default_rng(0)
    assert all(select_subpolicy(net, np.ones(5), rng)[0] is SubPolicyId.APPROACH for _ in range(200))


def test_follower_macro_observation_is_leader_plus_onehot():
    arena = new_arena()
    lead, fol = selector_input(arena, 0, "lfmappo"), selector_input(arena, 1, "lfmappo")
    assert len(fol) == len(lead) + 3
    dims = network_dims("lfmappo", 6)
    assert dims["selector_follower"][0] == dims["selector_leader"][0] + 3
    # the baselines give followers the leader-sized observation
    assert len(selector_input(arena, 1, "mappo")) == len(lead)


def test_selection_sequence_is_deterministic_under_seed():
    def run():
        net = init_mlp([8, 16, 3], np.random.default_rng(4), out_gain=1.0)
        rng = np.random.default_rng(9)
        obs = np.random.default_rng(5).standard_normal((100, 8))
        return [int(select_subpolicy(net, o, rng)[0]) for o in obs]
    a = run()
    assert a == run() and len(set(a)) > 1


# ---------------------------------------------------------------- middle level

def test_zero_mean_action_holds_current_attitude():
    s = UavState.from_attitude(0, 0, 7000, 240, phi=0.2, theta=0.1, psi=-1.0)
    actor = Mlp([np.zeros((4, 3))], [np.zeros(3)], log_std=np.zeros(3))
    des, raw, _ = subpolicy_act(actor, np.ones(4), s, deterministic=True)
    assert np.all(raw == 0)
    assert des == DesiredAttitude(s.psi, s.theta, trim_throttle(s.v))


def test_commands_stay_in_bounds_over_random_observations():
    rng = np.random.default_rng(0)
    actor = init_mlp([6, 16, 3], rng, out_gain=5.0, log_std=1.0)
    for role in ("leader", "follower"):
        for _ in range(5000):
            s = UavState.from_attitude(0, 0, 7000, rng.uniform(100, 400), theta=rng.uniform(-1, 1),
                                       psi=rng.uniform(-math.pi, math.pi))
            des, _, _ = subpolicy_act(actor, rng.standard_normal(6) * 10, s, rng, role=role)
            assert -math.pi <= des.heading_cmd <= math.pi
            assert abs(des.pitch_cmd) <= DYN.max_pitch
            assert 0.0 <= des.throttle_cmd <= 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(-math.pi, math.pi), st.floats(-1.0, 1.0))
def test_action_mapping_bounds(a, psi, theta):
    s = UavState.from_attitude(0, 0, 7000, 230, theta=theta, psi=psi)
    des = action_to_attitude(s, np.array(a), "follower")
    assert -math.pi <= des.heading_cmd <= math.pi and abs(des.pitch_cmd) <= DYN.max_pitch
    assert 0.0 <= des.throttle_cmd <= 1.0


def test_follower_has_more_throttle_authority():
    s = level()
    lead = action_to_attitude(s, np.array([0, 0, 0.6]), "leader")
    fol = action_to_attitude(s, np.array([0, 0, 0.6]), "follower")
    assert fol.throttle_cmd > lead.throttle_cmd


def total_variation(a, b, bins):
    ha, _ = np.histogram(a, bins=bins)
    hb, _ = np.histogram(b, bins=bins)
    return 0.5 * np.abs(ha / len(a) - hb / len(b)).sum()


def test_subpolicies_produce_distinct_command_distributions_after_training():
    from lfcombat.lfmappo import TrainConfig, collect_rollouts, new_policy, train_iteration
    arena_cfg = ar.ArenaConfig(team_size=3, spawn_x=(-4000, -2500), spawn_y=(-2000, 2000), t_limit=20)
    from lfcombat.lfmappo import CollectEnv
    params = new_policy("lfmappo", 3, SMALL, 0)
    env = CollectEnv(arena=arena_cfg)
    buf = collect_rollouts(params, 1, 60, 0, 0, env)
    params, m = train_iteration(params, buf, TrainConfig(minibatch_size=64), np.random.default_rng(0))
    assert not m["aborted"]
    arena = ar.reset(arena_cfg, 1)
    probes = [ar.observe(arena, u, include_leader_action=False) for u in range(3)]
    rng = np.random.default_rng(0)
    samples = {k: [] for k in range(3)}
    for k in range(3):
        for o in probes:
            for _ in range(2000):
                des, _, _ = subpolicy_act(params.nets[f"sub_{k}"], o, arena.agents[0].state, rng)
                samples[k].append(wrap_angle(des.heading_cmd - arena.agents[0].state.psi))
    bins = np.linspace(-math.pi / 2, math.pi / 2, 41)
    for i in range(3):
        for j in range(i + 1, 3):
            assert total_variation(samples[i], samples[j], bins) > 0.02


# ---------------------------------------------------------------- bottom level

def test_zero_error_gives_neutral_surfaces():
    s = level(psi=0.7)
    c = low_level_control(s, DesiredAttitude(0.7, 0.0, 0.63))
    assert (c.d_phi, c.d_theta, c.d_psi) == (0.0, 0.0, 0.0)
    assert math.isclose(c.throttle_frac, 0.63)


def test_ninety_degree_heading_error_saturates_positive_roll():
    c = low_level_control(level(), DesiredAttitude(math.pi / 2, 0.0, 0.5))
    assert c.d_phi == 1.0
    c = low_level_control(level(), DesiredAttitude(-math.pi / 2, 0.0, 0.5))
    assert c.d_phi == -1.0


@pytest.mark.parametrize("v", [180.0, 230.0, 300.0])
def test_closed_loop_heading_capture(v):
    s = level(v=v)
    des = DesiredAttitude(math.radians(30), 0.0, trim_throttle(v))
    errs = []
    for _ in range(int(25 / DYN.dt)):
        s = step_dynamics(s, low_level_control(s, des))
        errs.append(abs(math.degrees(wrap_angle(s.psi - des.heading_cmd))))
    reach = next(i for i, e in enumerate(errs) if e < 2.0)
    assert reach * DYN.dt <= 10.0
    assert max(errs[reach:reach + int(5 / DYN.dt)]) <= 2.0


@settings(max_examples=200, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-1.2, 1.2), st.floats(-1, 1), st.floats(-math.pi, math.pi),
       st.floats(-1, 1), st.floats(0, 1), st.floats(100, 400))
def test_controller_is_pure_and_bounded(phi, theta, psi, hd, pd, thr, v):
    s = UavState.from_attitude(0, 0, 7000, v, phi=phi, theta=theta, psi=psi, p=0.3, q=-0.2, r=0.1)
    d = DesiredAttitude(hd, pd, thr)
    a, b = low_level_control(s, d), low_level_control(s, d)
    assert a.as_tuple() == b.as_tuple()
    assert all(-1.0 <= x <= 1.0 for x in a.as_tuple())


# ---------------------------------------------------------------- team runtime

def run_team(variant="lfmappo", seed=0, physics_steps=600):
    arena = new_arena(seed)
    params = init_policy(variant, 6, SMALL, np.random.default_rng(seed))
    for name, net in params.nets.items():
        if name.startswith("selector"):
            net.weights[-1] *= 300.0  # spread the selector so choices vary
    blue = HierarchicalTeam(params, "blue", rng=np.random.default_rng(seed + 1))
    red = HierarchicalTeam(params, "red", rng=np.random.default_rng(seed + 2))
    log = []

    def hook(team, arena, controls):
        if team is blue and team.last_decisions:
            log.append((team.agent_step - 1, {d.uid: d for d in team.last_decisions},
                        {u: arena.agents[u].state for u in arena.alive_ids("blue")}, dict(controls),
                        dict(team.desired)))
    drive(arena, [blue, red], physics_steps, hook)
    return log, blue


def test_subpolicy_changes_only_at_epoch_boundaries():
    log, blue = run_team()
    K = blue.hcfg.selector_epoch
    prev = {}
    changes = 0
    for step, decisions, *_ in log:
        for uid, d in decisions.items():
            if uid in prev and prev[uid] != d.subpolicy:
                assert step % K == 0
                changes += 1
            assert d.epoch_start == (step % K == 0)
            prev[uid] = d.subpolicy
    assert changes > 0


def test_controls_are_pd_of_subpolicy_output():
    log, blue = run_team(physics_steps=200)
    for _, decisions, states, controls, desired in log:
        for uid, d in decisions.items():
            des = action_to_attitude(states[uid], np.tanh(d.raw_action), d.role, blue.hcfg, blue.dyn)
            assert des == desired[uid]
            assert controls[uid] == low_level_control(states[uid], des, blue.gains, blue.dyn)


def test_followers_observe_same_epoch_leader_choice():
    log, _ = run_team()
    seen = 0
    for _, decisions, *_ in log:
        for uid, d in decisions.items():
            if d.epoch_start and d.role == "follower":
                leader = decisions[3 * (uid // 3)]
                onehot = d.macro_obs[-3:]
                assert onehot[leader.subpolicy] == 1.0 and onehot.sum() == 1.0
                assert d.leader_action == leader.subpolicy
                seen += 1
    assert seen > 0
