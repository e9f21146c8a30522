"""Release gate: nine end-to-end checks, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete. The learning-speed comparison (criterion 7) trains 25 full runs
and dominates the wall time.
"""

import itertools
import time

import numpy as np

from dialoglab import harness as H
from dialoglab import nn
from dialoglab.agent import QAgent, make_agent, sync_target, td_train_step
from dialoglab.coordinator import (CoordinatorAgent, adaptation_state,
                                   coordinator_reward)
from dialoglab.env import N_AGENT_ACTIONS, DialogEnv, run_rule_dialog
from dialoglab.hindsight import hind_man, kl_divergence
from dialoglab.ontology import (Goal, builtin_ontology,
                                brute_force_subgoal_count, enumerate_subgoals,
                                sample_goal)
from dialoglab.worldmodel import make_worldmodel, wm_finite_diff_check
from oracles import (ChainMDP, all_chain_turns, brute_force_stitch_pairs,
                     random_store, value_iteration)


def _report(n: int, ok: bool, detail: str) -> None:
    print(f"[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}", flush=True)
    assert ok, f"criterion {n}: {detail}"


def _desk_env() -> DialogEnv:
    return DialogEnv(*builtin_ontology("desk"), L=40)


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    env = _desk_env()
    r = np.random.default_rng(0)

    agent = make_agent(env.layout.dim, r, hidden=80)
    assert agent.n_actions == 11
    x = r.uniform(0.0, 1.0, size=(4, env.layout.dim))
    y = r.normal(size=(4, agent.n_actions))
    q_err = nn.finite_diff_check(agent.q_net, x, y, "mse")

    # same two-shared-layer/three-head topology as training; narrow width
    # keeps the central-difference oracle clear of float-resolution noise
    wm = make_worldmodel(env.layout.dim, N_AGENT_ACTIONS,
                         np.random.default_rng(1), L=40, hidden=24)
    turns = run_rule_dialog(env, np.random.default_rng(1)).turns[:3]
    wm_err = wm_finite_diff_check(wm, list(turns))

    coord = CoordinatorAgent(r, k_max=20, hidden=64)
    assert coord.agent.q_net.layers[0].w.shape[1] == 4
    assert coord.agent.n_actions == 20
    cx = r.uniform(0.0, 1.0, size=(4, 4))
    cy = r.normal(size=(4, 20))
    c_err = nn.finite_diff_check(coord.agent.q_net, cx, cy, "mse")

    dt = time.perf_counter() - t0
    ok = max(q_err, wm_err, c_err) <= 1e-4 and dt < 10.0
    _report(1, ok, f"gradient checks rel err: q={q_err:.2e} "
                   f"model={wm_err:.2e} coordinator={c_err:.2e} ({dt:.1f}s)")


def test_criterion_2_chain_mdp_oracle():
    t0 = time.perf_counter()
    mdp = ChainMDP()
    qstar = value_iteration(mdp, gamma=0.9)
    net = nn.init_network([5, 2], ["linear"], np.random.default_rng(0))
    agent = QAgent(q_net=net, target_net=net.copy(),
                   opt=nn.make_optimizer(net, lr=0.02, eps=1e-2), gamma=0.9)
    batch = all_chain_turns(mdp)
    converged_at, err = None, float("inf")
    for step in range(1, 10_001):
        td_train_step(agent, batch)
        if step % 25 == 0:
            sync_target(agent)
        if step % 250 == 0:
            q = np.vstack([nn.forward(agent.q_net, mdp.encode(s))
                           for s in range(mdp.n_states)])
            nonterm = slice(0, mdp.terminal)
            err = float(np.max(np.abs(q[nonterm] - qstar[nonterm])))
            greedy_ok = all(int(np.argmax(q[s])) == int(np.argmax(qstar[s]))
                            for s in range(mdp.terminal))
            if err <= 0.05 and greedy_ok:
                converged_at = step
                break
    dt = time.perf_counter() - t0
    ok = converged_at is not None and dt < 30.0
    _report(2, ok, f"chain MDP: greedy matches value iteration, "
                   f"max|Q - Q*|={err:.3f} at step {converged_at} ({dt:.1f}s)")


def test_criterion_3_stitcher_matches_brute_force():
    t0 = time.perf_counter()
    env = _desk_env()
    L, layout = env.L, env.layout
    r = np.random.default_rng(42)
    pairs_total, cases = 0, 200
    ok = True
    for _ in range(cases):
        goal = sample_goal(env.templates, r)
        subgoals = enumerate_subgoals(goal)
        pick = [subgoals[int(r.integers(len(subgoals)))] for _ in range(3)]
        store = random_store(env, r, n_heads=int(r.integers(1, 9)),
                             n_tails=int(r.integers(1, 9)), subgoals=pick)
        delta = float(r.choice([0.0, 0.01, 0.1, 1.0, 10.0]))
        expected = brute_force_stitch_pairs(store, layout, delta,
                                            already_emitted=set())
        out = hind_man(delta, store, layout, L)
        ok &= store.emitted_pairs == expected and len(out) == len(expected)
        for d in out:
            *body, last = [t.r for t in d.turns]
            ok &= all(x == -1.0 for x in body) and last == 2.0 * L - 1.0
            ok &= d.turns[-1].done and not any(t.done for t in d.turns[:-1])
        pairs_total += len(out)
    dt = time.perf_counter() - t0
    ok = ok and dt < 30.0
    _report(3, ok, f"stitcher equals brute force on {cases} stores "
                   f"({pairs_total} dialogs emitted, relabeling holds) ({dt:.1f}s)")


def test_criterion_4_subgoal_count_law():
    t0 = time.perf_counter()
    onto, _ = builtin_ontology("desk")
    checked, ok = 0, True
    cslots, rslots = onto.constraint_slots, onto.informable_slots
    for nc in range(len(cslots) + 1):
        for nr in range(len(rslots) + 1):
            if not 1 <= nc + nr <= 6:
                continue
            for cs in itertools.combinations(cslots, nc):
                for rs in itertools.combinations(rslots, nr):
                    g = Goal.make({c: onto.value_pools[c][0] for c in cs}, rs)
                    want = 2 ** (nc + nr) - 1
                    ok &= (len(enumerate_subgoals(g)) == want
                           == brute_force_subgoal_count(g))
                    checked += 1
    dt = time.perf_counter() - t0
    ok = ok and checked > 0 and dt < 5.0
    _report(4, ok, f"subgoal count = 2^(|C|+|R|)-1 on {checked} goals ({dt:.1f}s)")


def test_criterion_5_formula_units():
    t0 = time.perf_counter()
    zeros_ok = np.array_equal(adaptation_state(0.7, 0.2, 0.5, 0.1, i=0),
                              np.zeros(4))
    cr = coordinator_reward(0.5, 0.4, 10)
    cr_ok = abs(cr - 0.18182) <= 1e-5
    kl = kl_divergence(np.array([0.5, 0.5]), np.array([0.9, 0.1]))
    kl_ok = abs(kl - 0.5108) <= 1e-4
    net = nn.init_network([1, 1], ["linear"], np.random.default_rng(0))
    net.layers[0].w[:] = 1.0
    opt = nn.make_optimizer(net, lr=0.1, decay=0.9, eps=0.0)
    nn.rmsprop_step(net, nn.GradientBundle(dw=[np.array([[1.0]])],
                                           db=[np.array([0.0])]), opt)
    w = float(net.layers[0].w[0, 0])
    rms_ok = abs(w - 0.6838) <= 1e-4
    dt = time.perf_counter() - t0
    ok = zeros_ok and cr_ok and kl_ok and rms_ok and dt < 1.0
    _report(5, ok, f"worked examples: adaptation zeros={zeros_ok}, "
                   f"coord reward={cr:.5f}, KL={kl:.4f}, RMSProp w={w:.4f} ({dt:.2f}s)")


def test_criterion_6_environment_solvable_by_rules():
    t0 = time.perf_counter()
    env = _desk_env()
    r = np.random.default_rng(123)
    wins = sum(run_rule_dialog(env, r, dialog_id=i).outcome == "success"
               for i in range(500))
    sr = wins / 500.0
    dt = time.perf_counter() - t0
    ok = sr >= 0.95 and dt < 30.0
    _report(6, ok, f"rule-based agent SR={sr:.3f} over 500 dialogs ({dt:.1f}s)")


def test_criterion_7_learning_speed_ordering():
    t0 = time.perf_counter()
    variants = ("dqn", "lu", "lh", "lhu", "lhua")
    aucs = {v: [] for v in variants}
    for seed in range(5):
        for v in variants:
            cfg = H.RunConfig(variant=v, seed=seed, episodes=150)
            _, curve = H.run_training(cfg)
            aucs[v].append(H.auc(curve))
    mean = {v: float(np.mean(aucs[v])) for v in variants}
    seed_wins = sum(a > d for a, d in zip(aucs["lhua"], aucs["dqn"]))
    margin = mean["lhua"] - mean["dqn"]
    ok = (mean["lhua"] > mean["lhu"] > mean["dqn"]
          and mean["lu"] > mean["dqn"]
          and mean["lh"] > mean["dqn"]
          and margin >= 0.05
          and seed_wins >= 4)
    dt = time.perf_counter() - t0
    detail = ("mean AUC " + " ".join(f"{v}={mean[v]:.3f}" for v in variants)
              + f", margin={margin:.3f}, lhua>dqn on {seed_wins}/5 seeds"
              + f" ({dt / 60:.1f} min)")
    _report(7, ok, detail)


def test_criterion_8_k_sweep_table(tmp_path):
    t0 = time.perf_counter()
    values = (6, 8, 10, 12, 14, 16)
    cfg = H.RunConfig(variant="lhu", seed=0, episodes=40)
    rows = H.sweep_k(cfg, values, tmp_path / "a")
    H.sweep_k(cfg, values, tmp_path / "b")
    text_a = (tmp_path / "a" / "sweep_k.csv").read_text()
    text_b = (tmp_path / "b" / "sweep_k.csv").read_text()
    ks = [row["k"] for row in rows]
    finite = all(np.isfinite(row["auc"]) and 0.0 <= row["auc"] <= 1.0
                 for row in rows)
    dt = time.perf_counter() - t0
    ok = ks == list(values) and finite and text_a == text_b
    best = max(rows, key=lambda row: row["auc"])
    _report(8, ok, f"k sweep over {list(values)} deterministic, "
                   f"best k={best['k']} (auc={best['auc']:.3f}) ({dt:.0f}s)")


def test_criterion_9_deterministic_runs(tmp_path):
    t0 = time.perf_counter()
    cfg = H.RunConfig(variant="lhua", seed=7, episodes=25)
    H.train_and_emit(cfg, tmp_path / "a")
    H.train_and_emit(cfg, tmp_path / "b")
    name = H.run_name(cfg)
    bytes_a = (tmp_path / "a" / f"{name}.csv").read_bytes()
    bytes_b = (tmp_path / "b" / f"{name}.csv").read_bytes()
    dt = time.perf_counter() - t0
    ok = bytes_a == bytes_b and len(bytes_a) > 0 and dt < 120.0
    _report(9, ok, f"identical config+seed reproduces the CSV byte for byte "
                   f"({dt:.0f}s)")
