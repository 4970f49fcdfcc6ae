import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mardpg.env import (INSHOP, MAIN, BeachEnv, ShoppingConfig, ShoppingEnv, SteppedAfterTerminal,
                        beach_bruteforce, beach_step, compute_reward, env_reset, env_step, rank_items,
                        scenario_transition, served_customers, single_state_mdp, user_click_model)
from mardpg.env import shopping as sh
from mardpg.env.shopping import PageEvents, UserState


def random_padded(rng, agent, dims=(7, 3)):
    out = np.zeros(sum(dims))
    lo = sum(dims[:agent])
    out[lo:lo + dims[agent]] = rng.dirichlet(np.ones(dims[agent]))
    return out


@pytest.fixture(scope="module")
def rollouts():
    """About 10^5 steps of sessions under random simplex weights."""
    env = ShoppingEnv()
    rng = np.random.default_rng(2024)
    steps = []
    switch_p, switched = [], []
    while len(steps) < 100_000:
        obs, agent = env.reset(rng)
        purchased = False
        while True:
            assert obs[sh.SCENARIO].tolist() == [float(agent == MAIN), float(agent == INSHOP)]
            user = env.user
            step = env.step(random_padded(rng, agent))
            ev = step.info["events"]
            purchased |= ev.purchase is not None
            steps.append((obs, agent, step.reward, step.terminal, ev, purchased))
            if agent == MAIN and ev.clicked and not step.terminal:
                # closed form: the shop of the top clicked item decides the switch odds
                first = step.info["page"][np.flatnonzero(ev.clicks)[0]]
                q = env.catalog.quality[env.catalog.shop[first]]
                switch_p.append(min(1.0, 0.2546 * q / 0.5))
                switched.append(step.next_agent == INSHOP)
            if step.terminal:
                break
            assert step.next_agent == user.scenario
            obs, agent = step.next_obs, step.next_agent
    return steps, np.array(switch_p), np.array(switched)


# ---------------------------------------------------------------------------
# reset


def test_seeded_reset_is_reproducible():
    a = ShoppingEnv().reset(np.random.default_rng(5))[0]
    b = ShoppingEnv().reset(np.random.default_rng(5))[0]
    assert a.tobytes() == b.tobytes()


def test_sessions_start_in_main_search():
    env = ShoppingEnv()
    rng = np.random.default_rng(0)
    for _ in range(50):
        obs, agent = env_reset(env, rng)
        assert agent == MAIN
        assert obs[sh.SCENARIO].tolist() == [1.0, 0.0]


def test_age_buckets_follow_configured_distribution():
    env = ShoppingEnv()
    rng = np.random.default_rng(1)
    n = 10_000
    counts = np.zeros(8)
    for _ in range(n):
        obs, _ = env.reset(rng)
        counts += obs[sh.AGE]
    p = np.array(env.cfg.age_probs)
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 3 * sigma), (counts, n * p)


# ---------------------------------------------------------------------------
# ranking


def test_basis_weights_rank_by_one_feature():
    rng = np.random.default_rng(2)
    feats = rng.uniform(size=(12, 7))
    for k in range(7):
        order = rank_items(feats, np.eye(7)[k], np.arange(12))
        assert np.all(np.diff(feats[order, k]) <= 0)


def test_identical_items_keep_id_order():
    feats = np.ones((4, 3))
    order = rank_items(feats, np.array([0.2, 0.3, 0.5]), [40, 7, 19, 3])
    np.testing.assert_array_equal(order, [3, 1, 2, 0])


@pytest.mark.parametrize("seed", range(5))
def test_ranking_matches_comparison_sort(seed):
    rng = np.random.default_rng(seed)
    feats = np.round(rng.uniform(size=(20, 7)), 1)  # rounding plants ties
    w = rng.dirichlet(np.ones(7))
    ids = rng.permutation(100)[:20]
    scores = feats @ w
    brute = sorted(range(20), key=lambda i: (-scores[i], ids[i]))
    np.testing.assert_array_equal(rank_items(feats, w, ids), brute)


def test_ranking_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        rank_items(np.ones((5, 7)), np.ones(3) / 3, np.arange(5))


# ---------------------------------------------------------------------------
# click model


def _user(scenario=MAIN, power=1):
    return UserState(age=2, gender=0, power=power, query=0, main_pref=np.ones(7), inshop_pref=np.ones(3),
                     scenario=scenario)


def test_saturated_click_probability_is_position_bias():
    cfg = ShoppingConfig(click_beta=1e6)
    env = ShoppingEnv(cfg)
    u = _user()
    feats = np.zeros((10, 7))
    feats[0] = 1.0
    ev = user_click_model(cfg, env.catalog, u, np.arange(10), feats, np.random.default_rng(0))
    assert abs(ev.click_probs[0] - 1.0) < 1e-12
    assert sh.position_bias(1)[0] == 1.0


def test_suppressed_logit_kills_clicks():
    cfg = ShoppingConfig(click_bias=-20.0)
    env = ShoppingEnv(cfg)
    u = _user()
    u.main_pref = np.zeros(7)
    ev = user_click_model(cfg, env.catalog, u, np.arange(10), env.catalog.main[:10], np.random.default_rng(0))
    assert ev.click_probs.max() < 1e-6


def closed_form_click_probs(cfg, pref, feats):
    return np.array([1.0 / (1.0 + math.exp(-(cfg.click_beta * float(feats[r] @ pref) + cfg.click_bias)))
                     / math.log2(r + 2) for r in range(len(feats))])


def test_sampled_clicks_match_closed_form():
    cfg = ShoppingConfig()
    env = ShoppingEnv(cfg)
    u = _user()
    u.main_pref = np.array([1.5, 0.1, 0.2, -0.8, 0.8, 0.2, 2.0])
    ids = np.arange(10)
    feats = env.catalog.main[ids]
    expected = closed_form_click_probs(cfg, u.main_pref, feats)
    rng = np.random.default_rng(4)
    n = 100_000
    freq = np.zeros(10)
    for _ in range(n):
        ev = user_click_model(cfg, env.catalog, u, ids, feats, rng)
        freq += ev.clicks
    np.testing.assert_allclose(ev.click_probs, expected, rtol=1e-12)
    sigma = np.sqrt(n * expected * (1 - expected))
    assert np.all(np.abs(freq - n * expected) < 3 * sigma)


def test_at_most_one_purchase_per_page_and_only_after_click():
    cfg = ShoppingConfig(click_bias=5.0, purchase_bias=5.0)
    env = ShoppingEnv(cfg)
    rng = np.random.default_rng(5)
    for _ in range(200):
        ev = user_click_model(cfg, env.catalog, _user(), np.arange(10), env.catalog.main[:10], rng)
        if ev.purchase is not None:
            assert ev.clicks[list(np.arange(10)).index(ev.purchase)]
            assert ev.price == env.catalog.price[ev.purchase] > 0


# ---------------------------------------------------------------------------
# reward


def events(purchase=None, price=0.0, clicked=False, abandoned=False):
    clicks = np.zeros(10, dtype=bool)
    clicks[0] = clicked or purchase is not None
    return PageEvents(MAIN, clicks, purchase, price, abandoned=abandoned, left=abandoned)


def test_reward_scheme():
    cfg = ShoppingConfig()
    assert compute_reward(cfg, events(purchase=3, price=35.0)) == 35.0
    assert compute_reward(cfg, events(clicked=True)) == 1.0
    assert compute_reward(cfg, events()) == -1.0
    assert compute_reward(cfg, events(abandoned=True)) == -6.0
    assert compute_reward(cfg, events(clicked=True, abandoned=True)) == -4.0


def test_rewards_come_from_whitelist(rollouts):
    steps, _, _ = rollouts
    for obs, agent, reward, terminal, ev, purchased in steps:
        base = ev.price if ev.purchase is not None else (1.0 if ev.clicked else -1.0)
        if terminal and not purchased:
            base -= 5.0
        assert reward == base
        if ev.purchase is not None:
            assert reward > 0


def test_observations_within_unit_box(rollouts):
    obs = np.array([s[0] for s in rollouts[0]])
    assert obs.shape == (len(rollouts[0]), 52)
    assert len(obs) >= 100_000
    assert obs.min() >= 0.0 and obs.max() <= 1.0


def test_scenario_onehot_matches_acting_agent(rollouts):
    for obs, agent, *_ in rollouts[0][:10_000]:
        assert obs[sh.SCENARIO][agent] == 1.0 and obs[sh.SCENARIO].sum() == 1.0


def test_main_to_shop_switch_frequency(rollouts):
    _, p, switched = rollouts
    expected = p.sum()
    sigma = np.sqrt(np.sum(p * (1 - p)))
    assert len(p) > 10_000
    assert abs(switched.sum() - expected) < 3 * sigma


# ---------------------------------------------------------------------------
# scenario transitions


def run_sessions(cfg, n, seed=0):
    env = ShoppingEnv(cfg)
    rng = np.random.default_rng(seed)
    visited = set()
    for _ in range(n):
        obs, agent = env.reset(rng)
        while True:
            visited.add(agent)
            step = env.step(random_padded(rng, agent))
            if step.terminal:
                break
            agent = step.next_agent
    return visited


def test_no_switch_probability_never_enters_shop():
    assert run_sessions(ShoppingConfig(p_main_to_shop=0.0), 500) == {MAIN}


def test_forced_switch_after_click():
    cfg = ShoppingConfig(p_main_to_shop=1.0, leave_base=0.0, leave_no_click=0.0, leave_after_purchase=0.0)
    env = ShoppingEnv(cfg)
    env.catalog.quality[:] = 1.0
    rng = np.random.default_rng(0)
    u = _user()
    clicks = np.zeros(10, dtype=bool)
    clicks[2] = True
    for _ in range(100):
        scen, shop, term = scenario_transition(cfg, env.catalog, u, np.arange(10), PageEvents(MAIN, clicks), rng)
        assert (scen, shop, term) == (INSHOP, int(env.catalog.shop[2]), False)


def test_session_ends_at_step_limit():
    cfg = ShoppingConfig(leave_base=0.0, leave_no_click=0.0, leave_after_purchase=0.0, max_steps=4)
    env = ShoppingEnv(cfg)
    rng = np.random.default_rng(1)
    for _ in range(20):
        _, agent = env.reset(rng)
        n = 0
        while True:
            step = env.step(random_padded(rng, agent))
            n += 1
            if step.terminal:
                break
            agent = step.next_agent
        assert n == 4


# ---------------------------------------------------------------------------
# env_step contract


def test_step_after_terminal_fails():
    env = ShoppingEnv(ShoppingConfig(max_steps=1))
    rng = np.random.default_rng(0)
    env.reset(rng)
    assert env_step(env, random_padded(rng, 0)).terminal
    with pytest.raises(SteppedAfterTerminal, match="stepped after terminal"):
        env.step(random_padded(rng, 0))


def test_wrong_slice_fails():
    env = ShoppingEnv()
    rng = np.random.default_rng(0)
    env.reset(rng)
    with pytest.raises(ValueError):
        env.step(random_padded(rng, 1))


def trajectory(seed):
    env = ShoppingEnv(catalog_seed=3)
    rng = np.random.default_rng(seed)
    act_rng = np.random.default_rng(seed + 100)
    out = []
    for _ in range(20):
        obs, agent = env.reset(rng)
        while True:
            step = env.step(random_padded(act_rng, agent))
            out.append((obs.tobytes(), agent, step.reward, step.terminal))
            if step.terminal:
                break
            obs, agent = step.next_obs, step.next_agent
    return out


def test_seeded_runs_are_identical():
    assert trajectory(9) == trajectory(9)
    assert trajectory(9) != trajectory(10)


def test_catalog_determinism_and_per_seed_variation():
    a, b, c = ShoppingEnv(catalog_seed=4), ShoppingEnv(catalog_seed=4), ShoppingEnv(catalog_seed=5)
    assert a.catalog.main.tobytes() == b.catalog.main.tobytes()
    assert a.catalog.price.tobytes() == b.catalog.price.tobytes()
    assert a.catalog.main.tobytes() != c.catalog.main.tobytes()


def test_catalog_items_well_formed():
    env = ShoppingEnv()
    cat = env.catalog
    assert cat.n_items == 50 * 40
    assert cat.main.min() >= 0 and cat.main.max() <= 1
    assert np.all(cat.price > 0)
    item = cat.item(17)
    assert item.inshop_features(item.category).min() >= 0 and item.inshop_features(0).max() <= 1
    shops = cat.shops()
    assert all(len(s.catalog) == 40 for s in shops)
    popularity = np.array([cat.main[s.catalog, 2].mean() for s in shops])
    quality = np.array([s.quality for s in shops])
    assert np.corrcoef(popularity, quality)[0, 1] > 0.9


def test_snapshot_export(tmp_path):
    env = ShoppingEnv(ShoppingConfig(n_shops=3, items_per_shop=10))
    snap = json.loads(env.export_snapshot(tmp_path / "snap.json").read_text())
    assert len(snap["shops"]) == 3 and len(snap["items"]) == 30
    assert snap["main_features"][2] == "shop_popularity"


def test_config_validation():
    with pytest.raises(ValueError):
        ShoppingEnv(ShoppingConfig(p_main_to_shop=1.5))
    with pytest.raises(ValueError):
        ShoppingEnv(ShoppingConfig(age_probs=(1.0,)))
    with pytest.raises(ValueError):
        ShoppingEnv(ShoppingConfig(page_size=50))


# ---------------------------------------------------------------------------
# beach


def test_full_coverage_radius():
    assert served_customers([0.1, 0.9], 1.0, 101) == 101
    assert served_customers([0.0, 0.0], 1.0, 101) == 101


def test_grid_counting_examples():
    # customers are k/100; both at 0.5 cover k = 25..75
    assert served_customers([0.5, 0.5], 0.25, 101) == 51
    assert served_customers([0.25, 0.75], 0.25, 101) == 101


def test_bruteforce_optimum():
    res = beach_bruteforce(0.25, 101, 201)
    assert res.best_reward == 101
    # several pairs tie at 101; (0.25, 0.75) is one of them
    assert served_customers(res.best_positions, 0.25, 101) == 101
    assert served_customers([0.25, 0.75], 0.25, 101) == 101
    p0, p1 = res.best_positions
    assert p0 <= 0.25 + 1e-12 <= 0.5 <= 0.75 <= p1 + 1e-12
    assert res.hotelling_reward == 51 and res.hotelling_positions == (0.5, 0.5)


def test_single_seller_suffices_at_half_radius():
    res = beach_bruteforce(0.5, 101, 101)
    assert res.best_reward == 101
    assert served_customers([0.5, 0.5], 0.5, 101) == 101


def test_bruteforce_requires_resolution():
    with pytest.raises(ValueError):
        beach_bruteforce(0.25, 101, 1)


@given(st.floats(0.01, 1.0), st.integers(2, 150), st.integers(2, 60))
@settings(max_examples=60, deadline=None)
def test_optimum_dominates_hotelling(rho, g, res):
    out = beach_bruteforce(rho, g, res)
    # the resolution grid contains 0.5 only for odd resolutions
    if res % 2 == 1:
        assert out.best_reward >= out.hotelling_reward
    assert out.best_reward <= g
    assert out.best_reward == served_customers(out.best_positions, rho, g)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.0, 0.6))
@settings(max_examples=100, deadline=None)
def test_beach_reward_is_grid_count(p0, p1, rho):
    env = BeachEnv(rho, 101)
    env.reset(np.random.default_rng(0))
    first = env.step(np.array([p0, 1 - p0, 0.0, 0.0]))
    assert not first.terminal and first.reward == 0.0 and first.next_agent == 1
    last = beach_step(env, np.array([0.0, 0.0, p1, 1 - p1]))
    assert last.terminal
    assert last.reward == served_customers([p0, p1], rho, 101) <= 101
    with pytest.raises(SteppedAfterTerminal):
        env.step(np.array([0.0, 0.0, 0.5, 0.5]))


def test_beach_observation_and_turns():
    env = BeachEnv(random_start=False)
    obs, agent = env.reset(np.random.default_rng(0))
    np.testing.assert_array_equal(obs, [0.5, 0.5, 1.0, 0.0])
    assert agent == 0
    with pytest.raises(ValueError):
        env.step(np.array([0.0, 0.0, 0.3, 0.7]))


# ---------------------------------------------------------------------------
# finite MDPs


def test_single_state_mdp_is_never_terminal():
    env = single_state_mdp(max_steps=3)
    obs, agent = env.reset(np.random.default_rng(0))
    for t in range(3):
        step = env.step(np.array([1.0]))
        assert step.reward == 1.0 and not step.terminal
    assert step.info["truncated"]
