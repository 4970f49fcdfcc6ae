"""Two-scenario e-commerce session simulator (main search and in-shop search).

A session belongs to one synthetic user issuing one query. Each step the
active scenario ranks a candidate pool with the acting agent's feature
weights, shows the top ``page_size`` items, and the user clicks, buys, moves
between scenarios or leaves.

Cooperation is built in: main-search weight on shop popularity costs a little
immediate reward, but sends users into high-quality shops, where purchases
are likelier and items dearer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..numgrad import sigmoid
from .base import EnvStep, SteppedAfterTerminal, check_slice

MAIN, INSHOP = 0, 1
MAIN_FEATURES = ("ctr_estimate", "rating", "shop_popularity", "price_norm",
                 "conversion_rate", "sales_volume", "relevance")
INSHOP_FEATURES = ("latest_collection", "sales_volume", "relevance")
N_AGE, N_GENDER, N_POWER, N_QUERY = 8, 2, 3, 8
OBS_DIM = 52

# observation layout
AGE = slice(0, 8)
GENDER = slice(8, 10)
POWER = slice(10, 13)
HISTORY = slice(13, 19)
QUERY = slice(19, 27)
SCENARIO = slice(27, 29)
PAGE_MAIN_MEAN = slice(29, 36)
PAGE_MAIN_STD = slice(36, 43)
PAGE_INSHOP_MEAN = slice(43, 46)
PAGE_INSHOP_STD = slice(46, 49)
STEP, LAST_REWARD, NO_CLICK_STREAK = 49, 50, 51


@dataclass
class ShoppingConfig:
    __pydantic_config__ = {"extra": "forbid"}

    n_shops: int = 50
    items_per_shop: int = 40
    n_query_types: int = 8
    page_size: int = 10
    n_candidates: int = 30
    off_query_fraction: float = 0.3
    max_steps: int = 10
    p_main_to_shop: float = 0.2546
    p_shop_to_main: float = 0.0912
    quality_ref: float = 0.5
    leave_base: float = 0.05
    leave_no_click: float = 0.3
    leave_after_purchase: float = 0.3
    click_beta: float = 2.0
    click_bias: float = -5.5
    purchase_bias: float = -1.0
    quality_bonus: float = 2.0
    purchase_utility: float = 1.0
    price_median: float = 30.0
    price_quality_slope: float = 0.5
    price_sigma: float = 0.25
    reward_click: float = 1.0
    reward_no_click: float = -1.0
    reward_abandon: float = -5.0
    age_probs: Tuple[float, ...] = (0.05, 0.15, 0.2, 0.2, 0.15, 0.1, 0.1, 0.05)
    gender_probs: Tuple[float, ...] = (0.5, 0.5)
    power_probs: Tuple[float, ...] = (0.4, 0.4, 0.2)
    pref_noise: float = 0.2
    catalog_seed: Optional[int] = None

    def validate(self) -> None:
        for name in ("p_main_to_shop", "p_shop_to_main", "leave_base", "leave_no_click",
                     "leave_after_purchase", "off_query_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name, n in (("age_probs", N_AGE), ("gender_probs", N_GENDER), ("power_probs", N_POWER)):
            p = np.asarray(getattr(self, name))
            if p.shape != (n,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ValueError(f"{name} must be {n} nonnegative probabilities summing to 1")
        if self.page_size <= 0 or self.page_size > self.items_per_shop:
            raise ValueError("page_size must be positive and at most items_per_shop")
        if self.n_candidates < self.page_size:
            raise ValueError("n_candidates must be at least page_size")
        for name in ("max_steps", "n_shops", "items_per_shop"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_query_types != N_QUERY:
            raise ValueError(f"n_query_types is fixed at {N_QUERY} by the observation layout")
        if not 0.0 < self.quality_ref <= 1.0:
            raise ValueError("quality_ref must lie in (0, 1]")


# ---------------------------------------------------------------------------
# catalog


@dataclass
class Item:
    item_id: int
    shop_id: int
    category: int
    price: float
    main_features: np.ndarray
    latest_collection: float
    relevance: float

    def inshop_features(self, query: int) -> np.ndarray:
        rel = self.relevance if self.category == query else 0.3 * self.relevance
        return np.array([self.latest_collection, self.main_features[5], rel])


@dataclass
class Shop:
    shop_id: int
    quality: float
    catalog: List[int]


class Catalog:
    """Column-oriented item table; ``item(i)`` builds a row view."""

    def __init__(self, cfg: ShoppingConfig, rng: np.random.Generator):
        n_shops, per = cfg.n_shops, cfg.items_per_shop
        n = n_shops * per
        self.quality = rng.uniform(0.0, 1.0, size=n_shops)
        self.shop = np.repeat(np.arange(n_shops), per)
        self.category = rng.integers(0, cfg.n_query_types, size=n)
        q = self.quality[self.shop]
        appeal = rng.uniform(0.0, 1.0, size=n)
        conv = rng.uniform(0.0, 1.0, size=n)
        log_price = np.log(cfg.price_median) + cfg.price_quality_slope * (q - 0.5) + cfg.price_sigma * rng.standard_normal(n)
        self.price = np.exp(log_price)
        feats = np.empty((n, 7))
        feats[:, 0] = appeal + 0.1 * rng.standard_normal(n)
        feats[:, 1] = 0.5 * appeal + 0.5 * rng.uniform(0.0, 1.0, size=n)
        feats[:, 2] = q + 0.05 * rng.standard_normal(n)
        feats[:, 3] = (log_price - np.log(5.0)) / (np.log(200.0) - np.log(5.0))
        feats[:, 4] = conv + 0.1 * rng.standard_normal(n)
        feats[:, 5] = 0.5 * appeal + 0.5 * conv + 0.1 * rng.standard_normal(n)
        feats[:, 6] = rng.uniform(0.5, 1.0, size=n)
        self.main = np.clip(feats, 0.0, 1.0)
        self.latest = (rng.uniform(size=n) < 0.3).astype(np.float64)
        self.by_category = [np.flatnonzero(self.category == c) for c in range(cfg.n_query_types)]
        self.by_shop = [np.arange(s * per, (s + 1) * per) for s in range(n_shops)]
        self.n_items = n

    def item(self, i: int) -> Item:
        return Item(int(i), int(self.shop[i]), int(self.category[i]), float(self.price[i]),
                    self.main[i].copy(), float(self.latest[i]), float(self.main[i, 6]))

    def shops(self) -> List[Shop]:
        return [Shop(s, float(self.quality[s]), [int(i) for i in ids]) for s, ids in enumerate(self.by_shop)]

    def main_page_features(self, ids: np.ndarray, query: int) -> np.ndarray:
        f = self.main[ids].copy()
        f[:, 6] = np.where(self.category[ids] == query, f[:, 6], 0.3 * f[:, 6])
        return f

    def inshop_page_features(self, ids: np.ndarray, query: int) -> np.ndarray:
        rel = np.where(self.category[ids] == query, self.main[ids, 6], 0.3 * self.main[ids, 6])
        return np.stack([self.latest[ids], self.main[ids, 5], rel], axis=1)


def rank_items(features: np.ndarray, weights: np.ndarray, item_ids: Sequence[int]) -> np.ndarray:
    """Positions of candidates sorted by descending ``features @ weights``.

    Ties go to the smaller item id.
    """
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != weights.shape[-1]:
        raise ValueError(f"weights of dim {weights.shape[-1]} cannot score features shaped {features.shape}")
    scores = features @ weights
    return np.lexsort((np.asarray(item_ids), -scores))


# ---------------------------------------------------------------------------
# users


@dataclass
class UserState:
    age: int
    gender: int
    power: int
    query: int
    main_pref: np.ndarray
    inshop_pref: np.ndarray
    scenario: int = MAIN
    shop: Optional[int] = None
    step: int = 0
    n_clicks: int = 0
    clicked_price: float = 0.0
    clicked_popularity: float = 0.0
    clicked_ctr: float = 0.0
    purchased: bool = False
    no_click_streak: int = 0
    last_reward: float = 0.0


PRICE_PREF = np.array([-1.5, -0.8, 0.6])
PURCHASE_AFFINITY = np.array([-0.5, 0.0, 0.5])
PRICE_SENSITIVITY = np.array([2.5, 1.2, 0.3])


def sample_user(cfg: ShoppingConfig, rng: np.random.Generator) -> UserState:
    age = int(rng.choice(N_AGE, p=cfg.age_probs))
    gender = int(rng.choice(N_GENDER, p=cfg.gender_probs))
    power = int(rng.choice(N_POWER, p=cfg.power_probs))
    query = int(rng.integers(cfg.n_query_types))
    main_pref = np.array([1.5, 0.05 * age, 0.2, PRICE_PREF[power], 0.8, 0.2, 2.0])
    main_pref += cfg.pref_noise * rng.standard_normal(7)
    latest = (1.5 if age < 3 else -0.3) + (0.5 if gender == 1 else 0.0)
    inshop_pref = np.array([latest, 1.0, 1.5]) + cfg.pref_noise * rng.standard_normal(3)
    return UserState(age, gender, power, query, main_pref, inshop_pref)


def position_bias(n: int) -> np.ndarray:
    """Examination weight ``1/log2(rank + 2)`` for 0-based ranks."""
    return 1.0 / np.log2(np.arange(n) + 2.0)


@dataclass
class PageEvents:
    scenario: int
    clicks: np.ndarray
    purchase: Optional[int] = None
    price: float = 0.0
    left: bool = False
    switched: bool = False
    abandoned: bool = False
    click_probs: Optional[np.ndarray] = None

    @property
    def clicked(self) -> bool:
        return bool(self.clicks.any())


def click_probabilities(pref: np.ndarray, features: np.ndarray, beta: float, bias: float) -> np.ndarray:
    return sigmoid(beta * (features @ pref) + bias) * position_bias(len(features))


def purchase_probability(cfg: ShoppingConfig, user: UserState, utility, price_norm, quality, in_shop: bool):
    """Buy-given-click probability.

    ``utility`` is the user's click utility ``<pref, features>``, centred so
    that the purchase affinity for an item tracks how much the user liked it.
    """
    center = 2.5 if not in_shop else 1.5
    logit = (PURCHASE_AFFINITY[user.power] + cfg.purchase_utility * (utility - center)
             - PRICE_SENSITIVITY[user.power] * price_norm + cfg.purchase_bias)
    if in_shop:
        logit = logit + cfg.quality_bonus * (quality - cfg.quality_ref)
    return sigmoid(np.asarray(logit, dtype=np.float64))


def user_click_model(cfg: ShoppingConfig, catalog: Catalog, user: UserState, page_ids: np.ndarray,
                     page_features: np.ndarray, rng: np.random.Generator) -> PageEvents:
    """Sample clicks and at most one purchase for a ranked page."""
    pref = user.main_pref if user.scenario == MAIN else user.inshop_pref
    utility = page_features @ pref
    probs = sigmoid(cfg.click_beta * utility + cfg.click_bias) * position_bias(len(page_ids))
    clicks = rng.random(len(page_ids)) < probs
    events = PageEvents(user.scenario, clicks, click_probs=probs)
    clicked = np.flatnonzero(clicks)
    if clicked.size:
        ids = page_ids[clicked]
        p_buy = purchase_probability(cfg, user, utility[clicked], catalog.main[ids, 3],
                                     catalog.quality[catalog.shop[ids]], user.scenario == INSHOP)
        draws = rng.random(clicked.size) < p_buy
        if draws.any():
            k = int(np.argmax(draws))
            events.purchase = int(ids[k])
            events.price = float(catalog.price[ids[k]])
    return events


def compute_reward(cfg: ShoppingConfig, events: PageEvents) -> float:
    if events.purchase is not None:
        r = events.price
    elif events.clicked:
        r = cfg.reward_click
    else:
        r = cfg.reward_no_click
    if events.abandoned:
        r += cfg.reward_abandon
    return float(r)


def switch_probability(cfg: ShoppingConfig, quality: float) -> float:
    return float(min(1.0, cfg.p_main_to_shop * quality / cfg.quality_ref))


def leave_probability(cfg: ShoppingConfig, user: UserState, events: PageEvents) -> float:
    p = cfg.leave_base + cfg.leave_no_click * user.no_click_streak
    if events.purchase is not None:
        p += cfg.leave_after_purchase
    return min(1.0, p)


def scenario_transition(cfg: ShoppingConfig, catalog: Catalog, user: UserState, page_ids: np.ndarray,
                        events: PageEvents, rng: np.random.Generator) -> Tuple[int, Optional[int], bool]:
    """Returns ``(next_scenario, next_shop, terminal)``; ``user`` counters must be updated first."""
    leave_draw, switch_draw = rng.random(2)
    if user.step >= cfg.max_steps or leave_draw < leave_probability(cfg, user, events):
        return user.scenario, user.shop, True
    if user.scenario == MAIN:
        clicked = np.flatnonzero(events.clicks)
        if clicked.size:
            shop = int(catalog.shop[page_ids[clicked[0]]])
            if switch_draw < switch_probability(cfg, float(catalog.quality[shop])):
                return INSHOP, shop, False
        return MAIN, None, False
    if switch_draw < cfg.p_shop_to_main:
        return MAIN, None, False
    return INSHOP, user.shop, False


# ---------------------------------------------------------------------------
# environment


class ShoppingEnv:
    """Session simulator; agent 0 ranks main search, agent 1 in-shop search."""

    obs_dim = OBS_DIM
    action_dims = (7, 3)

    def __init__(self, cfg: ShoppingConfig | None = None, catalog_seed: int = 0):
        self.cfg = cfg or ShoppingConfig()
        self.cfg.validate()
        seed = self.cfg.catalog_seed if self.cfg.catalog_seed is not None else catalog_seed
        self.catalog = Catalog(self.cfg, np.random.default_rng(seed))
        self.user: Optional[UserState] = None
        self.rng: Optional[np.random.Generator] = None
        self.done = True
        self._pool: np.ndarray = np.empty(0, dtype=int)
        self._pool_features: np.ndarray = np.empty((0, 0))

    # candidate pools
    def _draw_pool(self) -> None:
        u, cfg, cat = self.user, self.cfg, self.catalog
        if u.scenario == MAIN:
            n_off = int(round(cfg.n_candidates * cfg.off_query_fraction))
            on = self.rng.choice(cat.by_category[u.query], cfg.n_candidates - n_off, replace=False)
            off = self.rng.integers(0, cat.n_items, size=n_off)
            self._pool = np.unique(np.concatenate([on, off]))
            self._pool_features = cat.main_page_features(self._pool, u.query)
        else:
            self._pool = cat.by_shop[u.shop]
            self._pool_features = cat.inshop_page_features(self._pool, u.query)

    def observe(self) -> np.ndarray:
        u, cfg = self.user, self.cfg
        o = np.zeros(OBS_DIM)
        o[AGE][u.age] = 1.0
        o[GENDER][u.gender] = 1.0
        o[POWER][u.power] = 1.0
        h = o[HISTORY]
        h[0] = min(u.n_clicks / 10.0, 1.0)
        if u.n_clicks:
            h[1] = u.clicked_price / u.n_clicks
            h[2] = u.clicked_popularity / u.n_clicks
            h[3] = u.clicked_ctr / u.n_clicks
        h[4] = float(u.purchased)
        if u.scenario == INSHOP:
            h[5] = float(np.mean(self.catalog.main[self.catalog.by_shop[u.shop], 2]))
        o[QUERY][u.query] = 1.0
        o[SCENARIO][u.scenario] = 1.0
        if u.scenario == MAIN:
            o[PAGE_MAIN_MEAN] = self._pool_features.mean(axis=0)
            o[PAGE_MAIN_STD] = self._pool_features.std(axis=0)
        else:
            o[PAGE_INSHOP_MEAN] = self._pool_features.mean(axis=0)
            o[PAGE_INSHOP_STD] = self._pool_features.std(axis=0)
        o[STEP] = u.step / cfg.max_steps
        o[LAST_REWARD] = 0.5 * (np.tanh(u.last_reward / 20.0) + 1.0)
        o[NO_CLICK_STREAK] = min(u.no_click_streak / cfg.max_steps, 1.0)
        return o

    def reset(self, rng: np.random.Generator):
        self.rng = rng
        self.user = sample_user(self.cfg, rng)
        self.done = False
        self._draw_pool()
        return self.observe(), MAIN

    @property
    def active_agent(self) -> int:
        return self.user.scenario

    def step(self, padded_action) -> EnvStep:
        if self.done:
            raise SteppedAfterTerminal()
        u, cfg, cat = self.user, self.cfg, self.catalog
        weights = check_slice(padded_action, self.action_dims, u.scenario)
        order = rank_items(self._pool_features, weights, self._pool)[: cfg.page_size]
        page_ids = self._pool[order]
        page_features = self._pool_features[order]
        events = user_click_model(cfg, cat, u, page_ids, page_features, self.rng)

        u.step += 1
        clicked = page_ids[events.clicks]
        if clicked.size:
            u.n_clicks += clicked.size
            u.clicked_price += float(cat.main[clicked, 3].sum())
            u.clicked_popularity += float(cat.main[clicked, 2].sum())
            u.clicked_ctr += float(cat.main[clicked, 0].sum())
            u.no_click_streak = 0
        else:
            u.no_click_streak += 1
        if events.purchase is not None:
            u.purchased = True

        scenario, shop, terminal = scenario_transition(cfg, cat, u, page_ids, events, self.rng)
        events.left = terminal
        events.abandoned = terminal and not u.purchased
        events.switched = scenario != u.scenario
        reward = compute_reward(cfg, events)
        u.last_reward = reward
        info = {"events": events, "page": page_ids, "page_features": page_features, "scenario": u.scenario}
        if terminal:
            self.done = True
            return EnvStep(self.observe(), None, reward, True, info)
        u.scenario, u.shop = scenario, shop
        self._draw_pool()
        return EnvStep(self.observe(), u.scenario, reward, False, info)

    def export_snapshot(self, path) -> Path:
        """Dump the catalog and population settings as JSON."""
        cat = self.catalog
        cfg = asdict(self.cfg)
        snap = {
            "config": cfg,
            "main_features": list(MAIN_FEATURES),
            "inshop_features": list(INSHOP_FEATURES),
            "shops": [{"shop_id": s, "quality": float(cat.quality[s])} for s in range(len(cat.quality))],
            "items": [{"item_id": i, "shop_id": int(cat.shop[i]), "category": int(cat.category[i]),
                       "price": float(cat.price[i]), "main_features": cat.main[i].tolist(),
                       "latest_collection": float(cat.latest[i])} for i in range(cat.n_items)],
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(snap, indent=1))
        return path
