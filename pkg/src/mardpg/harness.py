"""Experiment configuration, orchestration, metrics and the GMV gap.

Configuration files are YAML mappings with one block per component::

    task: shopping            # or "beach"
    env:    {...}             # ShoppingConfig fields
    beach:  {...}             # BeachConfig fields
    model:  {...}             # network sizes
    train:  {...}             # TrainConfig fields
    eval:   {...}             # sessions, seeds, policy pairs, workers
    l2r:    {...}             # logging budget and fitting schedule
    ew:     {...}             # fixed weights per scenario (uniform if omitted)
    policies: {main: MARDPG, inshop: MARDPG}

Absent fields take their defaults. Any field can be overridden from the
environment as ``MARDPG__<BLOCK>__<FIELD>=<yaml value>``, for example
``MARDPG__TRAIN__GAMMA=0.8``. Errors name the offending field path.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml
from pydantic import TypeAdapter, ValidationError

from .agents import MARDPGModel, comm_step, load_model, pad_action, save_model
from .baselines import EwPolicy, L2rModel, l2r_train
from .env import BeachEnv, ShoppingConfig, ShoppingEnv, beach_bruteforce
from .marl import TrainConfig, TrainingAbort, train
from .rollout import PageLogger, run_session

log = logging.getLogger(__name__)

POLICY_KINDS = ("EW", "L2R", "MARDPG")
SCENARIOS = ("main", "inshop")
ENV_PREFIX = "MARDPG__"
CSV_COLUMNS = ("run_id", "seed", "policy_main", "policy_inshop", "gmv_main", "gmv_inshop", "gmv_total",
               "clicks", "purchases", "sessions")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# ---------------------------------------------------------------------------
# configuration


@dataclass
class BeachConfig:
    __pydantic_config__ = {"extra": "forbid"}

    rho: float = 0.25
    n_customers: int = 101
    random_start: bool = True
    resolution: int = 101

    def validate(self) -> None:
        if not 0.0 < self.rho:
            raise ValueError("rho must be positive")
        if self.n_customers < 1:
            raise ValueError("n_customers must be positive")
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")


@dataclass
class ModelConfig:
    """Network sizes. Dims left as ``None`` are taken from the environment."""

    __pydantic_config__ = {"extra": "forbid"}

    msg_dim: int = 10
    obs_dim: Optional[int] = None
    action_dims: Optional[Tuple[int, ...]] = None
    actor_hidden: Tuple[int, ...] = (32, 32)
    critic_hidden: Tuple[int, ...] = (32, 32)
    critic_input_dim: Optional[int] = None
    comm_input_dim: Optional[int] = None

    def validate(self) -> None:
        if self.msg_dim <= 0:
            raise ValueError("msg_dim must be positive")
        if self.obs_dim is not None and self.obs_dim <= 0:
            raise ValueError("obs_dim must be positive")
        if self.action_dims is not None and (not self.action_dims or min(self.action_dims) <= 0):
            raise ValueError("action_dims must be a non-empty list of positive sizes")
        for name in ("actor_hidden", "critic_hidden"):
            sizes = getattr(self, name)
            if not sizes or min(sizes) <= 0:
                raise ValueError(f"{name} must be a non-empty list of positive sizes")


@dataclass
class EvalConfig:
    __pydantic_config__ = {"extra": "forbid"}

    sessions: int = 10_000
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    pairs: Tuple[Tuple[str, str], ...] = (("EW", "EW"), ("L2R", "EW"), ("EW", "L2R"), ("L2R", "L2R"),
                                          ("MARDPG", "MARDPG"))
    workers: int = 1

    def validate(self) -> None:
        if self.sessions < 0:
            raise ValueError("sessions must be >= 0")
        if not self.seeds:
            raise ValueError("seeds must list at least one seed")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for pair in self.pairs:
            for kind in pair:
                if kind not in POLICY_KINDS:
                    raise ValueError(f"pairs entries must be one of {POLICY_KINDS}, got {kind!r}")


@dataclass
class L2rConfig:
    __pydantic_config__ = {"extra": "forbid"}

    log_sessions: int = 10_000
    epochs: int = 12
    batch_size: int = 256
    learning_rate: float = 3e-3

    def validate(self) -> None:
        for name in ("log_sessions", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")


@dataclass
class EwConfig:
    __pydantic_config__ = {"extra": "forbid"}

    main: Optional[Tuple[float, ...]] = None
    inshop: Optional[Tuple[float, ...]] = None

    def validate(self) -> None:
        for name in SCENARIOS:
            w = getattr(self, name)
            if w is not None:
                try:
                    EwPolicy(np.asarray(w, dtype=np.float64))
                except ValueError as exc:
                    raise ValueError(f"{name} {exc}") from None


@dataclass
class PolicyConfig:
    __pydantic_config__ = {"extra": "forbid"}

    main: str = "MARDPG"
    inshop: str = "MARDPG"

    def validate(self) -> None:
        for name in SCENARIOS:
            if getattr(self, name) not in POLICY_KINDS:
                raise ValueError(f"{name} must be one of {POLICY_KINDS}")

    @property
    def pair(self) -> Tuple[str, str]:
        return (self.main, self.inshop)


@dataclass
class ExperimentConfig:
    __pydantic_config__ = {"extra": "forbid"}

    name: str = "mardpg"
    task: str = "shopping"
    env: ShoppingConfig = field(default_factory=ShoppingConfig)
    beach: BeachConfig = field(default_factory=BeachConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    l2r: L2rConfig = field(default_factory=L2rConfig)
    ew: EwConfig = field(default_factory=EwConfig)
    policies: PolicyConfig = field(default_factory=PolicyConfig)

    def env_dims(self) -> Tuple[int, Tuple[int, ...]]:
        env_cls = BeachEnv if self.task == "beach" else ShoppingEnv
        return env_cls.obs_dim, tuple(env_cls.action_dims)

    @property
    def obs_dim(self) -> int:
        return self.model.obs_dim if self.model.obs_dim is not None else self.env_dims()[0]

    @property
    def action_dims(self) -> Tuple[int, ...]:
        return tuple(self.model.action_dims) if self.model.action_dims is not None else self.env_dims()[1]

    def validate(self) -> None:
        if self.task not in ("shopping", "beach"):
            raise ConfigError("task", "must be 'shopping' or 'beach'")
        for block in ("env", "beach", "model", "train", "eval", "l2r", "ew", "policies"):
            try:
                getattr(self, block).validate()
            except ValueError as exc:
                msg = str(exc)
                head = msg.split(" ", 1)[0]
                raise ConfigError(f"{block}.{head}", msg) from None
        obs_dim, action_dims = self.env_dims()
        if self.obs_dim != obs_dim:
            raise ConfigError("model.obs_dim", f"must equal the {self.task} observation size {obs_dim}")
        if self.action_dims != action_dims:
            raise ConfigError("model.action_dims", f"must equal the {self.task} action sizes {list(action_dims)}")
        padded = sum(self.action_dims)
        critic_in = self.model.msg_dim + self.obs_dim + padded
        if self.model.critic_input_dim is not None and self.model.critic_input_dim != critic_in:
            raise ConfigError("model.critic_input_dim",
                              f"must equal msg_dim + obs_dim + padded action ({critic_in})")
        comm_in = self.obs_dim + padded
        if self.model.comm_input_dim is not None and self.model.comm_input_dim != comm_in:
            raise ConfigError("model.comm_input_dim", f"must equal obs_dim + padded action ({comm_in})")
        for scen, dim in zip(SCENARIOS, self.action_dims):
            w = getattr(self.ew, scen)
            if w is not None and len(w) != dim:
                raise ConfigError(f"ew.{scen}", f"needs {dim} weights")


_ADAPTER = TypeAdapter(ExperimentConfig)


def _set_path(tree: dict, path: Sequence[str], value) -> None:
    node = tree
    for key in path[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(".".join(path), "override targets a non-mapping field")
    node[path[-1]] = value


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    """Collect ``MARDPG__BLOCK__FIELD`` variables into a nested mapping."""
    environ = os.environ if environ is None else environ
    tree: dict = {}
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(".".join(path), f"unparsable override: {exc}") from None
        _set_path(tree, path, value)
    return tree


def _merge(base: dict, extra: Mapping) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_dict(data: Mapping | None, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    data = dict(data or {})
    overrides = env_overrides(environ)
    if overrides:
        data = _merge(data, overrides)
    try:
        cfg = _ADAPTER.validate_python(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = ".".join(str(p) for p in err["loc"])
        raise ConfigError(path, err["msg"]) from None
    cfg.validate()
    return cfg


def load_config(path=None, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Read a YAML config; ``None`` or an empty file gives the defaults."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("", f"config file {path} does not exist")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("", f"cannot parse {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("", "config root must be a mapping")
    return config_from_dict(data, environ)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _ADAPTER.dump_python(cfg, mode="json")


def dump_config(cfg: ExperimentConfig, path=None) -> str:
    text = yaml.safe_dump(config_to_dict(cfg), sort_keys=True)
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsRecord:
    """Aggregate outcome of one policy pair over one seed's evaluation sessions."""

    run_id: str
    seed: int
    policy_main: str
    policy_inshop: str
    gmv_main: float
    gmv_inshop: float
    gmv_total: float
    clicks: int
    purchases: int
    sessions: int

    def __post_init__(self):
        if min(self.gmv_main, self.gmv_inshop) < 0.0:
            raise ValueError("GMV cannot be negative")

    @property
    def pair(self) -> Tuple[str, str]:
        return (self.policy_main, self.policy_inshop)

    def gmv(self, scenario: Optional[str] = None) -> float:
        if scenario is None or scenario == "total":
            return self.gmv_total
        if scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {scenario!r}")
        return getattr(self, f"gmv_{scenario}")


def gmv_gap(x, y, scenario: Optional[str] = None) -> float:
    """Relative GMV growth of ``x`` over ``y``: ``(GMV(x) - GMV(y)) / GMV(y)``.

    Accepts records or plain GMV values; ``scenario`` selects a per-scenario gap.
    """
    gx = x.gmv(scenario) if isinstance(x, MetricsRecord) else float(x)
    gy = y.gmv(scenario) if isinstance(y, MetricsRecord) else float(y)
    if gy <= 0.0:
        raise ValueError("undefined baseline: GMV(y) must be positive")
    return (gx - gy) / gy


def pair_name(pair: Sequence[str]) -> str:
    return f"{pair[0]}+{pair[1]}"


def summarize(records: Sequence[MetricsRecord]) -> dict:
    """Per-pair means over seeds and gaps against EW+EW.

    ``gap_*`` compare seed-averaged GMV; ``gap_total_per_seed`` pairs records
    of equal seed.
    """
    pairs: Dict[Tuple[str, str], List[MetricsRecord]] = {}
    for r in records:
        pairs.setdefault(r.pair, []).append(r)
    base = pairs.get(("EW", "EW"))
    base_by_seed = {r.seed: r for r in base} if base else {}
    out = {"baseline": "EW+EW" if base else None, "pairs": {}}

    def mean(rs, attr):
        return float(np.mean([getattr(r, attr) for r in rs]))

    for pair, rs in pairs.items():
        rs = sorted(rs, key=lambda r: r.seed)
        entry = {
            "seeds": [r.seed for r in rs],
            "sessions": [r.sessions for r in rs],
            "gmv_main": mean(rs, "gmv_main"),
            "gmv_inshop": mean(rs, "gmv_inshop"),
            "gmv_total": mean(rs, "gmv_total"),
            "clicks": mean(rs, "clicks"),
            "purchases": mean(rs, "purchases"),
        }
        if base:
            for scen in ("main", "inshop", "total"):
                entry[f"gap_{scen}"] = gmv_gap(entry[f"gmv_{scen}"], mean(base, f"gmv_{scen}"))
            entry["gap_total_per_seed"] = [gmv_gap(r, base_by_seed[r.seed]) for r in rs if r.seed in base_by_seed]
        out["pairs"][pair_name(pair)] = entry
    return out


def write_metrics_csv(records: Sequence[MetricsRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in (getattr(r, c) for c in CSV_COLUMNS)])
    return path


def read_metrics_csv(path) -> List[MetricsRecord]:
    types = {f.name: f.type for f in dataclasses.fields(MetricsRecord)}
    casts = {"int": int, "float": float, "str": str}
    with open(path, newline="") as fh:
        return [MetricsRecord(**{k: casts[types[k]](v) for k, v in row.items()}) for row in csv.DictReader(fh)]


def emit_metrics(records: Sequence[MetricsRecord], out_dir, stem: str = "metrics") -> Tuple[Path, Path]:
    """Write ``<stem>.csv`` and the JSON summary ``<stem>_summary.json``."""
    if not records:
        raise ValueError("no metrics records to emit")
    out_dir = Path(out_dir)
    csv_path = write_metrics_csv(records, out_dir / f"{stem}.csv")
    summary_path = out_dir / f"{stem}_summary.json"
    summary_path.write_text(json.dumps(summarize(records), indent=2, sort_keys=True) + "\n")
    return csv_path, summary_path


# ---------------------------------------------------------------------------
# orchestration


def make_env(cfg: ExperimentConfig, seed: int = 0):
    """The task environment; the shopping catalog follows the run seed unless pinned."""
    if cfg.task == "beach":
        return BeachEnv(cfg.beach.rho, cfg.beach.n_customers, cfg.beach.random_start)
    catalog = cfg.env.catalog_seed if cfg.env.catalog_seed is not None else seed
    return ShoppingEnv(cfg.env, catalog_seed=catalog)


def make_model(cfg: ExperimentConfig, seed: int) -> MARDPGModel:
    return MARDPGModel.create(cfg.obs_dim, cfg.model.msg_dim, cfg.action_dims, np.random.default_rng([seed, 3]),
                              cfg.model.actor_hidden, cfg.model.critic_hidden)


def train_mardpg(cfg: ExperimentConfig, seed: int, out_dir=None, env=None):
    """Train a fresh model; returns ``(model, log)``. Raises if training aborted."""
    env = env if env is not None else make_env(cfg, seed)
    model = make_model(cfg, seed)
    out = Path(out_dir) if out_dir is not None else None
    log_path = ckpt_dir = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / f"train_seed{seed}.jsonl"
        if cfg.train.checkpoint_every:
            ckpt_dir = out / "checkpoints" / f"seed{seed}"
    records = train([env], model, cfg.train, rng=np.random.default_rng([seed, 4]), log_path=log_path,
                    checkpoint_dir=ckpt_dir, seed=seed)
    tail = records[-3:]
    if len(tail) == 3 and all("aborted" in r for r in tail):
        raise TrainingAbort(f"training stopped after repeated failures: {tail[-1]['aborted']}",
                            {"step": tail[-1]["step"]})
    if out is not None:
        save_model(out / f"model_seed{seed}.npz", model, seed, len(records))
    return model, records


def ew_policies(cfg: ExperimentConfig) -> List[EwPolicy]:
    out = []
    for scen, dim in zip(SCENARIOS, cfg.action_dims):
        w = getattr(cfg.ew, scen)
        out.append(EwPolicy.uniform(dim) if w is None else EwPolicy(np.asarray(w, dtype=np.float64)))
    return out


def train_l2r(cfg: ExperimentConfig, seed: int, env=None) -> List[L2rModel]:
    """Fit one point-wise ranker per scenario on pages served by EW."""
    env = env if env is not None else make_env(cfg, seed)
    ew = ew_policies(cfg)
    logger = PageLogger(len(cfg.action_dims))
    for i in range(cfg.l2r.log_sessions):
        run_session(env, ew, np.random.default_rng([seed, 1, i]), logger=logger)
    models = []
    for k, dim in enumerate(cfg.action_dims):
        model = L2rModel.create(cfg.obs_dim, dim, np.random.default_rng([seed, 2, k]))
        l2r_train(model, logger.data(k), cfg.l2r.epochs, cfg.l2r.batch_size, cfg.l2r.learning_rate,
                  np.random.default_rng([seed, 2, k, 1]))
        models.append(model)
    return models


def _evaluate_chunk(args):
    env, policies, comm, seed, start, stop = args
    gmv = np.zeros(2)
    clicks = purchases = 0
    for i in range(start, stop):
        res = run_session(env, policies, np.random.default_rng([seed, 5, i]), comm=comm)
        gmv += res.gmv
        clicks += res.clicks
        purchases += res.purchases
    return gmv, clicks, purchases


def evaluate_pair(env, policies, comm, seed: int, sessions: int, workers: int = 1):
    """Greedy evaluation over ``sessions`` seeded sessions.

    Session ``i`` of seed ``s`` always draws from the same random stream, so
    pairs are compared on common random numbers.
    """
    bounds = np.linspace(0, sessions, workers + 1).astype(int)
    chunks = [(env, policies, comm, seed, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_evaluate_chunk, chunks))
    else:
        parts = [_evaluate_chunk(c) for c in chunks]
    gmv = sum((p[0] for p in parts), np.zeros(2))
    return gmv, sum(p[1] for p in parts), sum(p[2] for p in parts)


@dataclass
class ExperimentResult:
    records: List[MetricsRecord]
    train_logs: Dict[int, List[dict]]
    models: Dict[int, MARDPGModel]


def _seed_pairs(cfg: ExperimentConfig, pairs) -> List[Tuple[str, str]]:
    return [tuple(p) for p in (pairs if pairs is not None else cfg.eval.pairs)]


def run_experiment(cfg: ExperimentConfig, out_dir=None, seeds: Optional[Sequence[int]] = None,
                   pairs: Optional[Sequence[Sequence[str]]] = None,
                   models: Optional[Mapping[int, MARDPGModel]] = None) -> ExperimentResult:
    """Train what the policy pairs need, then evaluate every pair on every seed.

    Metrics are flushed to ``out_dir`` even when a later seed fails.
    """
    if cfg.task != "shopping":
        raise ConfigError("task", "policy-pair evaluation needs the shopping task")
    seeds = list(seeds if seeds is not None else cfg.eval.seeds)
    pairs = _seed_pairs(cfg, pairs)
    records: List[MetricsRecord] = []
    logs: Dict[int, List[dict]] = {}
    trained: Dict[int, MARDPGModel] = dict(models or {})
    if cfg.eval.sessions == 0:
        log.warning("eval.sessions is 0: no sessions evaluated, metrics are empty")
    try:
        for seed in seeds:
            env = make_env(cfg, seed)
            kinds = {k for p in pairs for k in p}
            pols: Dict[str, list] = {"EW": ew_policies(cfg)}
            if "L2R" in kinds:
                pols["L2R"] = train_l2r(cfg, seed, env)
            if "MARDPG" in kinds:
                if seed not in trained:
                    trained[seed], logs[seed] = train_mardpg(cfg, seed, out_dir, env)
                pols["MARDPG"] = trained[seed].actors
            if cfg.eval.sessions == 0:
                continue
            for pair in pairs:
                policies = [pols[kind][k] for k, kind in enumerate(pair)]
                comm = trained[seed].comm if "MARDPG" in pair else None
                gmv, clicks, purchases = evaluate_pair(env, policies, comm, seed, cfg.eval.sessions,
                                                        cfg.eval.workers)
                records.append(MetricsRecord(
                    f"{cfg.name}-s{seed}-{pair_name(pair)}", int(seed), pair[0], pair[1], float(gmv[0]),
                    float(gmv[1]), float(gmv.sum()), int(clicks), int(purchases), int(cfg.eval.sessions)))
    finally:
        if out_dir is not None and records:
            emit_metrics(records, out_dir)
    return ExperimentResult(records, logs, trained)


def load_models(paths: Mapping[int, str]) -> Dict[int, MARDPGModel]:
    return {int(seed): load_model(p) for seed, p in paths.items()}


# ---------------------------------------------------------------------------
# beach game


def beach_greedy_positions(model: MARDPGModel, env: Optional[BeachEnv] = None) -> Tuple[Tuple[float, float], float]:
    """Play one exploration-free game from the centre start; returns positions and team reward."""
    env = env if env is not None else BeachEnv(random_start=False)
    env.random_start = False
    obs, agent = env.reset(np.random.default_rng(0))
    message = model.comm.reset()
    while True:
        actor = model.actors[agent]
        padded = pad_action(actor.spec, actor.act(message, obs))
        step = env.step(padded)
        message = comm_step(model.comm, obs, padded)
        if step.terminal:
            pos = step.info["positions"]
            return (float(pos[0]), float(pos[1])), float(step.reward)
        obs, agent = step.next_obs, step.next_agent


def beach_oracle(cfg: ExperimentConfig) -> dict:
    res = beach_bruteforce(cfg.beach.rho, cfg.beach.n_customers, cfg.beach.resolution)
    return asdict(res)
