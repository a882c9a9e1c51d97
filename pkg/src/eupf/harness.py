"""
Experiment orchestration: episodes, runs, metrics and on-disk results.

A run is fully determined by its :class:`ExperimentConfig`. One root seed is
split into named numpy streams so changing one component's draws never moves
another's.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import enum
import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from eupf import qnet
from eupf.datapath import Datapath, packet_out_histogram
from eupf.env import DegradationEnv, EnvConfig, PathParams, TriggerMode
from eupf.policy import DQNAgent, DQNConfig, RewardNormalizer, agent_step, random_step

log = logging.getLogger(__name__)

SCHEMA_VERSION = "eupf-run/1"
EPISODE_COLUMNS = ("episode", "total_reward", "reward_rolling10", "mean_rtt_ms", "actions_n6a", "actions_n6b")
STEP_COLUMNS = ("episode", "step", "action", "rtt_ms", "reward")
STREAMS = ("env", "explore", "init", "replay")


class Policy(str, enum.Enum):
    DQN = "dqn"
    RANDOM = "random"


class ConfigError(ValueError):
    pass


def named_streams(seed: int) -> Dict[str, np.random.Generator]:
    return {
        name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        for k, name in enumerate(STREAMS)
    }


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    dqn: DQNConfig = field(default_factory=DQNConfig)
    policy: Policy = Policy.DQN
    episodes: int = 400
    steps_per_episode: int = 60
    seed: int = 0
    teid: int = 100
    reset_each_episode: bool = False
    trace: bool = False
    rolling_window: int = 10
    summary_window: int = 50
    histogram_interval_s: float = 10.0
    output_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        if self.episodes < 1 or self.steps_per_episode < 1:
            raise ConfigError("episodes and steps_per_episode must be >= 1")
        if self.rolling_window < 1 or self.summary_window < 1:
            raise ConfigError("rolling_window and summary_window must be >= 1")
        if not self.histogram_interval_s > 0:
            raise ConfigError("histogram_interval_s must be > 0")
        if not 0 <= self.teid <= 0xFFFFFFFF:
            raise ConfigError("teid must fit in 32 bits")

    def to_dict(self) -> dict:
        """Config echo for summary.json; output_dir is left out so results are location-independent."""
        d = dataclasses.asdict(self)
        d.pop("output_dir")
        return json.loads(json.dumps(d, default=_enum_value))


def _enum_value(o):
    if isinstance(o, enum.Enum):
        return o.value
    raise TypeError(f"not serializable: {o!r}")


@dataclass
class EpisodeRecord:
    episode_index: int
    total_reward: float
    mean_rtt_ms: float
    action_counts: Dict[str, int]
    start_ns: int = 0
    end_ns: int = 0
    step_trace: Optional[List[tuple]] = None

    @property
    def share_n6a(self) -> float:
        n = sum(self.action_counts.values())
        return self.action_counts["n6a"] / n if n else 0.0


@dataclass
class RunResult:
    config: ExperimentConfig
    records: List[EpisodeRecord]
    summary: dict
    datapath: Optional[Datapath] = None
    target_hashes: List[str] = field(default_factory=list)


# -- metrics ------------------------------------------------------------

def rolling_mean(series: Sequence[float], window: int = 10) -> List[float]:
    """Trailing mean; the first ``window - 1`` points average whatever prefix exists."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    x = np.asarray(series, dtype=np.float64)
    return [float(x[max(0, j - window + 1): j + 1].mean()) for j in range(len(x))]


def describe(values: Sequence[float]) -> dict:
    v = list(values)
    return {
        "mean": statistics.fmean(v),
        "sd": statistics.pstdev(v),
        "median": statistics.median(v),
        "min": min(v),
        "max": max(v),
    }


def summarize_last(records: Sequence[EpisodeRecord], n: int = 50) -> dict:
    if n < 1 or n > len(records):
        raise ValueError(f"need 1 <= n <= {len(records)} records, got n={n}")
    tail = records[-n:]
    return {
        "n": n,
        "reward": describe(r.total_reward for r in tail),
        "latency_ms": describe(r.mean_rtt_ms for r in tail),
        "share_n6a": statistics.fmean(r.share_n6a for r in tail),
    }


def compare_runs(run_a: Sequence[EpisodeRecord], run_b: Sequence[EpisodeRecord], window: int = 50, rolling: int = 10) -> dict:
    """Side-by-side latency, reward and action-share report; deltas are b - a."""
    if len(run_a) != len(run_b):
        raise ValueError(f"episode counts differ: {len(run_a)} vs {len(run_b)}")
    window = min(window, len(run_a))

    def side(records):
        rtt = [r.mean_rtt_ms for r in records]
        tail = rtt[-window:]
        return {
            "mean_rtt_ms": statistics.fmean(rtt),
            "last_mean_rtt_ms": statistics.fmean(tail),
            "last_rtt_range_ms": max(tail) - min(tail),
            "last_rtt_min_ms": min(tail),
            "last_rtt_max_ms": max(tail),
            "last_mean_reward": statistics.fmean(r.total_reward for r in records[-window:]),
            "reward_rolling": rolling_mean([r.total_reward for r in records], rolling),
            "share_n6a": [r.share_n6a for r in records],
        }

    a, b = side(run_a), side(run_b)
    scalar_keys = [k for k, v in a.items() if not isinstance(v, list)]
    return {
        "episodes": len(run_a),
        "window": window,
        "a": a,
        "b": b,
        "delta": {k: b[k] - a[k] for k in scalar_keys},
    }


# -- running ------------------------------------------------------------

class _Runner:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        streams = named_streams(config.seed)
        self.env = DegradationEnv(config.env, streams["env"])
        self.datapath = Datapath()
        self.normalizer = RewardNormalizer(0.0, config.env.max_rtt_ms)
        self.explore_rng = streams["explore"]
        self.agent = None
        if config.policy is Policy.DQN:
            self.agent = DQNAgent(config.dqn, self.normalizer, streams["init"], streams["explore"], streams["replay"])


def run_episode(config: ExperimentConfig, runner: _Runner, episode_index: int) -> EpisodeRecord:
    env, datapath, agent = runner.env, runner.datapath, runner.agent
    if config.reset_each_episode and episode_index > 0:
        # keep the clock monotone for the datapath; only the path conditions reset
        clock = env.clock_ms
        env.reset()
        env.clock_ms = clock
    if agent is not None:
        agent.begin_episode(episode_index)

    # first request of the episode goes out one step after the current clock
    start_ns = int(round((env.clock_ms + env.config.step_ms) * 1e6))
    counts = {"n6a": 0, "n6b": 0}
    total_reward = 0.0
    rtts = []
    trace = [] if config.trace else None
    for step in range(config.steps_per_episode):
        if agent is not None:
            res = agent_step(agent, datapath, env, config.teid)
        else:
            res = random_step(runner.explore_rng, runner.normalizer, datapath, env, config.teid)
        counts[res.interface.value] += 1
        total_reward += res.reward
        rtts.append(res.rtt_ms)
        if trace is not None:
            trace.append((step, res.interface.value, res.rtt_ms, res.reward))
    if agent is not None:
        agent.end_episode(episode_index)
    end_ns = int(round(env.clock_ms * 1e6)) + 1
    return EpisodeRecord(
        episode_index, total_reward, statistics.fmean(rtts), counts, start_ns, end_ns, trace
    )


def run_experiment(config: ExperimentConfig) -> RunResult:
    runner = _Runner(config)
    records: List[EpisodeRecord] = []
    target_hashes: List[str] = []
    try:
        for k in range(config.episodes):
            if runner.agent is not None:
                target_hashes.append(qnet.param_hash(runner.agent.target))
            records.append(run_episode(config, runner, k))
            if (k + 1) % 50 == 0:
                log.info("%s seed=%d episode %d/%d reward=%.2f rtt=%.1fms",
                         config.policy.value, config.seed, k + 1, config.episodes,
                         records[-1].total_reward, records[-1].mean_rtt_ms)
    except Exception:
        if config.output_dir and records:
            result = RunResult(config, records, build_summary(config, records, runner.datapath), runner.datapath)
            write_outputs(result, Path(config.output_dir))
            log.error("run aborted after %d episodes; partial results flushed", len(records))
        raise
    result = RunResult(
        config, records, build_summary(config, records, runner.datapath), runner.datapath, target_hashes
    )
    if config.output_dir:
        write_outputs(result, Path(config.output_dir))
        if runner.agent is not None:
            runner.agent.save(Path(config.output_dir) / "qnet.json")
    return result


def build_summary(config: ExperimentConfig, records: List[EpisodeRecord], datapath: Datapath) -> dict:
    n = min(config.summary_window, len(records))
    tail_start = records[-n].start_ns
    hist_all = packet_out_histogram(datapath.maps.packet_out, config.histogram_interval_s)
    hist_tail = packet_out_histogram(
        datapath.maps.packet_out, config.histogram_interval_s, start_ns=tail_start, end_ns=records[-1].end_ns
    )
    return {
        "schema": SCHEMA_VERSION,
        "config": config.to_dict(),
        "episodes": len(records),
        "all_episodes": {
            "mean_reward": statistics.fmean(r.total_reward for r in records),
            "mean_rtt_ms": statistics.fmean(r.mean_rtt_ms for r in records),
            "share_n6a": statistics.fmean(r.share_n6a for r in records),
        },
        "last": summarize_last(records, n),
        "packet_out": {
            "interval_s": config.histogram_interval_s,
            "all": {k: hist_all.get(k) for k in ("intervals", "mean")},
            "last": {k: hist_tail.get(k) for k in ("intervals", "mean")},
        },
    }


# -- persistence --------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_outputs(result: RunResult, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    rewards = [r.total_reward for r in result.records]
    smooth = rolling_mean(rewards, result.config.rolling_window)
    with open(out / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for rec, s in zip(result.records, smooth):
            w.writerow([rec.episode_index, _fmt(rec.total_reward), _fmt(s), _fmt(rec.mean_rtt_ms),
                        rec.action_counts["n6a"], rec.action_counts["n6b"]])
    if result.config.trace:
        with open(out / "steps.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(STEP_COLUMNS)
            for rec in result.records:
                for step, action, rtt, reward in rec.step_trace or ():
                    w.writerow([rec.episode_index, step, action, _fmt(rtt), _fmt(reward)])
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")


def load_episodes(run_dir) -> List[EpisodeRecord]:
    path = Path(run_dir) / "episodes.csv"
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != EPISODE_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            EpisodeRecord(
                int(row["episode"]),
                float(row["total_reward"]),
                float(row["mean_rtt_ms"]),
                {"n6a": int(row["actions_n6a"]), "n6b": int(row["actions_n6b"])},
            )
            for row in reader
        ]


# -- config files -------------------------------------------------------

_PATH_KEYS = {f.name for f in dataclasses.fields(PathParams)}
_DQN_KEYS = {f.name: f.type for f in dataclasses.fields(DQNConfig)}


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an INI file with sections [experiment], [env], [env.path_a], [env.path_b], [dqn], [report].

    Every key is optional; missing keys keep their defaults. Unknown sections
    or keys raise :class:`ConfigError`. ``overrides`` replace top-level
    experiment fields after parsing (None values are ignored).
    """
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return config_from_parser(cp, **overrides)


def config_from_parser(cp: configparser.ConfigParser, **overrides) -> ExperimentConfig:
    known = {"experiment", "env", "env.path_a", "env.path_b", "dqn", "report"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    def section(name, allowed):
        if not cp.has_section(name):
            return {}
        items = dict(cp.items(name))
        bad = set(items) - set(allowed)
        if bad:
            raise ConfigError(f"[{name}] unknown keys: {sorted(bad)}")
        return items

    def num(sec, key, raw, kind=float):
        try:
            if kind is bool:
                return cp.getboolean(sec, key)
            return kind(raw)
        except ValueError:
            raise ConfigError(f"[{sec}] {key}: cannot parse {raw!r} as {kind.__name__}") from None

    try:
        paths = {}
        for name, default in (("env.path_a", EnvConfig().path_a), ("env.path_b", EnvConfig().path_b)):
            items = section(name, _PATH_KEYS)
            paths[name] = dataclasses.replace(default, **{k: num(name, k, v) for k, v in items.items()})

        env_items = section("env", {"max_jitter_ms", "trigger_mode", "step_ms"})
        env_kw = {}
        for k, v in env_items.items():
            env_kw[k] = TriggerMode(v.strip()) if k == "trigger_mode" else num("env", k, v)

        dqn_items = section("dqn", _DQN_KEYS)
        dqn_kw = {}
        for k, v in dqn_items.items():
            kind = int if k in ("batch_size", "replay_capacity", "target_update_episodes", "hidden_units") else float
            dqn_kw[k] = num("dqn", k, v, kind)

        exp_types = {"policy": str, "episodes": int, "steps_per_episode": int, "seed": int,
                     "teid": int, "reset_each_episode": bool, "trace": bool}
        exp_kw = {k: (v.strip() if exp_types[k] is str else num("experiment", k, v, exp_types[k]))
                  for k, v in section("experiment", exp_types).items()}
        rep_types = {"rolling_window": int, "summary_window": int, "histogram_interval_s": float}
        exp_kw.update({k: num("report", k, v, rep_types[k]) for k, v in section("report", rep_types).items()})

        exp_kw.update({k: v for k, v in overrides.items() if v is not None})
        trig = exp_kw.pop("trigger_mode", None)
        if trig is not None:
            env_kw["trigger_mode"] = TriggerMode(trig)
        seed = int(exp_kw.get("seed", 0))
        env = EnvConfig(path_a=paths["env.path_a"], path_b=paths["env.path_b"], seed=seed, **env_kw)
        return ExperimentConfig(env=env, dqn=DQNConfig(**dqn_kw), **exp_kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def default_config(**overrides) -> ExperimentConfig:
    return config_from_parser(configparser.ConfigParser(), **overrides)


def write_default_config(path):
    """Write every tunable with its default value."""
    cfg = ExperimentConfig()
    cp = configparser.ConfigParser()
    cp["experiment"] = {"policy": cfg.policy.value, "episodes": cfg.episodes,
                        "steps_per_episode": cfg.steps_per_episode, "seed": cfg.seed, "teid": cfg.teid,
                        "reset_each_episode": str(cfg.reset_each_episode).lower(),
                        "trace": str(cfg.trace).lower()}
    cp["env"] = {"max_jitter_ms": cfg.env.max_jitter_ms, "trigger_mode": cfg.env.trigger_mode.value,
                 "step_ms": cfg.env.step_ms}
    cp["env.path_a"] = {k: v for k, v in dataclasses.asdict(cfg.env.path_a).items()}
    cp["env.path_b"] = {k: v for k, v in dataclasses.asdict(cfg.env.path_b).items()}
    cp["dqn"] = {k: v for k, v in dataclasses.asdict(cfg.dqn).items()}
    cp["report"] = {"rolling_window": cfg.rolling_window, "summary_window": cfg.summary_window,
                    "histogram_interval_s": cfg.histogram_interval_s}
    with open(path, "w") as fh:
        cp.write(fh)
