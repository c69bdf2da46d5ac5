"""Seeded replication harness for the traditional and dichotomy learners.

Each parameter set draws one perturbed demand intercept; each run inside a
set gets its own child seed, derived from ``(seed, set index, run index,
mode)`` alone. Runs are independent, so they may execute in any order or in
parallel without changing the aggregated output.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from gencoq.baseline_agent import BaselineAgent, build_action_grid
from gencoq.dichotomy_agent import DichotomyAgent, run_search
from gencoq.market_env import GenCoParams, MarketParams, perturb_lambda, profit
from gencoq.nash_oracle import NashPoint, analytic_ne
from gencoq.q_core import LearningParams

MODES = ("dichotomy", "traditional")
_MODE_CODE = {"traditional": 0, "dichotomy": 1}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class DichotomyParams:
    threshold: float = 0.9
    stop_width: float = 8.0
    max_inner_iterations: int = 200
    max_rounds: int = 12
    reward: str = "expected"


@dataclass(frozen=True)
class ExperimentConfig:
    market: MarketParams = field(default_factory=lambda: MarketParams(102.0, 0.04))
    gencos: tuple[GenCoParams, GenCoParams] = (
        GenCoParams(0.001, 2.0, 10000.0, 2000.0, "x"),
        GenCoParams(0.002, 3.0, 11000.0, 1800.0, "y"),
    )
    lambda_spread: float = 2.0
    n_param_sets: int = 4
    n_runs_per_set: int = 20
    n_iterations: int = 500
    mode: str = "both"
    learning: LearningParams = field(default_factory=LearningParams)
    grid_step: float = 50.0
    dichotomy: DichotomyParams = field(default_factory=DichotomyParams)
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("n_param_sets", "n_runs_per_set", "n_iterations", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.mode not in ("traditional", "dichotomy", "both"):
            raise ConfigError("mode", f"expected traditional|dichotomy|both, got {self.mode!r}")
        if self.lambda_spread < 0:
            raise ConfigError("market.lambda_spread", "must be >= 0")
        if not self.grid_step > 0:
            raise ConfigError("traditional.grid_step", "must be > 0")
        if self.seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        d = self.dichotomy
        if not 0 < d.threshold < 1:
            raise ConfigError("dichotomy.threshold", "must be in (0, 1)")
        if not d.stop_width > 0:
            raise ConfigError("dichotomy.stop_width", "must be > 0")
        if d.max_inner_iterations < 1 or d.max_rounds < 1:
            raise ConfigError("dichotomy", "max_inner_iterations and max_rounds must be >= 1")
        if d.reward not in ("expected", "running_max"):
            raise ConfigError("dichotomy.reward", f"unknown reward signal {d.reward!r}")
        for g in self.gencos:
            try:
                build_action_grid(0.0, g.p_max, self.grid_step)
            except ValueError as exc:
                raise ConfigError("traditional.grid_step", str(exc)) from None

    @property
    def modes(self) -> tuple[str, ...]:
        return MODES if self.mode == "both" else (self.mode,)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        """Build a config from the JSON document layout described in the README."""
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        kwargs: dict[str, Any] = {}
        m = doc.get("market", {})
        try:
            if m:
                kwargs["market"] = MarketParams(float(m["lambda"]), float(m["alpha"]))
            if "lambda_spread" in m:
                kwargs["lambda_spread"] = float(m["lambda_spread"])
        except KeyError as exc:
            raise ConfigError(f"market.{exc.args[0]}", "missing") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError("market", str(exc)) from None
        if "gencos" in doc:
            gencos = doc["gencos"]
            if not isinstance(gencos, list) or len(gencos) != 2:
                raise ConfigError("gencos", "exactly two GenCos are required")
            parsed = []
            for i, g in enumerate(gencos):
                try:
                    parsed.append(
                        GenCoParams(
                            float(g["a"]), float(g["b"]), float(g["c"]), float(g["p_max"]),
                            str(g.get("name", "xy"[i])),
                        )
                    )
                except KeyError as exc:
                    raise ConfigError(f"gencos[{i}].{exc.args[0]}", "missing") from None
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"gencos[{i}]", str(exc)) from None
            kwargs["gencos"] = tuple(parsed)
        exp = doc.get("experiment", {})
        for key in ("n_param_sets", "n_runs_per_set", "n_iterations", "seed", "workers"):
            if key in exp:
                kwargs[key] = _int(exp[key], f"experiment.{key}")
        if "mode" in exp:
            kwargs["mode"] = exp["mode"]
        if "learning" in doc:
            kwargs["learning"] = _section(LearningParams, doc["learning"], "learning")
        if "grid_step" in doc.get("traditional", {}):
            kwargs["grid_step"] = float(doc["traditional"]["grid_step"])
        if "dichotomy" in doc:
            kwargs["dichotomy"] = _section(DichotomyParams, doc["dichotomy"], "dichotomy")
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON in {path}: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict[str, Any]:
        return {
            "market": {
                "lambda": self.market.lam,
                "alpha": self.market.alpha,
                "lambda_spread": self.lambda_spread,
            },
            "gencos": [
                {"name": g.name, "a": g.a, "b": g.b, "c": g.c, "p_max": g.p_max}
                for g in self.gencos
            ],
            "experiment": {
                "n_param_sets": self.n_param_sets,
                "n_runs_per_set": self.n_runs_per_set,
                "n_iterations": self.n_iterations,
                "mode": self.mode,
                "seed": self.seed,
            },
            "learning": asdict(self.learning),
            "traditional": {"grid_step": self.grid_step},
            "dichotomy": asdict(self.dichotomy),
        }


def _int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    return int(value)


def _section(cls: type, doc: Any, name: str) -> Any:
    if not isinstance(doc, dict):
        raise ConfigError(name, "expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", "unknown key")
    kinds = {f.name: type(f.default) for f in fields(cls)}
    values = {}
    for key, value in doc.items():
        kind = kinds[key]
        if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = float(value)
        elif kind is int:
            value = _int(value, f"{name}.{key}")
        values[key] = value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from None


def child_seed(seed: int, set_index: int, run_index: int, mode: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, set_index, run_index, _MODE_CODE[mode]])


def parameter_sets(config: ExperimentConfig) -> list[MarketParams]:
    """One perturbed market per set; set ``i`` depends only on ``(seed, i)``."""
    out = []
    for i in range(config.n_param_sets):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, i]))
        out.append(perturb_lambda(config.market, config.lambda_spread, rng))
    return out


@dataclass
class RunMetrics:
    """Per-iteration trajectories of one replication, columns ordered (x, y)."""

    mode: str
    set_index: int
    run_index: int
    actions: np.ndarray
    rewards: np.ndarray
    rounds: np.ndarray | None
    final_bids: tuple[float, float]
    ne: NashPoint

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.rewards, axis=0)

    @property
    def ne_distance(self) -> float:
        return math.hypot(self.final_bids[0] - self.ne.q_x, self.final_bids[1] - self.ne.q_y)

    def within(self, rel: float) -> bool:
        return (
            abs(self.final_bids[0] - self.ne.q_x) <= rel * self.ne.q_x
            and abs(self.final_bids[1] - self.ne.q_y) <= rel * self.ne.q_y
        )


def simulate_traditional(
    config: ExperimentConfig, market: MarketParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, None, tuple[float, float]]:
    gx, gy = config.gencos
    ax = BaselineAgent.from_step(gx, gy, config.grid_step, config.learning)
    ay = BaselineAgent.from_step(gy, gx, config.grid_step, config.learning)
    n = config.n_iterations
    actions = np.empty((n, 2))
    rewards = np.empty((n, 2))
    for t in range(n):
        q_x = ax.act(rng).quantity
        q_y = ay.act(rng).quantity
        r_x = profit(gx, market, q_x, q_y)
        r_y = profit(gy, market, q_y, q_x)
        ax.observe(q_x, q_y, r_x)
        ay.observe(q_y, q_x, r_y)
        actions[t] = q_x, q_y
        rewards[t] = r_x, r_y
    return actions, rewards, None, (ax.greedy_action(), ay.greedy_action())


def simulate_dichotomy(
    config: ExperimentConfig, market: MarketParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, tuple[float, float]]:
    gx, gy = config.gencos
    d = config.dichotomy
    ax = DichotomyAgent.full_range(gx, gy, config.learning, d.reward)
    ay = DichotomyAgent.full_range(gy, gx, config.learning, d.reward)
    n = config.n_iterations
    result = run_search(
        ax, ay, market,
        stop_width=d.stop_width,
        max_rounds=d.max_rounds,
        rng=rng,
        threshold=d.threshold,
        max_inner_iterations=d.max_inner_iterations,
        max_iterations=n,
    )
    bid_x, bid_y = result.final_bid_x, result.final_bid_y
    actions = np.empty((n, 2))
    rewards = np.empty((n, 2))
    rounds = np.empty(n)
    for t, rec in enumerate(result.steps):
        actions[t] = rec.q_x, rec.q_y
        rewards[t] = rec.profit_x, rec.profit_y
        rounds[t] = rec.round_index
    # after the search the GenCos keep bidding the centres of their final ranges
    tail = slice(len(result.steps), n)
    actions[tail] = bid_x, bid_y
    rewards[tail] = profit(gx, market, bid_x, bid_y), profit(gy, market, bid_y, bid_x)
    rounds[tail] = ax.round_index
    return actions, rewards, rounds, (bid_x, bid_y)


_SIMULATORS = {"traditional": simulate_traditional, "dichotomy": simulate_dichotomy}


def run_single(
    config: ExperimentConfig, mode: str, set_index: int, run_index: int, market: MarketParams
) -> RunMetrics:
    rng = np.random.default_rng(child_seed(config.seed, set_index, run_index, mode))
    actions, rewards, rounds, bids = _SIMULATORS[mode](config, market, rng)
    ne = analytic_ne(market, *config.gencos)
    return RunMetrics(mode, set_index, run_index, actions, rewards, rounds, bids, ne)


def _run_task(args: tuple) -> RunMetrics:
    return run_single(*args)


def convergence_iteration(series: Sequence[float], window: int = 50, tol: float = 0.05) -> int | None:
    """First ``t`` whose window ``[t, t + window)`` spans at most ``tol`` of the global range."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("series is empty")
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    spread = x.max() - x.min()
    if spread == 0:
        return 0
    if x.size < window:
        return None
    view = np.lib.stride_tricks.sliding_window_view(x, window)
    ok = np.flatnonzero(view.max(axis=1) - view.min(axis=1) <= tol * spread)
    return int(ok[0]) if ok.size else None


def first_profit_iteration(cumulative: Sequence[float]) -> int | None:
    hits = np.flatnonzero(np.asarray(cumulative, dtype=float) > 0)
    return int(hits[0]) if hits.size else None


@dataclass
class ModeResult:
    """Runs of one mode plus their across-run means (rows: iterations, cols: x, y)."""

    mode: str
    runs: list[RunMetrics]
    mean_action: np.ndarray
    mean_reward: np.ndarray
    mean_cum_reward: np.ndarray
    mean_round: np.ndarray | None

    @classmethod
    def aggregate(cls, mode: str, runs: list[RunMetrics]) -> "ModeResult":
        # fixed summation order keeps the reduction independent of completion order
        runs = sorted(runs, key=lambda r: (r.set_index, r.run_index))
        mean_round = None
        if runs[0].rounds is not None:
            mean_round = np.mean([r.rounds for r in runs], axis=0)
        return cls(
            mode,
            runs,
            np.mean([r.actions for r in runs], axis=0),
            np.mean([r.rewards for r in runs], axis=0),
            np.mean([r.cumulative for r in runs], axis=0),
            mean_round,
        )

    def set_mean_actions(self, set_index: int) -> np.ndarray:
        return np.mean([r.actions for r in self.runs if r.set_index == set_index], axis=0)

    def set_convergence(self, n_sets: int, window: int = 50, tol: float = 0.05) -> list[list[int | None]]:
        return [
            [convergence_iteration(self.set_mean_actions(i)[:, k], window, tol) for k in range(2)]
            for i in range(n_sets)
        ]

    def median_convergence(self, n_sets: int, window: int = 50, tol: float = 0.05) -> float:
        """Median over sets and agents; a trajectory that never settles counts as its length."""
        horizon = self.mean_action.shape[0]
        values = [
            horizon if c is None else c
            for pair in self.set_convergence(n_sets, window, tol)
            for c in pair
        ]
        return float(np.median(values))

    def first_profit(self) -> list[int | None]:
        return [first_profit_iteration(self.mean_cum_reward[:, k]) for k in range(2)]

    def mean_ne_distance(self) -> float:
        return float(np.mean([r.ne_distance for r in self.runs]))

    def fraction_within(self, rel: float = 0.05) -> float:
        return float(np.mean([r.within(rel) for r in self.runs]))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    markets: list[MarketParams]
    modes: dict[str, ModeResult]


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Simulate every (mode, set, run) replication and average per iteration."""
    markets = parameter_sets(config)
    tasks = [
        (config, mode, i, j, markets[i])
        for mode in config.modes
        for i in range(config.n_param_sets)
        for j in range(config.n_runs_per_set)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=4))
    else:
        results = [_run_task(t) for t in tasks]
    modes = {
        mode: ModeResult.aggregate(mode, [r for r in results if r.mode == mode])
        for mode in config.modes
    }
    return ExperimentResult(config, markets, modes)


CSV_COLUMNS = (
    "iteration", "mode", "agent", "mean_action", "mean_reward", "mean_cum_reward", "mean_round",
)


def csv_rows(result: ExperimentResult) -> Iterable[list[str]]:
    names = [g.name or "xy"[k] for k, g in enumerate(result.config.gencos)]
    n = result.config.n_iterations
    for t in range(n):
        for mode in sorted(result.modes):
            m = result.modes[mode]
            for k, name in enumerate(names):
                yield [
                    str(t),
                    mode,
                    name,
                    repr(float(m.mean_action[t, k])),
                    repr(float(m.mean_reward[t, k])),
                    repr(float(m.mean_cum_reward[t, k])),
                    "" if m.mean_round is None else repr(float(m.mean_round[t])),
                ]


def _clean(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return _clean(value.item())
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def summary(result: ExperimentResult, window: int = 50, tol: float = 0.05) -> dict[str, Any]:
    cfg = result.config
    names = [g.name or "xy"[k] for k, g in enumerate(cfg.gencos)]
    doc: dict[str, Any] = {
        "config": cfg.to_dict(),
        "convergence_criterion": {"window": window, "tol": tol},
        "parameter_sets": [
            {"index": i, "lambda": m.lam, "nash": analytic_ne(m, *cfg.gencos).as_dict()}
            for i, m in enumerate(result.markets)
        ],
        "modes": {},
    }
    for mode in sorted(result.modes):
        m = result.modes[mode]
        per_set = m.set_convergence(cfg.n_param_sets, window, tol)
        first = m.first_profit()
        doc["modes"][mode] = {
            "agents": {
                name: {
                    "convergence_iteration": convergence_iteration(m.mean_action[:, k], window, tol),
                    "first_profit_iteration": first[k],
                    "final_mean_action": float(m.mean_action[-1, k]),
                    "final_mean_cum_reward": float(m.mean_cum_reward[-1, k]),
                }
                for k, name in enumerate(names)
            },
            "set_convergence_iterations": per_set,
            "median_convergence_iteration": m.median_convergence(cfg.n_param_sets, window, tol),
            "mean_ne_distance": m.mean_ne_distance(),
            "fraction_within_5pct": m.fraction_within(0.05),
            "runs": [
                {
                    "set": r.set_index,
                    "run": r.run_index,
                    "final_bids": list(r.final_bids),
                    "ne": [r.ne.q_x, r.ne.q_y],
                    "ne_distance": r.ne_distance,
                    "first_profit_iteration": [
                        first_profit_iteration(r.cumulative[:, k]) for k in range(2)
                    ],
                    "convergence_iteration": [
                        convergence_iteration(r.actions[:, k], window, tol) for k in range(2)
                    ],
                }
                for r in m.runs
            ],
        }
    return _clean(doc)


def write_outputs(result: ExperimentResult, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``metrics.csv`` and ``summary.json`` into ``out_dir``."""
    out = Path(out_dir)
    csv_path, json_path = out / "metrics.csv", out / "summary.json"
    try:
        out.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            writer.writerows(csv_rows(result))
        json_path.write_text(json.dumps(summary(result), indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc.strerror or exc}") from exc
    return csv_path, json_path
