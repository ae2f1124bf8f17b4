"""Command-line pipeline: generate -> shapley -> select -> validate -> report.

Every command reads one JSON run configuration and writes under ``--out``::

    data/manifest.json, data/<id>.tsv      training series
    cache/valuations-<optimizer>.jsonl     valuation cache
    shapley/report.json, shapley/table.txt
    select/selection.json
    validate/summary.json, validate/validation.tsv,
    validate/rewards.svg, validate/rewards.tsv,
    validate/beaten.svg, validate/beaten.tsv
    report.txt

Exit codes: 0 success, 1 internal error, 2 I/O error, 3 missing
prerequisite, 4 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .agent import OPTIMIZERS, PID_FORMS, SUCCESS_RULES
from .core import AlgoParams, ShapleyReport, SubsetMask, assemble_report, truncated_action_shapley
from .environments import (
    FAMILIES,
    EnvSpec,
    generate_dataset,
    make_env,
    read_training_point,
    write_training_point,
)
from .selection import ValidationSummary, select_best, select_worst, validate
from .valuation import (
    EndToEndValuation,
    EndToEndValuationConfig,
    ValuationCache,
    cached,
)
from .world_model import TrainConfig

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_IO = 2
EXIT_MISSING = 3
EXIT_CONFIG = 4

MANIFEST_FORMAT = "action-shapley manifest v1"
REPORT_FORMAT = "action-shapley shapley-report v1"
SELECTION_FORMAT = "action-shapley selection v1"
VALIDATION_FORMAT = "action-shapley validation v1"
VALIDATION_MODES = ("reroll", "retune")


class ConfigError(ValueError):
    pass


class MissingPrerequisite(RuntimeError):
    pass


# -- configuration ------------------------------------------------------------


@dataclass
class ValuationSection:
    optimizers: list = field(default_factory=lambda: list(OPTIMIZERS))
    budget: int = 96
    horizon: Optional[int] = None
    repeats: int = 8
    pid_form: str = "direct"
    model_noise: bool = True
    success_rule: str = "within"
    common_noise: bool = True


@dataclass
class ValidationSection:
    episodes: int = 25
    randoms_per_episode: int = 4
    mode: str = "reroll"


@dataclass
class RunConfig:
    """Everything one pipeline run needs.

    ``env`` overrides fields of the family's environment; ``grid`` replaces
    the family's configuration grid (``None`` keeps it). The first entry of
    ``valuation.optimizers`` drives selection and validation; every entry
    gets its own Shapley column.
    """

    family: str = "vm_rightsizing"
    env: dict = field(default_factory=dict)
    grid: Optional[list] = None
    T: int = 256
    seed: int = 0
    algo: dict = field(default_factory=lambda: dataclasses.asdict(AlgoParams()))
    train: dict = field(
        default_factory=lambda: dataclasses.asdict(
            TrainConfig(num_centers=8, width_scale=8.0, linear_tail=True)
        )
    )
    valuation: ValuationSection = field(default_factory=ValuationSection)
    validation: ValidationSection = field(default_factory=ValidationSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        _reject_unknown(data, cls, "")
        data = dict(data)
        for key, section in (("valuation", ValuationSection), ("validation", ValidationSection)):
            if key in data:
                if not isinstance(data[key], dict):
                    raise ConfigError(f"{key} must be an object")
                _reject_unknown(data[key], section, key + ".")
                data[key] = section(**data[key])
        for key, section in (("algo", AlgoParams), ("train", TrainConfig)):
            if key in data:
                if not isinstance(data[key], dict):
                    raise ConfigError(f"{key} must be an object")
                _reject_unknown(data[key], section, key + ".")
                data[key] = {**getattr(cls(), key), **data[key]}
        config = cls(**data)
        config.check()
        return config

    def check(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not isinstance(self.T, int) or not 1 <= self.T <= 1440:
            raise ConfigError("T must be an integer in [1, 1440]")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        v = self.valuation
        if not v.optimizers or any(o not in OPTIMIZERS for o in v.optimizers):
            raise ConfigError(f"valuation.optimizers must be drawn from {OPTIMIZERS}")
        if len(set(v.optimizers)) != len(v.optimizers):
            raise ConfigError("valuation.optimizers has duplicates")
        if v.pid_form not in PID_FORMS:
            raise ConfigError(f"valuation.pid_form must be one of {PID_FORMS}")
        if v.success_rule not in SUCCESS_RULES:
            raise ConfigError(f"valuation.success_rule must be one of {SUCCESS_RULES}")
        if v.budget < 1 or v.repeats < 1 or (v.horizon is not None and v.horizon < 1):
            raise ConfigError("valuation budget, repeats and horizon must be >= 1")
        w = self.validation
        if w.episodes < 1 or w.randoms_per_episode < 0:
            raise ConfigError("validation needs episodes >= 1 and randoms_per_episode >= 0")
        if w.mode not in VALIDATION_MODES:
            raise ConfigError(f"validation.mode must be one of {VALIDATION_MODES}")
        try:
            params = self.algo_params()
            self.train_config()
            env = self.make_env()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if params.min_cardinality >= len(env.grid):
            raise ConfigError("algo.min_cardinality must be below the number of grid points")

    def algo_params(self) -> AlgoParams:
        return AlgoParams(**self.algo)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def make_env(self) -> EnvSpec:
        overrides = dict(self.env)
        if self.grid is not None:
            overrides["grid"] = tuple(tuple(float(x) for x in c) for c in self.grid)
        return make_env(self.family, **overrides)

    def valuation_config(self, env, points, optimizer: str) -> EndToEndValuationConfig:
        v = self.valuation
        return EndToEndValuationConfig(
            env=env,
            points=points,
            train=self.train_config(),
            optimizer=optimizer,
            budget=v.budget,
            horizon=v.horizon,
            seed=self.seed,
            repeats=v.repeats,
            pid_form=v.pid_form,
            model_noise=v.model_noise,
            success_rule=v.success_rule,
            common_noise=v.common_noise,
        )


def _reject_unknown(data: dict, cls, prefix: str) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(prefix + k for k in unknown)}")


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# -- file helpers -------------------------------------------------------------


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_json(path: Path, what: str):
    if not path.exists():
        raise MissingPrerequisite(f"{what} not found at {path}")
    return json.loads(path.read_text())


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# -- generate -----------------------------------------------------------------


def cmd_generate(config: RunConfig, out: Path, **_) -> None:
    env = config.make_env()
    points = generate_dataset(env, T=config.T, seed=config.seed)
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    for p in points:
        write_training_point(data / f"{p.id}.tsv", p)
    _dump(
        data / "manifest.json",
        {
            "format": MANIFEST_FORMAT,
            "config": config.to_dict(),
            "env": env.to_dict(),
            "points": [{"id": p.id, "config": list(p.config), "file": f"{p.id}.tsv"} for p in points],
            "T": config.T,
            "seed": config.seed,
        },
    )
    print(f"wrote {len(points)} training points to {data}")


def _load_dataset(config: RunConfig, out: Path):
    manifest = _load_json(out / "data" / "manifest.json", "dataset manifest (run 'generate' first)")
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"unsupported manifest format {manifest.get('format')!r}")
    env = EnvSpec.from_dict(manifest["env"])
    if env != config.make_env() or manifest["T"] != config.T or manifest["seed"] != config.seed:
        raise ConfigError("dataset was generated with a different configuration; rerun 'generate'")
    points = []
    for entry in manifest["points"]:
        path = out / "data" / entry["file"]
        if not path.exists():
            raise MissingPrerequisite(f"training series missing: {path}")
        points.append(read_training_point(path))
    return env, points


# -- shapley ------------------------------------------------------------------


def _point_worker(args):
    config_dict, env_dict, points, optimizer, k, known = args
    config = RunConfig.from_dict(config_dict)
    env = EnvSpec.from_dict(env_dict)
    store = ValuationCache()
    for rec in known:
        store.put(rec)
    valuation = cached(EndToEndValuation(config.valuation_config(env, points, optimizer)), store)
    result = truncated_action_shapley(valuation, len(points), k, config.algo_params())
    return result, store.records()


def _shapley_column(config, env, points, optimizer, out: Path, jobs: int) -> ShapleyReport:
    n = len(points)
    params = config.algo_params()
    store = ValuationCache(out / "cache" / f"valuations-{optimizer}.jsonl")
    if jobs <= 1:
        valuation = cached(EndToEndValuation(config.valuation_config(env, points, optimizer)), store)
        results = [truncated_action_shapley(valuation, n, k, params) for k in range(n)]
        return assemble_report(results, n, params)
    # workers share nothing; their new records are merged back in point order
    known = store.records()
    tasks = [(config.to_dict(), env.to_dict(), points, optimizer, k, known) for k in range(n)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        outputs = list(pool.map(_point_worker, tasks))
    for _, records in outputs:
        for rec in records:
            store.put(rec)
    return assemble_report([r for r, _ in outputs], n, params)


def format_table(env: EnvSpec, points, reports: dict[str, ShapleyReport]) -> str:
    """Plain-text table with one Action Shapley column per optimizer."""
    names = list(reports)
    first = reports[names[0]]
    eps = first.params.epsilon
    lines = [
        f"Action Shapley values: {env.name} ({env.family}), epsilon = {eps}, "
        f"C_f = {first.params.resolve_c_f(first.n):.6g}",
        "",
    ]
    header = ["point", "configuration"] + [f"AS {_label(o)}" for o in names]
    rows = []
    for i, p in enumerate(points):
        cfg = "(" + ", ".join(f"{x:g}" for x in p.config) + ")"
        cells = []
        for o in names:
            r = reports[o].per_point[i]
            cells.append("ind." if r.indispensable else f"{r.phi:.2f}")
        rows.append([p.id, cfg] + cells)
    rows.append(["cut-off", ""] + [str(reports[o].global_theta) for o in names])
    rows.append(["P_comp", ""] + [f"{100 * reports[o].p_comp:.2f}%" for o in names])
    widths = [max(len(r[c]) for r in [header] + rows) for c in range(len(header))]
    for row in [header] + rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _label(optimizer: str) -> str:
    return {"sacpid_like": "SAC-like", "ppopid_like": "PPO-like"}.get(optimizer, optimizer)


def cmd_shapley(config: RunConfig, out: Path, jobs: int = 1, **_) -> None:
    env, points = _load_dataset(config, out)
    reports = {
        o: _shapley_column(config, env, points, o, out, jobs) for o in config.valuation.optimizers
    }
    primary = config.valuation.optimizers[0]
    _dump(
        out / "shapley" / "report.json",
        {
            "format": REPORT_FORMAT,
            "family": env.family,
            "point_ids": [p.id for p in points],
            "primary": primary,
            "reports": {o: r.to_dict() for o, r in reports.items()},
        },
    )
    table = format_table(env, points, reports)
    (out / "shapley" / "table.txt").write_text(table)
    print(table, end="")


def _load_report(out: Path) -> tuple[dict, ShapleyReport]:
    data = _load_json(out / "shapley" / "report.json", "Shapley report (run 'shapley' first)")
    if data.get("format") != REPORT_FORMAT:
        raise ConfigError(f"unsupported report format {data.get('format')!r}")
    return data, ShapleyReport.from_dict(data["reports"][data["primary"]])


# -- select -------------------------------------------------------------------


def cmd_select(config: RunConfig, out: Path, **_) -> None:
    data, report = _load_report(out)
    ids = data["point_ids"]
    best, worst = select_best(report), select_worst(report)
    payload = {"format": SELECTION_FORMAT, "optimizer": data["primary"], "point_ids": ids}
    for name, outcome in (("best", best), ("worst", worst)):
        entry = outcome.to_dict()
        entry["chosen_ids"] = [ids[i] for i in outcome.chosen.members()]
        payload[name] = entry
    _dump(out / "select" / "selection.json", payload)
    print("best:  " + ", ".join(payload["best"]["chosen_ids"]))
    print("worst: " + ", ".join(payload["worst"]["chosen_ids"]))
    print(f"choice set size: {best.choice_set_size}")


# -- validate -----------------------------------------------------------------


def _write_validation_table(path: Path, summary: ValidationSummary, ids) -> None:
    def names(mask: SubsetMask) -> str:
        return "+".join(ids[i] for i in mask.members())

    lines = ["# " + VALIDATION_FORMAT, "episode\tagent\tsubset\tJ"]
    for e in range(summary.episodes):
        lines.append(f"{e}\tbest\t{names(summary.best)}\t{_fmt(summary.best_J[e])}")
        lines.append(f"{e}\tworst\t{names(summary.worst)}\t{_fmt(summary.worst_J[e])}")
        for r, (m, j) in enumerate(zip(summary.random_masks[e], summary.random_J[e])):
            lines.append(f"{e}\trandom{r}\t{names(m)}\t{_fmt(j)}")
        if summary.baseline_J is not None:
            full = SubsetMask.full(summary.best.n)
            lines.append(f"{e}\tbaseline\t{names(full)}\t{_fmt(summary.baseline_J[e])}")
    path.write_text("\n".join(lines) + "\n")


def _figures(summary: ValidationSummary, folder: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "action-shapley"
    episodes = list(range(1, summary.episodes + 1))
    series = {
        "best": summary.best_J,
        "worst": summary.worst_J,
        "best of random": summary.best_of_random,
    }
    rows = ["episode\t" + "\t".join(series)]
    for e in range(summary.episodes):
        rows.append(f"{e + 1}\t" + "\t".join(_fmt(v[e]) for v in series.values()))
    (folder / "rewards.tsv").write_text("\n".join(rows) + "\n")

    fig, ax = plt.subplots(figsize=(7, 4))
    for (label, values), style in zip(series.items(), ("o-", "s--", "^:")):
        xs = [x for x, v in zip(episodes, values) if v is not None]
        ax.plot(xs, [v for v in values if v is not None], style, label=label, markersize=4)
    ax.set_xlabel("episode")
    ax.set_ylabel("cumulative reward J")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(folder / "rewards.svg", metadata={"Date": None})
    plt.close(fig)

    beaten = [
        sum(j < b for j in row) / len(row) if row else None
        for b, row in zip(summary.best_J, summary.random_J)
    ]
    rows = ["episode\tfraction_beaten"] + [f"{e}\t{_fmt(f)}" for e, f in zip(episodes, beaten)]
    (folder / "beaten.tsv").write_text("\n".join(rows) + "\n")
    fig, ax = plt.subplots(figsize=(7, 3))
    xs = [x for x, f in zip(episodes, beaten) if f is not None]
    ax.bar(xs, [f for f in beaten if f is not None], color="tab:blue")
    overall = summary.fraction_beaten
    if overall is not None:
        ax.axhline(overall, color="k", linestyle="--", linewidth=1, label=f"overall {overall:.2f}")
        ax.legend()
    ax.set_ylim(0, 1)
    ax.set_xlabel("episode")
    ax.set_ylabel("random agents beaten")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(folder / "beaten.svg", metadata={"Date": None})
    plt.close(fig)


def cmd_validate(config: RunConfig, out: Path, baseline: bool = False, **_) -> None:
    data, report = _load_report(out)
    env, points = _load_dataset(config, out)
    valuation = EndToEndValuation(config.valuation_config(env, points, data["primary"]))
    v = config.validation
    score = valuation.episode_score if v.mode == "reroll" else valuation.episode_score_retuned
    summary = validate(
        report,
        score,
        episodes=v.episodes,
        randoms_per_episode=v.randoms_per_episode,
        seed=config.seed,
        baseline=baseline,
    )
    folder = out / "validate"
    folder.mkdir(parents=True, exist_ok=True)
    ids = data["point_ids"]
    payload = summary.to_dict()
    payload.update(format=VALIDATION_FORMAT, mode=v.mode, optimizer=data["primary"])
    payload["best_ids"] = [ids[i] for i in summary.best.members()]
    payload["worst_ids"] = [ids[i] for i in summary.worst.members()]
    _dump(folder / "summary.json", payload)
    _write_validation_table(folder / "validation.tsv", summary, ids)
    _figures(summary, folder, f"{env.family}: best vs worst vs random selections")
    print(_validation_lines(payload))


def _validation_lines(payload: dict) -> str:
    def pct(x):
        return "n/a" if x is None else f"{100 * x:.1f}%"

    return "\n".join(
        [
            f"episodes: {payload['episodes']}",
            f"best >= worst: {pct(payload['best_over_worst'])}",
            f"random agents beaten by best: {pct(payload['fraction_beaten'])}",
            f"random agents outperforming best: {pct(payload['fraction_outperforming'])}",
        ]
    )


# -- report -------------------------------------------------------------------


def cmd_report(config: RunConfig, out: Path, **_) -> None:
    data, _ = _load_report(out)
    table = (out / "shapley" / "table.txt").read_text()
    parts = [table]
    selection = out / "select" / "selection.json"
    if selection.exists():
        sel = json.loads(selection.read_text())
        parts.append(
            "selection ({}): best = {}; worst = {}; choice set size = {}\n".format(
                _label(sel["optimizer"]),
                ", ".join(sel["best"]["chosen_ids"]),
                ", ".join(sel["worst"]["chosen_ids"]),
                sel["best"]["choice_set_size"],
            )
        )
    summary = out / "validate" / "summary.json"
    if summary.exists():
        parts.append("validation:\n" + _validation_lines(json.loads(summary.read_text())) + "\n")
    text = "\n".join(parts)
    (out / "report.txt").write_text(text)
    print(text, end="")


def cmd_print_config(config: RunConfig, **_) -> None:
    print(json.dumps(config.to_dict(), indent=2, sort_keys=True))


COMMANDS = {
    "generate": cmd_generate,
    "shapley": cmd_shapley,
    "select": cmd_select,
    "validate": cmd_validate,
    "report": cmd_report,
    "print-config": cmd_print_config,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="action-shapley", description="Action Shapley training-data selection pipeline."
    )
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", help="JSON run configuration (defaults if omitted)")
    parser.add_argument("--out", default="runs/default", help="output directory")
    parser.add_argument("--seed", type=int, help="override the configuration's seed")
    parser.add_argument(
        "--jobs", type=int, default=os.cpu_count() or 1, help="worker processes for 'shapley'"
    )
    parser.add_argument(
        "--baseline", action="store_true", help="also score the full dataset in 'validate'"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
            config.check()
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        COMMANDS[args.command](config, out=Path(args.out), jobs=args.jobs, baseline=args.baseline)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisite as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
