"""Command-line interface.

Every subcommand accepts ``--config FILE`` (JSON or YAML). Keys are option
names, with dashes or underscores; options given on the command line win.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""
from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import fixtures, harness, plot
from .augment import builtin_pool, save_policy
from .data import infer_meta, load_dataset, split_train_valid, target_input_shape
from .errors import AnytimeError, ConfigError, DataError, DivergenceError
from .metrics import AlcConfig
from .model import load_checkpoint
from .search import SearchConfig, search_policies
from .trainer import AugmentMode, TrainerConfig


def _exit_code(exc):
    if isinstance(exc, DivergenceError):
        return 4
    if isinstance(exc, DataError):
        return 3
    if isinstance(exc, ConfigError):
        return 2
    return 1


def _load_config(ctx, param, value):
    if value is None:
        return value
    path = Path(value)
    try:
        text = path.read_text()
    except OSError as exc:
        raise click.BadParameter(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise click.BadParameter(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise click.BadParameter(f"{path}: expected a mapping at top level")
    known = {p.name for p in ctx.command.params}
    flat = {}
    for key, val in doc.items():
        name = str(key).replace("-", "_")
        if name not in known and name.lower() in known:
            name = name.lower()
        if name not in known:
            raise click.BadParameter(f"{path}: unknown option {key!r}")
        if isinstance(val, (list, tuple)) and name == "widths":
            val = ",".join(str(v) for v in val)
        flat[name] = val
    ctx.default_map = {**(ctx.default_map or {}), **flat}
    return value


config_option = click.option(
    "--config", type=click.Path(dir_okay=False), callback=_load_config, is_eager=True,
    expose_value=False, help="JSON or YAML file of option values.",
)


def _widths(value):
    try:
        widths = tuple(int(v) for v in str(value).split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --widths {value!r}") from exc
    return widths


def _seeds(text):
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ConfigError(f"no seeds in {text!r}")
    return out


def trainer_options(f):
    opts = [
        click.option("--base-lr", type=float, default=TrainerConfig.base_lr, show_default=True),
        click.option("--momentum", type=float, default=TrainerConfig.momentum, show_default=True),
        click.option("--weight-decay", type=float, default=TrainerConfig.weight_decay),
        click.option("--tau", type=float, default=TrainerConfig.tau, show_default=True,
                     help="Softmax annealing temperature; 1 disables annealing."),
        click.option("--batch-size", type=int, default=TrainerConfig.batch_size,
                     show_default=True),
        click.option("--warmup-epochs", type=int, default=TrainerConfig.warmup_epochs,
                     show_default=True),
        click.option("--plateau-window", type=int, default=TrainerConfig.plateau_window,
                     show_default=True),
        click.option("--plateau-factor", type=float, default=TrainerConfig.plateau_factor,
                     show_default=True),
        click.option("--search-trigger", type=float, default=TrainerConfig.search_trigger_nauc,
                     show_default=True, help="Validation NAUC that triggers the search."),
        click.option("--widths", default="16,32", show_default=True,
                     help="Comma-separated conv block widths."),
        click.option("--workers", type=int, default=TrainerConfig.workers, show_default=True,
                     help="Augmentation worker threads."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def search_options(f):
    opts = [
        click.option("--C", "c", type=int, default=SearchConfig.C, show_default=True,
                     help="Sub-policies per candidate."),
        click.option("--T", "t", type=int, default=SearchConfig.T, show_default=True,
                     help="Candidates evaluated."),
        click.option("--N", "n", type=int, default=SearchConfig.N, show_default=True,
                     help="Top candidates united into the policy."),
        click.option("--eval-repeats", type=int, default=SearchConfig.eval_repeats),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _trainer_cfg(kw, seed):
    return TrainerConfig(
        base_lr=kw["base_lr"], momentum=kw["momentum"], weight_decay=kw["weight_decay"],
        tau=kw["tau"], batch_size=kw["batch_size"], warmup_epochs=kw["warmup_epochs"],
        plateau_window=kw["plateau_window"], plateau_factor=kw["plateau_factor"],
        search_trigger_nauc=kw["search_trigger"], widths=_widths(kw["widths"]),
        workers=kw["workers"], seed=seed,
    )


def _search_cfg(kw, seed):
    return SearchConfig(C=kw["c"], T=kw["t"], N=kw["n"], eval_repeats=kw["eval_repeats"],
                        seed=seed)


def _run_cfg(kw):
    return harness.RunConfig(
        dataset=kw["dataset"], test=kw["test"], out=kw["out"], budget=kw["budget"],
        t0=kw["t0"], mode=kw["mode"], seed=kw["seed"], valid_fraction=kw["valid_fraction"],
        warmstart=kw["warmstart"], clock=kw["clock"],
        trainer=_trainer_cfg(kw, kw["seed"]), search=_search_cfg(kw, kw["seed"]),
    )


def run_options(f):
    opts = [
        click.option("--dataset", required=True, type=click.Path(file_okay=False),
                     help="Training dataset directory."),
        click.option("--test", type=click.Path(file_okay=False), default=None,
                     help="Test dataset directory [default: sibling 'test']."),
        click.option("--out", type=click.Path(file_okay=False), default="run",
                     show_default=True),
        click.option("--budget", type=float, default=1200.0, show_default=True,
                     help="Time budget in seconds."),
        click.option("--t0", type=float, default=60.0, show_default=True),
        click.option("--mode", type=click.Choice([m.value for m in AugmentMode]),
                     default="searched", show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--valid-fraction", type=float, default=0.2, show_default=True),
        click.option("--warmstart", type=click.Path(dir_okay=False), default=None,
                     help="Checkpoint whose body initialises the network."),
        click.option("--clock", type=click.Choice(sorted(harness.CLOCKS)), default="wall",
                     show_default=True, help="Clock charged against the budget."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose):
    """Anytime image classification: budgeted runs, scoring, search and ablations."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@config_option
@run_options
@trainer_options
@search_options
def run(**kw):
    """Train under a time budget, writing a snapshot per epoch, then score."""
    report = harness.run(_run_cfg(kw))
    click.echo(json.dumps({
        "alc": report.alc,
        "alc_rescored": report.alc_rescored,
        "final_nauc": None if np.isnan(report.final_nauc) else report.final_nauc,
        "snapshots": len(report.curve),
        "out": report.out,
    }))


@main.command()
@config_option
@click.argument("snapshot_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--labels", required=True, type=click.Path(exists=True, file_okay=False),
              help="Test dataset directory holding labels.csv.")
@click.option("--budget", type=float, default=1200.0, show_default=True)
@click.option("--t0", type=float, default=60.0, show_default=True)
@click.option("--curve", "curve_out", type=click.Path(dir_okay=False), default=None,
              help="Also write the reconstructed curve as CSV.")
def score(snapshot_dir, labels, budget, t0, curve_out):
    """Score saved snapshots offline against test labels."""
    result = harness.score_predictions(snapshot_dir, labels, AlcConfig(budget, t0))
    if curve_out:
        harness.export_curve(result["curve"], curve_out)
    click.echo(json.dumps({"alc": result["alc"], "snapshots": len(result["files"])}))


@main.command()
@config_option
@click.option("--dataset", required=True, type=click.Path(file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False),
              help="Trained model to score candidates with.")
@click.option("--out", type=click.Path(dir_okay=False), default="policy.json",
              show_default=True)
@click.option("--report", type=click.Path(dir_okay=False), default=None,
              help="Write the full search trace here.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--valid-fraction", type=float, default=0.2, show_default=True)
@click.option("--tau", type=float, default=TrainerConfig.tau, show_default=True)
@search_options
def search(dataset, checkpoint, out, report, seed, valid_fraction, tau, **kw):
    """Search augmentation policies for a trained checkpoint."""
    ds = load_dataset(dataset)
    train, valid = split_train_valid(ds, valid_fraction, seed)
    spec = target_input_shape(infer_meta(train))
    model = load_checkpoint(checkpoint).to_model()
    if model.arch.num_classes != ds.num_classes:
        raise ConfigError("checkpoint head does not match the dataset's class count")
    model.spec = spec
    result = search_policies(_search_cfg(kw, seed), model, train, valid, builtin_pool(), tau=tau)
    policy = result.policy()
    if policy is not None:
        save_policy(policy, out)
    if report:
        Path(report).write_text(json.dumps(result.to_json(), indent=1))
    click.echo(json.dumps({
        "baseline": result.baseline_score,
        "kept": result.candidates_kept,
        "selected": len(result.selected),
        "policy": out if policy is not None else None,
    }))


@main.command()
@config_option
@run_options
@trainer_options
@search_options
@click.option("--axis", "axes", multiple=True,
              help="Grid axis KEY=V1,V2,... (e.g. trainer.tau=1,8 or mode=searched,none).")
@click.option("--seeds", default="0", show_default=True, help="e.g. 0-9 or 0,3,5")
def ablate(axes, seeds, **kw):
    """Run the cross product of grid axes and seeds; write summary.json and a boxplot."""
    kw["seed"] = 0
    base = _run_cfg(kw)
    grid_axes = []
    for axis in axes:
        key, sep, values = axis.partition("=")
        if not sep or not values:
            raise ConfigError(f"bad --axis {axis!r}; expected KEY=V1,V2")
        key = _axis_key(key.strip())
        grid_axes.append([(key, _coerce(v)) for v in values.split(",")])
    for cell in itertools.product(*grid_axes):
        harness.with_overrides(base, dict(cell))  # fail fast on bad keys or values
    grid = [dict(cell) for cell in itertools.product(*grid_axes)] if grid_axes else [{}]
    summary = harness.ablation(base, grid, _seeds(seeds), kw["out"])
    for cell in summary["cells"]:
        click.echo(f'{cell["name"]}: mean ALC {cell["alc_mean"]} median {cell["alc_median"]} '
                   f'errors {len(cell["errors"])}')


def _axis_key(key):
    """Qualify a bare trainer or search field name, e.g. ``tau`` -> ``trainer.tau``."""
    if "." in key or key in {f.name for f in dataclasses.fields(harness.RunConfig)}:
        return key
    for section, cls in (("trainer", TrainerConfig), ("search", SearchConfig)):
        if key in {f.name for f in dataclasses.fields(cls)}:
            return f"{section}.{key}"
    raise ConfigError(f"unknown grid axis {key!r}")


def _coerce(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


@main.command("gen-fixture")
@config_option
@click.argument("out", type=click.Path(file_okay=False))
@click.option("--task", type=click.Choice(sorted(fixtures.TASKS)), default="shapes",
              show_default=True)
@click.option("--n-train", type=int, default=2000, show_default=True)
@click.option("--n-test", type=int, default=500, show_default=True)
@click.option("--size", type=int, default=16, show_default=True)
@click.option("--noise", type=float, default=14.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def gen_fixture(out, task, n_train, n_test, size, noise, seed):
    """Write a synthetic dataset as OUT/train and OUT/test."""
    sums = fixtures.write_fixture(out, n_train=n_train, n_test=n_test, seed=seed, size=size,
                                  task=task, noise=noise)
    click.echo(json.dumps(sums))


@main.command("plot")
@config_option
@click.argument("reports", nargs=-1, type=click.Path(exists=True))
@click.option("--out", type=click.Path(dir_okay=False), default="curve.svg", show_default=True)
@click.option("--summary", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Ablation summary.json: draw an ALC boxplot instead.")
@click.option("--budget", type=float, default=None, help="x-axis extent in seconds.")
@click.option("--label", "labels", multiple=True, help="Legend label per report, in order.")
def plot_cmd(reports, out, summary, budget, labels):
    """Step-plot learning curves of run reports (or box-plot an ablation summary)."""
    if summary:
        doc = json.loads(Path(summary).read_text())
        groups = [(c["name"], [r["alc"] for r in c["runs"]]) for c in doc["cells"]]
        plot.render_boxplot(groups, out)
    else:
        if not reports:
            raise click.UsageError("give at least one report (or --summary)")
        loaded = [harness.load_report(r) for r in reports]
        names = list(labels) if labels else [Path(r).name for r in reports]
        if len(names) != len(loaded):
            raise click.UsageError("--label must be given once per report")
        plot.render_plot(loaded, out, labels=names, budget=budget)
    click.echo(out)


def entry(argv=None):
    """Console entry point that maps package errors to exit codes."""
    try:
        rv = main.main(args=argv, prog_name="anytimecv", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except AnytimeError as exc:
        click.echo(f"error: {exc}", err=True)
        return _exit_code(exc)
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(entry())
