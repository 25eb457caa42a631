"""Command-line interface for moescale."""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Optional

import click
import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from .architecture import PRESETS, ArchitectureSpec, count_params, derive_uv_scaling, plan_sweep
from .curves import CURVE_TARGETS, emit_curve
from .datastore import DEFAULT_GRID, generate_campaign, ingest
from .errors import MoeScaleError
from .fitter import OBJECTIVES, FitOptions, fit_baseline, fit_joint, fit_sub_law, staged_fit_pipeline
from .laws import FactorPoint, LawForm, BaselineId, eval_joint_gradient, eval_joint_loss
from .optimizer import (
    DEFAULT_D,
    compute_optimal_frontier,
    optima_report,
    optimal_G,
    optimal_S,
    practical_range_G,
    practical_range_S,
)
from .registry import BUILTIN_LABEL, ConstantsRegistry, load_constants_file
from .reports import MAINSTREAM_MODELS, format_count, parse_count, parse_model_spec, render_table

# Configure console with a wider width
console = Console(width=120)
err_console = Console(stderr=True, width=120)

LAWS = [form.value for form in LawForm] + [b.value for b in BaselineId] + ["staged"]


class CountType(click.ParamType):
    """Raw counts written as 1e9, 2400000000 or with a K/M/B/T suffix."""

    name = "count"

    def convert(self, value, param, ctx):
        if isinstance(value, float):
            return value
        try:
            return parse_count(value)
        except MoeScaleError as e:
            self.fail(str(e), param, ctx)


class FloatListType(click.ParamType):
    """Comma-separated numbers, suffixes allowed."""

    name = "list"

    def convert(self, value, param, ctx):
        if isinstance(value, list):
            return value
        try:
            return [parse_count(item) for item in str(value).split(",") if item.strip()]
        except MoeScaleError as e:
            self.fail(str(e), param, ctx)


COUNT = CountType()
FLOAT_LIST = FloatListType()


def _clean(value: Any) -> Any:
    """Make a payload JSON-safe: numpy to builtins, NaN to null."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def _emit_json(payload: Any):
    click.echo(json.dumps(_clean(payload), indent=2))


def _print_mapping(title: str, mapping: Dict[str, Any]):
    table = Table(show_header=True, title=title)
    table.add_column("Quantity", min_width=15)
    table.add_column("Value", min_width=15)
    for key, value in mapping.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        table.add_row(str(key), str(value))
    console.print(table)


def _configure_logging(verbose: int):
    level = logging.DEBUG if verbose else logging.WARNING
    logger = logging.getLogger("moescale")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = RichHandler(console=err_console, show_time=False, show_path=False)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False


def _report_error(ctx: click.Context, error: MoeScaleError):
    if ctx.find_root().meta.get("moescale.output") == "json":
        click.echo(json.dumps(_clean(error.to_dict())), err=True)
    else:
        precondition = f" (precondition: {error.precondition})" if error.precondition else ""
        err_console.print(f"[red]{type(error).__name__}: {escape(str(error) + precondition)}[/red]")


class MoeScaleGroup(click.Group):
    """Click group turning library errors into exit status 1 with a diagnostic."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except MoeScaleError as e:
            _report_error(ctx, e)
            ctx.exit(1)


def _remember_output(ctx, param, value):
    ctx.find_root().meta["moescale.output"] = value
    return value


def output_option(default: str = "human", choices=("human", "json", "csv")):
    return click.option(
        "--output", "output", type=click.Choice(choices), default=default, show_default=True,
        callback=_remember_output, is_eager=True, help="Output mode.",
    )


def constants_option(f):
    return click.option(
        "--constants", "constants_ref", default=BUILTIN_LABEL, show_default=True,
        help="Registry label or path to a constants JSON file.",
    )(f)


def _constants(ctx: click.Context, ref: str):
    return ctx.obj["registry"].resolve(ref)


@click.group(cls=MoeScaleGroup)
@click.option("-v", "--verbose", count=True, help="Show debug logging on stderr.")
@click.option("--registry-dir", type=click.Path(file_okay=False), default=None,
              help="Constants registry directory (default: $MOESCALE_REGISTRY_DIR or ~/.config/moescale/constants).")
@click.pass_context
def cli(ctx, verbose: int, registry_dir: Optional[str]):
    """moescale - Joint MoE scaling law: predict, fit and optimise."""
    _configure_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["registry"] = ConstantsRegistry(registry_dir)


@cli.command(name="predict")
@click.option("--N", "N", type=COUNT, required=True, help="Total parameters.")
@click.option("--D", "D", type=COUNT, required=True, help="Training tokens.")
@click.option("--Na", "Na", type=COUNT, required=True, help="Activated parameters.")
@click.option("--G", "G", type=float, required=True, help="Activated experts.")
@click.option("--S", "S", type=float, required=True, help="Shared-expert ratio.")
@click.option("--gradient", is_flag=True, help="Also report partial derivatives.")
@constants_option
@output_option()
@click.pass_context
def predict(ctx, N, D, Na, G, S, gradient, constants_ref, output):
    """Predict validation loss at one configuration."""
    constants = _constants(ctx, constants_ref)
    point = FactorPoint(N=N, D=D, Na=Na, G=G, S=S)
    payload = {"point": point.to_dict(), "loss": eval_joint_loss(constants, point)}
    if gradient:
        payload["gradient"] = eval_joint_gradient(constants, point).to_dict()
    if output == "json":
        _emit_json(payload)
    elif output == "csv":
        click.echo("N,D,Na,G,S,loss")
        click.echo(",".join(repr(float(v)) for v in list(point.to_dict().values()) + [payload["loss"]]))
    else:
        console.print(f"Predicted loss: [green]{payload['loss']:.4f}[/green]")
        if gradient:
            _print_mapping("Partial derivatives", payload["gradient"])


@cli.command(name="fit")
@click.option("--input", "--from-json", "input_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Campaign file (CSV or JSON).")
@click.option("--law", type=click.Choice(LAWS), default="joint", show_default=True)
@click.option("--objective", type=click.Choice(OBJECTIVES), default="huber", show_default=True)
@click.option("--huber-delta", type=float, default=0.01, show_default=True)
@click.option("--starts", type=int, default=16, show_default=True)
@click.option("--max-iterations", type=int, default=500, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--holdout/--no-holdout", default=False, help="Exclude tier=validation records and report their error.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--save", "save_label", default=None, help="Save fitted joint constants under this registry label.")
@click.option("--residuals", "residuals_path", type=click.Path(dir_okay=False), default=None,
              help="Write the per-record residual CSV here.")
@constants_option
@output_option()
@click.pass_context
def fit(ctx, input_path, law, objective, huber_delta, starts, max_iterations, seed, holdout, workers,
        save_label, residuals_path, constants_ref, output):
    """Fit a law to experiment records."""
    reference = _constants(ctx, constants_ref)
    campaign = ingest(input_path)
    options = FitOptions(
        objective=objective, huber_delta=huber_delta, starts=starts, max_iterations=max_iterations,
        seed=seed, holdout=holdout, workers=workers,
    )
    staged = None
    if law == "staged":
        staged = staged_fit_pipeline(campaign.records, options, reference=reference)
        result = staged.joint
    elif law == LawForm.JOINT.value:
        result = fit_joint(campaign.records, options, reference=reference)
    elif law in (b.value for b in BaselineId):
        result = fit_baseline(law, campaign.records, options)
    else:
        result = fit_sub_law(law, campaign.records, options)

    if residuals_path:
        result.to_csv(residuals_path)
    if save_label:
        if result.constants is None:
            raise click.UsageError("--save needs a joint or staged fit")
        ctx.obj["registry"].save(save_label, result.constants, {"source": str(input_path), "law": law})

    payload = staged.to_dict() if staged else result.to_dict()
    if output == "json":
        _emit_json(payload)
    elif output == "csv":
        click.echo(result.to_csv(), nl=False)
    else:
        _print_mapping(f"Fitted {result.law}", result.params)
        metrics = {"records": len(result.record_ids), "mean abs error": result.mean_abs_error,
                   "objective": result.objective, "converged": result.converged,
                   "best start": f"{result.start_index} of {len(result.start_objectives)}"}
        if result.holdout_mae is not None:
            metrics["held-out MAE"] = result.holdout_mae
        _print_mapping("Fit quality", metrics)
        for message in result.warnings + (staged.warnings if staged else []):
            console.print(f"[yellow]{message}[/yellow]")


@cli.command(name="optimal")
@click.option("--what", type=click.Choice(["G", "S", "ratio", "all"]), default="all", show_default=True)
@click.option("--N", "N", type=COUNT, default=None, help="Total parameters (needed for ratios).")
@click.option("--G", "G", type=float, default=None, help="Activated experts (default: optimum).")
@click.option("--S", "S", type=float, default=None, help="Shared-expert ratio (default: optimum).")
@click.option("--threshold", type=float, default=0.001, show_default=True)
@click.option("--D", "D", type=COUNT, default=DEFAULT_D, show_default=True)
@constants_option
@output_option()
@click.pass_context
def optimal(ctx, what, N, G, S, threshold, D, constants_ref, output):
    """Optimal G, S and activation ratio."""
    constants = _constants(ctx, constants_ref)
    if what == "G":
        payload = {"G_opt": optimal_G(constants)}
    elif what == "S":
        payload = {"S_opt": optimal_S(constants)}
    elif N is None and what == "ratio":
        raise click.UsageError("--N is required for --what ratio")
    elif N is None:
        payload = {"G_opt": optimal_G(constants), "S_opt": optimal_S(constants)}
    else:
        payload = optima_report(constants, N, threshold=threshold, G=G, S=S, D=D).to_dict()
    if output == "json":
        _emit_json(payload)
    elif output == "csv":
        click.echo(",".join(payload))
        click.echo(",".join("" if v is None else repr(v) for v in payload.values()))
    elif len(payload) == 1:
        (name, value), = payload.items()
        console.print(f"{name} = [green]{value:.3f}[/green]" if name == "G_opt" else f"{name} = [green]{value:.4f}[/green]")
    else:
        _print_mapping("Optima", payload)


@cli.command(name="range")
@click.option("--N", "N", type=COUNT, required=True)
@click.option("--Na", "Na", type=COUNT, required=True)
@click.option("--threshold", type=float, default=0.001, show_default=True)
@click.option("--factor", type=click.Choice(["G", "S", "both"]), default="both", show_default=True)
@constants_option
@output_option()
@click.pass_context
def practical_range(ctx, N, Na, threshold, factor, constants_ref, output):
    """Practical ranges of G and S within a loss threshold of the optimum."""
    constants = _constants(ctx, constants_ref)
    payload = {}
    if factor in ("G", "both"):
        payload["G"] = practical_range_G(constants, N, Na, threshold).to_dict()
    if factor in ("S", "both"):
        payload["S"] = practical_range_S(constants, N, Na, threshold).to_dict()
    if output == "json":
        _emit_json(payload)
    elif output == "csv":
        click.echo("factor,lo,hi,clipped")
        for name, r in payload.items():
            click.echo(f"{name},{r['lo']!r},{r['hi']!r},{r['clipped']}")
    else:
        table = Table(show_header=True, title=f"Practical ranges (threshold {threshold:g})")
        table.add_column("Factor")
        table.add_column("Range")
        table.add_column("Clipped")
        for name, r in payload.items():
            digits = 2 if name == "G" else 3
            table.add_row(name, f"[{r['lo']:.{digits}f}, {r['hi']:.{digits}f}]", "yes" if r["clipped"] else "no")
        console.print(table)


@cli.command(name="frontier")
@click.option("--N", "N", type=COUNT, default=1e12, show_default=True)
@click.option("--G", "G", type=float, default=7.0, show_default=True)
@click.option("--S", "S", type=float, default=0.31, show_default=True)
@click.option("--c-min", type=COUNT, default=1e18, show_default=True)
@click.option("--c-max", type=COUNT, default=1e22, show_default=True)
@click.option("--points", type=int, default=41, show_default=True)
@constants_option
@output_option()
@click.pass_context
def frontier(ctx, N, G, S, c_min, c_max, points, constants_ref, output):
    """Compute-optimal loss frontier at fixed N, G and S."""
    if not (0 < c_min < c_max) or points < 2:
        raise click.BadParameter("need 0 < c-min < c-max and at least 2 points")
    constants = _constants(ctx, constants_ref)
    result = compute_optimal_frontier(constants, N, G, S, np.geomspace(c_min, c_max, points))
    if output == "json":
        _emit_json(result.to_dict())
    elif output == "csv":
        click.echo("C,Na_star,D_star,L_star,error")
        for p in result.points:
            click.echo(f"{p.C!r},{p.Na_star!r},{p.D_star!r},{p.L_star!r},{p.error or ''}")
    else:
        table = Table(show_header=True, title=f"Compute-optimal frontier at N={format_count(N)}")
        for column in ("C", "Na*", "D*", "L*"):
            table.add_column(column)
        for p in result.points:
            if p.error:
                table.add_row(f"{p.C:.3g}", f"[red]{p.error}[/red]", "", "")
            else:
                table.add_row(f"{p.C:.3g}", format_count(p.Na_star, 2), format_count(p.D_star, 2), f"{p.L_star:.4f}")
        console.print(table)
        console.print(f"C0 = {result.C0:.4f}")
        if result.summary:
            s = result.summary
            console.print(f"L*(C) ~ {s.offset:.4f} + {s.coefficient:.4g} * C^{s.exponent:.4f}")


def _spec_options(f):
    options = [
        click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None, help="Named architecture."),
        click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="Architecture JSON file."),
        click.option("--layers", type=int, default=None),
        click.option("--d-hidden", type=int, default=None),
        click.option("--d-head", type=int, default=None),
        click.option("--n-h", type=int, default=None),
        click.option("--d-expert", type=int, default=None),
        click.option("--n-e", type=int, default=None),
        click.option("--n-k", type=int, default=None),
        click.option("--n-s", type=int, default=None),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _resolve_spec(preset, spec_path, fields: Dict[str, Optional[int]]) -> ArchitectureSpec:
    overrides = {k: v for k, v in fields.items() if v is not None}
    if preset:
        return PRESETS[preset].replace(**overrides)
    if spec_path:
        with open(spec_path, "r") as f:
            data = json.load(f)
        data.update(overrides)
        return ArchitectureSpec.from_dict(data)
    if not overrides:
        raise click.UsageError("give --preset, --spec or the architecture fields")
    return ArchitectureSpec.from_dict(overrides)


@cli.command(name="arch")
@_spec_options
@click.option("--u", "u", type=float, default=None, help="Expert-dim scale at fixed total size.")
@output_option()
def arch(preset, spec_path, layers, d_hidden, d_head, n_h, d_expert, n_e, n_k, n_s, u, output):
    """Parameter counts and law factors of an architecture."""
    spec = _resolve_spec(preset, spec_path, dict(
        layers=layers, d_hidden=d_hidden, d_head=d_head, n_h=n_h, d_expert=d_expert, n_e=n_e, n_k=n_k, n_s=n_s))
    if u is not None:
        spec = derive_uv_scaling(spec, u)
    counts = count_params(spec)
    payload = {"spec": spec.to_dict(), "counts": counts.to_dict()}
    if output == "json":
        _emit_json(payload)
    elif output == "csv":
        row = {**spec.to_dict(), **counts.to_dict()}
        click.echo(",".join(row))
        click.echo(",".join(repr(v) for v in row.values()))
    else:
        _print_mapping("Architecture", spec.to_dict())
        console.print(f"N = {counts.N:,.0f} ({format_count(counts.N, 2)}), Na = {counts.Na:,.0f} "
                      f"({format_count(counts.Na, 2)}), G = {counts.G:g}, S = {counts.S:.4g}")


@cli.command(name="sweep")
@_spec_options
@click.option("--target", type=click.Choice(["G", "S", "Na", "N", "D"]), required=True)
@click.option("--levels", type=FLOAT_LIST, required=True, help="Comma-separated factor levels.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Write the plan CSV here.")
@output_option()
def sweep(preset, spec_path, layers, d_hidden, d_head, n_h, d_expert, n_e, n_k, n_s, target, levels, out_path, output):
    """Plan a controlled-variable sweep of one factor."""
    base = _resolve_spec(preset, spec_path, dict(
        layers=layers, d_hidden=d_hidden, d_head=d_head, n_h=n_h, d_expert=d_expert, n_e=n_e, n_k=n_k, n_s=n_s))
    plan = plan_sweep(base, target, levels)
    if out_path:
        plan.to_csv(out_path)
    if output == "json":
        _emit_json(plan.to_dict())
    elif output == "csv":
        click.echo(plan.to_csv(), nl=False)
    else:
        frame = plan.to_frame()
        table = Table(show_header=True, title=f"{target} sweep")
        for column in frame.columns:
            table.add_column(str(column))
        for row in frame.itertuples(index=False):
            table.add_row(*[f"{v:.6g}" if isinstance(v, float) else str(v) for v in row])
        console.print(table)


@cli.command(name="campaign")
@click.option("--sigma", type=float, default=0.0, show_default=True, help="Gaussian noise std on losses.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write the campaign here (.csv or .json).")
@constants_option
@output_option()
@click.pass_context
def campaign(ctx, sigma, seed, out_path, constants_ref, output):
    """Generate a synthetic 446-record campaign from the joint law."""
    constants = _constants(ctx, constants_ref)
    result = generate_campaign(constants, DEFAULT_GRID, sigma=sigma, seed=seed)
    if out_path:
        if Path(out_path).suffix.lower() == ".json":
            result.to_json(out_path)
        else:
            result.to_csv(out_path)
    if output == "json":
        _emit_json(result.to_dict())
    elif output == "csv":
        click.echo(result.to_csv(), nl=False)
    else:
        tiers: Dict[str, int] = {}
        for record in result.records:
            tiers[record.tags["tier"]] = tiers.get(record.tags["tier"], 0) + 1
        _print_mapping(f"Synthetic campaign ({len(result)} records)", tiers)
        if out_path:
            console.print(f"[green]Campaign written to {out_path}[/green]")


@cli.command(name="report")
@click.option("--kind", type=click.Choice(["table3", "table4"]), required=True)
@click.option("--model", "models", multiple=True, help="name:Na:N, repeatable (default: mainstream models).")
@click.option("--thresholds", type=FLOAT_LIST, default="0.001,0.005", show_default=True)
@constants_option
@output_option(choices=("human", "json", "csv", "markdown"))
@click.pass_context
def report(ctx, kind, models, thresholds, constants_ref, output):
    """Optimal-configuration tables for MoE models."""
    constants = _constants(ctx, constants_ref)
    model_list = [parse_model_spec(m) for m in models] if models else MAINSTREAM_MODELS
    table = render_table(kind, model_list, constants, thresholds)
    if output == "json":
        _emit_json(table.to_dict())
    elif output == "csv":
        click.echo(table.to_csv(), nl=False)
    elif output == "markdown":
        click.echo(table.to_markdown(), nl=False)
    else:
        rich_table = Table(show_header=True)
        for column in table.columns:
            rich_table.add_column(column)
        for row in table.rows:
            rich_table.add_row(*row)
        console.print(rich_table)


@cli.command(name="curve")
@click.option("--target", type=click.Choice(CURVE_TARGETS), required=True)
@click.option("--N", "N", type=COUNT, default=None)
@click.option("--D", "D", type=COUNT, default=None)
@click.option("--Na", "Na", type=COUNT, default=None)
@click.option("--G", "G", type=float, default=None)
@click.option("--S", "S", type=float, default=None)
@click.option("--grid", type=FLOAT_LIST, default=None, help="Comma-separated x values (default per target).")
@constants_option
@output_option(default="csv")
@click.pass_context
def curve(ctx, target, N, D, Na, G, S, grid, constants_ref, output):
    """Loss along one factor as CSV for plotting."""
    constants = _constants(ctx, constants_ref)
    result = emit_curve(target, constants, dict(N=N, D=D, Na=Na, G=G, S=S), grid)
    if output == "json":
        _emit_json({"target": target, "fixed": result.fixed, "points": result.to_frame().to_dict("records")})
    elif output == "csv":
        click.echo(result.to_csv(), nl=False)
    else:
        best = result.argmin()
        console.print(f"{target}: minimum loss {np.nanmin(result.loss):.4f} at {result.x_name} = {best:.4g}")


@cli.group(name="registry", cls=MoeScaleGroup)
def registry_group():
    """Manage labelled constants sets."""
    pass


@registry_group.command(name="list")
@output_option()
@click.pass_context
def registry_list(ctx, output):
    """List all constants sets."""
    entries = ctx.obj["registry"].list_entries()
    if output == "json":
        _emit_json([{**entry.to_dict(), "builtin": entry.builtin} for entry in entries])
        return
    table = Table(show_header=True)
    table.add_column("Label", min_width=15)
    table.add_column("Built in")
    table.add_column("Provenance", min_width=30)
    for entry in entries:
        table.add_row(entry.label, "yes" if entry.builtin else "no",
                      ", ".join(f"{k}={v}" for k, v in entry.provenance.items()))
    console.print(table)


@registry_group.command(name="show")
@click.argument("label")
@output_option()
@click.pass_context
def registry_show(ctx, label, output):
    """Show one constants set."""
    entry = ctx.obj["registry"].get(label)
    if output == "json":
        _emit_json(entry.to_dict())
    else:
        _print_mapping(f"Constants '{label}'", entry.constants.to_dict())


@registry_group.command(name="save")
@click.argument("label")
@click.option("--from", "source", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Constants JSON (flat object, registry entry or fit output).")
@click.pass_context
def registry_save(ctx, label, source):
    """Save constants from a file under LABEL."""
    constants = load_constants_file(source)
    ctx.obj["registry"].save(label, constants, {"source": str(source)})
    console.print(f"[green]Constants '{label}' saved successfully[/green]")


@registry_group.command(name="remove")
@click.argument("label")
@click.pass_context
def registry_remove(ctx, label):
    """Remove a constants set."""
    ctx.obj["registry"].remove(label)
    console.print(f"[green]Constants '{label}' removed successfully[/green]")
