"""Command-line interface for submarkets."""

import json
import logging
import sys
from pathlib import Path
from typing import Any

import click
import numpy as np

from . import __version__
from .analysis import (
    age_gap_matrix,
    age_quantiles,
    bundle,
    contact_matrix,
    ethnic_composition,
    format_rows,
    mixing_rows,
    relative_minority_age,
    sex_ratio,
    within_fraction,
)
from .attributes import AttributeTable, ContactLog
from .bp import run_bp, two_node_marginals
from .config import ENV_PREFIX, RunConfig, load_config
from .dcsbm import BlockModelParams, assortative_params, generate, powerlaw_degrees
from .em import FitOptions, FitResult, fit, write_marginals
from .errors import DataError, NumericalError
from .files import atomic_write
from .graph import (
    Graph,
    aggregate_by_region,
    format_edge_list,
    largest_connected_component,
    load_edge_list,
    load_region_log,
)
from .modularity import louvain, modularity
from .oracle import exact_posterior
from .pairing import pair_submarkets
from .partition import Partition, format_partition, read_labels
from .repro import ReproScale, run_suite
from .synthetic import (
    market_params,
    planted_submarkets,
    synthetic_attributes,
    synthetic_contacts,
)

logger = logging.getLogger(__name__)

EXISTING = click.Path(exists=True, dir_okay=False, path_type=Path)
OUTPUT = click.Path(dir_okay=False, path_type=Path)


def _configure_logging(verbose: bool) -> None:
    """Send package logs to stderr; stdout carries only summaries."""
    log = logging.getLogger("submarkets")
    for handler in list(log.handlers):
        log.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO if verbose else logging.WARNING)


def _run_config(ctx: click.Context) -> RunConfig:
    return RunConfig.from_params(ctx.info_name or "", ctx.params)


def _write(config: RunConfig, path: Path, data: str | bytes) -> None:
    atomic_write(path, data)
    config.record(path)


def _dumps(data: Any) -> str:
    return json.dumps(data, indent=2) + "\n"


def _read_graph(path: Path, self_loops: str = "drop") -> Graph:
    with path.open("rb") as f:
        return load_edge_list(f, self_loops=self_loops)


def _parse_ks(ctx: click.Context, param: click.Parameter, value: Any) -> list[int]:
    try:
        ks = [int(v) for v in str(value).strip("[]").split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected integers like 4 or 4,6,8, got {value!r}")
    if not ks or min(ks) < 1:
        raise click.BadParameter("every k must be at least 1")
    return ks


def _per_k(path: Path, k: int, many: bool) -> Path:
    return path.with_name(f"{path.stem}.k{k}{path.suffix}") if many else path


@click.group(context_settings={"auto_envvar_prefix": ENV_PREFIX})
@click.version_option(version=__version__, prog_name="submarkets")
@click.option(
    "--config",
    type=EXISTING,
    default=None,
    help="JSON or YAML file with per-subcommand option defaults",
)
@click.option("--verbose", "-v", is_flag=True, help="Log progress to stderr")
@click.pass_context
def main(ctx: click.Context, config: Path | None, verbose: bool):
    """submarkets - community detection and submarket statistics."""
    _configure_logging(verbose)
    if config is not None:
        ctx.default_map = load_config(config)


@main.command()
@click.option("--input", type=EXISTING, default="edges.tsv",
              help="Tab-separated edge list")
@click.option("--output", type=OUTPUT, default="graph.tsv",
              help="Canonical edge list to write")
@click.option("--dedup", type=click.Choice(["sum", "error"]), default="sum",
              help="Merge duplicate edges by weight sum, or reject them")
@click.option("--unweighted", is_flag=True, help="Accept only two-column lines")
@click.option("--self-loops", type=click.Choice(["drop", "internal"]), default="drop",
              help="Drop self-loops or keep them as node-internal weight")
@click.option("--lcc", is_flag=True, help="Keep only the largest connected component")
@click.pass_context
def ingest(ctx, input: Path, output: Path, dedup: str, unweighted: bool,
           self_loops: str, lcc: bool):
    """Normalize an edge list: dense ids, merged duplicates, no self-loops."""
    config = _run_config(ctx)
    with input.open("rb") as f:
        g = load_edge_list(f, weighted=not unweighted, dedup=dedup, self_loops=self_loops)
    if lcc:
        g, _ = largest_connected_component(g)
    _write(config, output, format_edge_list(g))
    click.echo(f"{g.node_count} nodes, {g.edge_count} edges -> {output}")


@main.command()
@click.option("--input", type=EXISTING, default="regions.tsv",
              help="Two-column TSV of region codes, one interaction per line")
@click.option("--output", type=OUTPUT, default="regions-graph.tsv",
              help="Weighted region graph to write")
@click.pass_context
def aggregate(ctx, input: Path, output: Path):
    """Count interactions between every pair of regions."""
    config = _run_config(ctx)
    with input.open("rb") as f:
        g = aggregate_by_region(load_region_log(f))
    _write(config, output, format_edge_list(g))
    click.echo(f"{g.node_count} regions, {g.edge_count} region pairs -> {output}")


@main.command(name="louvain")
@click.option("--input", type=EXISTING, default="graph.tsv",
              help="Edge list; self-loop lines count as internal weight")
@click.option("--output", type=OUTPUT, default="partition.csv",
              help="node_id,community CSV to write")
@click.option("--resolution", type=float, default=1.0, show_default=True,
              help="Multiplier of the null-model term")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for node visitation order")
@click.pass_context
def louvain_cmd(ctx, input: Path, output: Path, resolution: float, seed: int):
    """Maximize modularity with the Louvain method."""
    config = _run_config(ctx)
    g = _read_graph(input, self_loops="internal")
    p = louvain(g, resolution=resolution, seed=seed)
    q = modularity(g, p, resolution)
    _write(config, output, format_partition(g.node_ids, p))
    click.echo(f"{p.k} communities, Q = {q:.6f} -> {output}")


def _target_degrees(source: str, n: int, exponent: float, d_min: float,
                    d_max: float | None, seed: int) -> np.ndarray:
    if source == "powerlaw":
        return powerlaw_degrees(n, exponent=exponent, d_min=d_min, d_max=d_max, seed=seed)
    path = Path(source)
    if not path.is_file():
        raise click.BadParameter(f"expected 'powerlaw' or a file, got {source!r}",
                                 param_hint="--degrees")
    try:
        degrees = np.array([float(x) for x in path.read_text().split()])
    except ValueError as e:
        raise DataError(f"degree file {path}: {e}") from None
    if len(degrees) != n:
        raise DataError(f"degree file has {len(degrees)} values, expected {n}")
    return degrees


@main.command(name="generate")
@click.option("--n", type=int, default=1000, show_default=True, help="Number of nodes")
@click.option("--k", type=int, default=2, show_default=True,
              help="Groups for the built-in assortative parameters")
@click.option("--params", type=EXISTING, default=None,
              help="JSON parameters {k, gamma, omega}; overrides --k and --ratio")
@click.option("--ratio", type=float, default=10.0, show_default=True,
              help="omega_in / omega_out of the built-in parameters")
@click.option("--market", type=int, default=0, show_default=True,
              help="Plant a market of this many age blocks (2 sexes each)")
@click.option("--degrees", default="powerlaw", show_default=True,
              help="'powerlaw' or a file with one target degree per node")
@click.option("--exponent", type=float, default=2.5, show_default=True)
@click.option("--d-min", type=float, default=2.0, show_default=True)
@click.option("--d-max", type=float, default=None, help="Default: sqrt(n)")
@click.option("--mode", type=click.Choice(["simple", "multigraph"]), default="simple",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=OUTPUT, default="edges.tsv", help="Edge list to write")
@click.option("--truth", type=OUTPUT, default="truth.csv", help="Planted groups to write")
@click.option("--attributes", type=OUTPUT, default=None,
              help="Also write synthetic attributes (needs --market)")
@click.option("--contacts", type=OUTPUT, default=None,
              help="Also write a synthetic first-contact log (needs --market)")
@click.option("--n-contacts", type=int, default=0, help="Contacts to draw (default 10 n)")
@click.option("--within-share", type=float, default=0.57, show_default=True,
              help="Share of contacts inside the sender's submarket")
@click.option("--reply-rate", type=float, default=0.3, show_default=True)
@click.pass_context
def generate_cmd(ctx, n, k, params, ratio, market, degrees, exponent, d_min, d_max,
                 mode, seed, out, truth, attributes, contacts, n_contacts, within_share,
                 reply_rate):
    """Sample a graph and planted groups from the block model."""
    config = _run_config(ctx)
    if (attributes or contacts) and not market:
        raise click.UsageError("--attributes and --contacts need --market")

    target = _target_degrees(degrees, n, exponent, d_min, d_max, seed)
    if params is not None:
        model = BlockModelParams.loads(params.read_text())
    elif market:
        model = market_params(market, float(target.sum()))
    else:
        model = assortative_params(k, ratio, float(target.sum()))

    g, planted = generate(n, model, target, seed=seed, mode=mode)
    _write(config, out, format_edge_list(g))
    _write(config, truth, format_partition(g.node_ids, planted, column="group"))

    if attributes or contacts:
        attrs = synthetic_attributes(planted, market, seed=seed, node_ids=list(g.node_ids))
        if attributes:
            _write(config, attributes, attrs.to_csv())
        if contacts:
            blocks = planted_submarkets(planted, market)
            subs = {node_id: int(b) for node_id, b in zip(g.node_ids, blocks)}
            log = synthetic_contacts(attrs, subs, n_contacts or 10 * n,
                                     within_share=within_share, reply_rate=reply_rate,
                                     seed=seed)
            _write(config, contacts, log.to_csv())

    click.echo(f"{g.node_count} nodes, {g.edge_count} edges, k = {model.k} -> {out}")


@main.command(name="fit-sbm")
@click.option("--input", type=EXISTING, default="edges.tsv",
              help="Edge list; fitting uses its largest connected component")
@click.option("--k", default="2", callback=_parse_ks, show_default=True,
              help="Number of groups, or a comma-separated list")
@click.option("--restarts", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--bp-tol", type=float, default=1e-6, show_default=True)
@click.option("--em-tol", type=float, default=1e-6, show_default=True)
@click.option("--damping", type=float, default=0.1, show_default=True)
@click.option("--max-sweeps", type=int, default=500, show_default=True)
@click.option("--max-em-iters", type=int, default=100, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker threads; above 1 BP updates run in parallel")
@click.option("--schedule", type=click.Choice(["sequential", "parallel"]), default=None,
              help="BP update order (default: parallel when threads > 1)")
@click.option("--strict-q2", is_flag=True,
              help="Keep the exp(-d_i d_j omega) factor in pair marginals")
@click.option("--out", type=OUTPUT, default="result.json", show_default=True)
@click.option("--marginals", type=OUTPUT, default=None,
              help="Also write q1 as little-endian float64, row-major")
@click.pass_context
def fit_sbm(ctx, input, k, restarts, seed, bp_tol, em_tol, damping, max_sweeps,
            max_em_iters, threads, schedule, strict_q2, out, marginals):
    """Fit the degree-corrected block model by EM with belief propagation."""
    config = _run_config(ctx)
    g, _ = largest_connected_component(_read_graph(input))
    options = FitOptions(
        restarts=restarts,
        seed=seed,
        bp_tol=bp_tol,
        em_tol=em_tol,
        max_sweeps=max_sweeps,
        max_em_iters=max_em_iters,
        damping=damping,
        schedule=schedule or ("parallel" if threads > 1 else "sequential"),
        threads=threads,
        strict_q2=strict_q2,
    )
    many = len(k) > 1
    for groups in k:
        result = fit(g, groups, options)
        data = result.to_dict()
        if marginals is not None:
            q_path = _per_k(marginals, groups, many)
            _write(config, q_path, write_marginals(result.marginals.q1))
            data["marginals_path"] = str(q_path)
        data["config"] = config.to_dict()
        target = _per_k(out, groups, many)
        _write(config, target, _dumps(data))
        state = "converged" if result.converged else "not converged"
        click.echo(
            f"k = {groups}: objective {result.objective:.6g}, {state} after "
            f"{len(result.history)} EM iterations -> {target}"
        )


@main.command(name="oracle")
@click.option("--input", type=EXISTING, default="edges.tsv")
@click.option("--params", type=EXISTING, default="params.json",
              help="JSON parameters {k, gamma, omega}")
@click.option("--max-states", type=float, default=1e7, show_default=True,
              help="Refuse graphs with more assignments than this")
@click.option("--pair-scale", type=float, default=0.5, show_default=True,
              help="Weight of the ordered-pair log-likelihood; 0.5 counts each "
                   "unordered pair once, the posterior BP approximates")
@click.option("--bp", is_flag=True, help="Also run BP and report its largest deviation")
@click.option("--out", type=OUTPUT, default="marginals.bin",
              help="q1 as little-endian float64, row-major")
@click.pass_context
def oracle_cmd(ctx, input, params, max_states, pair_scale, bp, out):
    """Exact posterior marginals by enumerating every assignment.

    BP matches these marginals exactly only on trees in the sparse limit,
    where omega is small enough that non-edges carry no weight.
    """
    config = _run_config(ctx)
    g = _read_graph(input)
    model = BlockModelParams.loads(params.read_text())
    exact = exact_posterior(g, model, max_states=int(max_states), pair_scale=pair_scale)
    _write(config, out, write_marginals(exact.q1))
    click.echo(f"{model.k}^{g.node_count} assignments enumerated -> {out}")
    if bp:
        bp_run = run_bp(g, model, 0, tol=1e-12, max_sweeps=1000, damping=0.0)
        q2 = two_node_marginals(g, model, bp_run.beliefs)
        deviation = max(
            float(np.abs(bp_run.q1 - exact.q1).max(initial=0.0)),
            float(np.abs(q2 - exact.q2).max(initial=0.0)),
        )
        click.echo(f"BP deviation from exact: {deviation:.3e}")


@main.command(name="pair")
@click.option("--result", type=EXISTING, default="result.json",
              help="fit-sbm result with an even k")
@click.option("--attributes", type=EXISTING, default="attributes.csv")
@click.option("--out", type=OUTPUT, default="submarkets.csv",
              help="node_id,submarket CSV to write")
@click.pass_context
def pair_cmd(ctx, result, attributes, out):
    """Pair men's and women's communities into submarkets."""
    config = _run_config(ctx)
    try:
        fitted = FitResult.from_dict(json.loads(result.read_text()))
    except json.JSONDecodeError as e:
        raise DataError(f"invalid result file: {e}") from None
    attrs = AttributeTable.from_csv(attributes.read_text())
    pairing = pair_submarkets(fitted, attrs)
    by_node = pairing.for_nodes(fitted)
    labels = Partition(np.array([by_node[n] for n in fitted.node_ids]), pairing.count)
    _write(config, out, format_partition(fitted.node_ids, labels, column="submarket"))
    for c, s in pairing.community_to_submarket.items():
        click.echo(f"community {c} -> submarket {s}")
    for warning in pairing.warnings:
        click.echo(f"○ {warning}", err=True)
    click.echo(f"{pairing.count} submarkets -> {out}")


@main.command(name="analyze")
@click.option("--submarkets", type=EXISTING, default="submarkets.csv")
@click.option("--attributes", type=EXISTING, default="attributes.csv")
@click.option("--contacts", type=EXISTING, default=None,
              help="First-contact log for mixing, reply and age-gap tables")
@click.option("--edges", type=EXISTING, default=None,
              help="Interaction graph for the within-submarket fraction")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path),
              default="analysis", show_default=True)
@click.option("--reference", default="White", show_default=True,
              help="Reference ethnicity for relative ages")
@click.option("--minority-sex", type=click.Choice(["M", "F"]), default="F",
              show_default=True)
@click.option("--age-weighting", type=click.Choice(["users", "messages"]),
              default="users", show_default=True, help="Units for relative ages")
@click.option("--gap-weighting", type=click.Choice(["users", "messages"]),
              default="messages", show_default=True, help="Units for age gaps")
@click.option("--min-members", type=int, default=10, show_default=True)
@click.option("--min-messages", type=int, default=20, show_default=True)
@click.pass_context
def analyze(ctx, submarkets, attributes, contacts, edges, out_dir, reference,
            minority_sex, age_weighting, gap_weighting, min_members, min_messages):
    """Submarket statistics as tidy CSV and JSON tables."""
    config = _run_config(ctx)
    membership = read_labels(submarkets.read_text())
    attrs = AttributeTable.from_csv(attributes.read_text())
    log = ContactLog.from_csv(contacts.read_text()) if contacts else None
    if log is not None:
        kept = [r for r in log if r.sender in membership and r.receiver in membership]
        if len(kept) < len(log):
            logger.warning("ignoring %d contacts with users outside the submarkets",
                           len(log) - len(kept))
            log = ContactLog(tuple(kept))
    if age_weighting == "messages" and log is None:
        raise click.UsageError("--age-weighting messages needs --contacts")

    tables: dict[str, list] = {
        "fig2a": age_quantiles(membership, attrs, min_count=min_members),
        "fig2b": sex_ratio(membership, attrs),
        "fig2c": relative_minority_age(membership, attrs, reference, minority_sex,
                                       age_weighting, log, min_count=min_members),
        "fig7": ethnic_composition(membership, attrs),
    }
    summary: dict[str, float] = {}
    if edges is not None:
        g = _read_graph(edges, self_loops="internal")
        keep = [i for i, node_id in enumerate(g.node_ids) if node_id in membership]
        if len(keep) < g.node_count:
            logger.warning("ignoring %d graph nodes without a submarket",
                           g.node_count - len(keep))
        summary["graph"] = within_fraction(g.subgraph(np.array(keep, dtype=np.int64)),
                                           membership)
    if log is not None:
        summary["contacts"] = within_fraction(log, membership)
        tables["fig3"] = [
            row
            for stage in ("sent", "replied")
            for row in age_gap_matrix(log, attrs, membership, stage,
                                      weighting=gap_weighting).tidy()
        ]
        tables["fig4"] = [
            row
            for direction in ("M->F", "F->M")
            for row in mixing_rows(contact_matrix(log, membership, attrs, direction,
                                                  min_messages))
        ]

    for name, rows in tables.items():
        _write(config, out_dir / f"{name}.csv", format_rows(rows))
        _write(config, out_dir / f"{name}.json",
               _dumps(bundle(name, rows, config=config.to_dict())))
        click.echo(f"{name}: {len(rows)} rows")
    if summary:
        _write(config, out_dir / "within.json",
               _dumps({"within_fraction": summary, "config": config.to_dict()}))
        for source, value in summary.items():
            click.echo(f"within-submarket fraction ({source}): {value:.4f}")


@main.command(name="repro-synthetic")
@click.option("--quick", is_flag=True, help="Smaller graphs and fewer seeds")
@click.option("--out", type=OUTPUT, default="report.json", show_default=True)
@click.pass_context
def repro_synthetic(ctx, quick: bool, out: Path):
    """Run the planted-truth reproduction suite and report each check."""
    config = _run_config(ctx)
    report = run_suite(ReproScale.quick() if quick else ReproScale())
    _write(config, out, _dumps({**report.to_dict(), "config": config.to_dict()}))
    click.echo(report.format())
    if not report.passed:
        raise click.ClickException(f"{len(report.failures)} checks failed")


def run(argv: list[str] | None = None) -> int:
    """Invoke the CLI and map failures to exit codes.

    0 success, 1 usage error or failed report, 2 data error, 3 numerical error.
    """
    try:
        rv = main.main(args=argv, prog_name="submarkets", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 1
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except DataError as e:
        click.echo(f"Error: {e}", err=True)
        return 2
    except NumericalError as e:
        click.echo(f"Error: {e}", err=True)
        return 3
    return rv if isinstance(rv, int) else 0


def entry() -> None:
    sys.exit(run())
