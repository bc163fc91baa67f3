"""Command-line subcommands: simulate, fit, predict and diagnose."""
import functools
import json
import logging
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import click
import numpy as np
import pandas as pd

from splinecos import diagnostics, model, predict, sampler, simulate
from splinecos.basis import SupportGeometry, Weight
from splinecos.config import fit_config_dict, load_run_config, load_sources
from splinecos.errors import SplinecosError, ValidationError
from splinecos.storage_service import storage_service

logger = logging.getLogger(__name__)

LOG_FORMAT = "[%(levelname)s %(name)s] %(message)s"


def configure_logging(verbose: bool):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format=LOG_FORMAT, stream=sys.stderr, force=True)


def command(func):
    """Shared --verbose flag plus the exit-code contract for every subcommand."""
    @click.option("-v", "--verbose", is_flag=True, help="Log progress at INFO level.")
    @functools.wraps(func)
    def wrapper(*args, verbose: bool = False, **kwargs):
        configure_logging(verbose)
        try:
            return func(*args, **kwargs)
        except click.ClickException:
            raise
        except ValidationError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(1)
        except SplinecosError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)
        except Exception as e:
            logger.debug("unexpected failure", exc_info=True)
            click.echo(f"error: {type(e).__name__}: {e}", err=True)
            sys.exit(2)
    return wrapper


def echo_json(data: Dict):
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@dataclass(frozen=True)
class GridSpec:
    """Regular target grid: lower-left corner, cell sizes and cell counts."""
    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        parts = text.split(",")
        if len(parts) != 6:
            raise ValidationError(f"grid '{text}': expected x0,y0,dx,dy,nx,ny")
        try:
            x0, y0, dx, dy = (float(p) for p in parts[:4])
            nx, ny = int(parts[4]), int(parts[5])
        except ValueError:
            raise ValidationError(f"grid '{text}': expected four numbers and two integers") from None
        if not (dx > 0 and dy > 0 and nx > 0 and ny > 0):
            raise ValidationError(f"grid '{text}': cell sizes and counts must be positive")
        return cls(x0, y0, dx, dy, nx, ny)

    def targets(self, points: bool = False) -> List[SupportGeometry]:
        """Cells in raster order: rows from north to south, columns west to east."""
        xs = self.x0 + self.dx * np.arange(self.nx + 1)
        ys = self.y0 + self.dy * np.arange(self.ny + 1)
        targets = []
        for r in range(self.ny - 1, -1, -1):
            for c in range(self.nx):
                cell = SupportGeometry.rect(xs[c], xs[c + 1], ys[r], ys[r + 1], Weight.AVERAGE)
                targets.append(cell.as_point() if points else cell)
        return targets


def _target_table(targets: List[SupportGeometry], draws: np.ndarray) -> pd.DataFrame:
    table = predict.summarize(draws)
    centroids = np.array([t.centroid for t in targets]).reshape(len(targets), 2)
    table.insert(0, "x", centroids[:, 0])
    table.insert(1, "y", centroids[:, 1])
    return table


@click.command("simulate")
@click.argument("scenario")
@click.option("--dims", type=int, default=None, help="1 or 2 spatial dimensions.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", default="simulation", show_default=True, help="Output directory.")
@click.option("--config", "overrides_path", default=None, help="JSON file of scenario overrides.")
@command
def simulate_command(scenario: str, dims: Optional[int], seed: int, out_dir: str,
                     overrides_path: Optional[str]):
    """Generate a synthetic dataset and fit configs for SCENARIO."""
    overrides = {}
    if overrides_path is not None:
        try:
            overrides = json.loads(Path(overrides_path).read_text())
        except FileNotFoundError:
            raise ValidationError(f"override file not found: {overrides_path}") from None
        except json.JSONDecodeError as e:
            raise ValidationError(f"{overrides_path}: invalid JSON at line {e.lineno} "
                                  f"column {e.colno}: {e.msg}") from None
    cfg = simulate.scenario_config(scenario, dims, overrides)
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    logger.info("simulating %s with seed %d: %s", scenario, seed, asdict(cfg))

    if isinstance(cfg, simulate.FullBinaryConfig):
        data = simulate.gen_full_binary(rng, cfg)
        model_config = simulate.full_binary_model_config(cfg)
        weight = Weight.AVERAGE
    else:
        data = simulate.simulate_scenario(cfg, rng)
        model_config = simulate.scenario_model_config(cfg)
        weight = cfg.weight

    files = {}
    for source in data.responses + data.predictors:
        name = f"{source.id}.csv"
        storage_service.write_observations(out / name, source.supports, source.values)
        files[source.id] = name
    storage_service.write_observations(out / "truth.csv", data.truth_targets, data.truth)
    files["truth"] = "truth.csv"
    for field_name, delta in data.true_delta.items():
        name = f"true_delta_{field_name}.npy"
        storage_service.write_array(out / name, delta)
        files[f"true_delta_{field_name}"] = name

    configs = {}
    for variant, options in simulate.model_variants(cfg.kind).items():
        common = {"variance": options["variance"].value, "weight": weight.value,
                  "as_centroids": options["as_centroids"]}
        responses = [dict(id=r.id, path=files[r.id], family=r.family.value, reliable=r.reliable, **common)
                     for r in data.responses]
        predictors = [dict(id=p.id, path=files[p.id], **common) for p in data.predictors]
        name = f"fit_{variant}.json"
        storage_service.write_json(out / name, fit_config_dict(model_config, responses, predictors,
                                                               seed, f"fit_{variant}"))
        configs[variant] = name

    manifest = {
        "scenario": data.name,
        "seed": seed,
        "directory": str(out),
        "scenario_config": json.loads(json.dumps(asdict(cfg))),
        "parameters": data.parameters,
        "files": files,
        "configs": configs,
    }
    storage_service.write_json(out / "manifest.json", manifest)
    echo_json(manifest)


@click.command("fit")
@click.option("--config", "config_path", required=True, help="JSON run config.")
@click.option("--seed", type=int, default=None, help="Override sampler.seed.")
@click.option("--threads", type=int, default=None, help="Override sampler.threads.")
@click.option("--out", "out_dir", default=None, help="Override output.directory.")
@click.option("--progress/--no-progress", default=None, help="Show per-chain progress bars.")
@command
def fit_command(config_path: str, seed: Optional[int], threads: Optional[int],
                out_dir: Optional[str], progress: Optional[bool]):
    """Run the Gibbs sampler for the model described by a run config."""
    config = load_run_config(config_path).with_overrides(seed, threads, out_dir)
    if progress is not None:
        config = replace(config, sampler=replace(config.sampler, progress=progress))
    responses, predictors = load_sources(config)
    spec = model.build(config.model, responses, predictors)
    samples = sampler.run(spec, config.sampler)

    out = config.output.directory
    written = []
    if "chains" in config.output.emit:
        storage_service.write_chains(out, samples, config.to_dict())
        written.append("metadata.json")
        written += [f"chain_{c}.npy" for c in range(samples.n_chains)]
    if "summary" in config.output.emit:
        storage_service.write_table(out / "summary.csv", predict.summarize(samples))
        written.append("summary.csv")
    echo_json({"directory": str(out), "chains": samples.n_chains, "draws": samples.n_draws,
               "model_hash": spec.hash, "files": written})


@click.command("predict")
@click.argument("store")
@click.option("--grid", "grids", multiple=True, help="Target grid x0,y0,dx,dy,nx,ny (repeatable).")
@click.option("--rects", "rects_path", default=None, help="Observation-format table of target supports.")
@click.option("--weight", type=click.Choice([w.value for w in Weight]), default=Weight.AVERAGE.value,
              show_default=True, help="Aggregation weight for --rects targets.")
@click.option("--points", is_flag=True, help="Evaluate grid cell centres instead of cell averages.")
@click.option("--field", "field_name", default="eta", show_default=True,
              help="eta, W, LS, V:<id> or X:<id>.")
@click.option("--truth", "truth_path", default=None, help="Table of true values to score against.")
@click.option("--probability", is_flag=True, help="Add the binary success probability column.")
@click.option("--threads", type=int, default=None)
@click.option("--out", "out_dir", default=None, help="Output directory (default: the store).")
@command
def predict_command(store: str, grids, rects_path: Optional[str], weight: str, points: bool,
                    field_name: str, truth_path: Optional[str], probability: bool,
                    threads: Optional[int], out_dir: Optional[str]):
    """Posterior predictions from the chain store STORE."""
    samples = storage_service.read_chains(store)
    layout = samples.layout
    out = Path(out_dir) if out_dir is not None else Path(store)
    specs = [GridSpec.parse(g) for g in grids]
    if not specs and rects_path is None and truth_path is None:
        raise ValidationError("nothing to predict: give --grid, --rects or --truth")

    def table_for(targets: List[SupportGeometry]) -> Tuple[pd.DataFrame, np.ndarray]:
        draws = predict.predict_field(samples, layout, field_name, targets, threads)
        table = _target_table(targets, draws)
        if probability:
            table["p_success"] = predict.predict_probability(samples, layout, targets, threads=threads)
        return table, draws

    written = []
    for i, spec in enumerate(specs):
        name = f"grid{i}"
        targets = spec.targets(points)
        table, _ = table_for(targets)
        storage_service.write_table(out / f"{name}_summary.csv", table)
        shape = (spec.ny, spec.nx)
        storage_service.write_raster(out / f"{name}_mean.asc", table["mean"].to_numpy().reshape(shape),
                                     spec.x0, spec.y0, spec.dx, spec.dy)
        storage_service.write_raster(out / f"{name}_sd.asc", table["sd"].to_numpy().reshape(shape),
                                     spec.x0, spec.y0, spec.dx, spec.dy)
        written += [f"{name}_summary.csv", f"{name}_mean.asc", f"{name}_sd.asc"]

    if rects_path is not None:
        targets, _ = storage_service.read_observations(rects_path, Weight(weight))
        table, _ = table_for(targets)
        storage_service.write_table(out / "rects_summary.csv", table)
        written.append("rects_summary.csv")

    if truth_path is not None:
        targets, truth = storage_service.read_observations(truth_path, Weight(weight))
        table, draws = table_for(targets)
        table["truth"] = truth
        table["p_over"] = predict.overprediction_from_draws(draws, truth)
        storage_service.write_table(out / "truth_summary.csv", table)
        written.append("truth_summary.csv")
        p_over = table["p_over"].to_numpy()
        echo_json({"directory": str(out), "field": field_name, "files": written,
                   "mean_absolute_error": predict.mean_absolute_error(table["mean"], truth),
                   "central_fraction": predict.central_fraction(p_over)})
        return
    echo_json({"directory": str(out), "field": field_name, "files": written})


@click.command("diagnose")
@click.argument("store")
@click.option("--fields", is_flag=True, help="Include latent field coefficients.")
@click.option("--out", "out_dir", default=None, help="Output directory (default: the store).")
@command
def diagnose_command(store: str, fields: bool, out_dir: Optional[str]):
    """Effective sample sizes and split R-hat for the chains in STORE."""
    samples = storage_service.read_chains(store)
    table = diagnostics.diagnose(samples, include_fields=fields)
    out = Path(out_dir) if out_dir is not None else Path(store)
    storage_service.write_table(out / "diagnostics.csv", table, index=False)
    click.echo(table.to_string(index=False))


COMMANDS = [simulate_command, fit_command, predict_command, diagnose_command]
