"""Command-line front end wiring the modules into the mapping workflow.

Subcommands follow the processing chain: synth, composite, scales,
standardize, label, sample, train, predict, smooth, evaluate, mcnemar,
growth, trends, render, gradcheck.  A plain-text ``key = value`` config
file supplies defaults; command-line flags win.  Every run echoes its
resolved configuration into the output directory so results can be
reproduced.  Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import composite as composite_mod
from . import evaluation, glcm_rf, labeler, sampler, synthcity, timeseries
from .raster import MultiBandRaster, read_raster, write_raster
from .segnet import (
    ModelConfig,
    finite_difference_check,
    init_params,
    load_params,
    predict_map,
    run_gradcheck,
    save_params,
    save_training_log,
    train_model,
)

PROG = "urbanform"

# config keys accepted in the RunConfig file, with parsers
_CONFIG_KEYS = {
    "seed": int,
    "season_start": str,
    "season_end": str,
    "window_years": int,
    "percentile": float,
    "min_distance": float,
    "cap_ratio": float,
    "patch_size": int,
    "step": int,
    "validation_fraction": float,
    "architecture": str,
    "n_classes": int,
    "learning_rate": float,
    "epochs": int,
    "batch_size": int,
    "atrous_rates": str,
    "smooth_window": int,
    "smooth_polyorder": int,
    "glcm_window": int,
    "glcm_levels": int,
    "rf_trees": int,
    "rf_features_per_split": int,
    "noise_std": float,
    "qa_dropout": float,
    "n_observations": int,
    "size": int,
}

_DEFAULTS = {
    "seed": 0,
    "season_start": "05-01",
    "season_end": "08-31",
    "window_years": 3,
    "percentile": 0.995,
    "min_distance": 150.0,
    "cap_ratio": 5.0,
    "patch_size": 48,
    "step": 24,
    "validation_fraction": 0.1,
    "architecture": "deeplab",
    "n_classes": 4,
    "learning_rate": 0.0002,
    "epochs": 12,
    "batch_size": 8,
    "atrous_rates": "1,2,4",
    "smooth_window": 5,
    "smooth_polyorder": 2,
    "glcm_window": 5,
    "glcm_levels": 32,
    "rf_trees": 200,
    "rf_features_per_split": 6,
    "noise_std": 0.02,
    "qa_dropout": 0.2,
    "n_observations": 6,
    "size": 128,
}

# Fixed class-color table for PPM quicklooks (RGB).
CLASS_COLORS = {
    "horizontal": {
        -1: (255, 255, 255),
        0: (205, 205, 205),
        1: (253, 227, 130),
        2: (247, 148, 62),
        3: (197, 27, 30),
    },
    "vertical": {
        -1: (255, 255, 255),
        0: (205, 205, 205),
        1: (128, 185, 235),
        2: (24, 60, 160),
    },
    "growth": {
        -1: (255, 255, 255),
        0: (205, 205, 205),
        1: (36, 160, 64),
    },
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _load_config(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def _resolve(args, key):
    """Precedence: explicit flag > config file > built-in default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if args._config and key in args._config:
        return args._config[key]
    return _DEFAULTS[key]


def _echo_config(args, out_dir: Path, keys):
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"command = {args.command}"]
    for key in sorted(keys):
        lines.append(f"{key} = {_resolve(args, key)}")
    (out_dir / "run_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_md(text: str):
    month, _, day = text.partition("-")
    return (int(month), int(day))


def _model_config(args, n_classes=None) -> ModelConfig:
    rates = tuple(int(r) for r in str(_resolve(args, "atrous_rates")).split(","))
    return ModelConfig(
        architecture=_resolve(args, "architecture"),
        n_classes=n_classes if n_classes is not None else _resolve(args, "n_classes"),
        patch_size=_resolve(args, "patch_size"),
        atrous_rates=rates,
        learning_rate=_resolve(args, "learning_rate"),
        epochs=_resolve(args, "epochs"),
        batch_size=_resolve(args, "batch_size"),
        seed=_resolve(args, "seed"),
    )


def _read_observations(obs_dir) -> composite_mod.ObservationStack:
    """Observations persisted as DMR1 with a trailing 'qa' band + manifest."""
    import datetime as dt

    obs_dir = Path(obs_dir)
    manifest = obs_dir / "observations.csv"
    if not manifest.exists():
        raise DataError(f"no observations.csv in {obs_dir}")
    observations = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            raster = read_raster(obs_dir / row["path"])
            if raster.band_names[-1] != "qa":
                raise DataError(f"{row['path']}: last band must be 'qa'")
            qa = raster.data[-1] > 0.5
            bands = MultiBandRaster(
                width=raster.width, height=raster.height, bands=raster.bands - 1,
                band_names=raster.band_names[:-1], cell_size=raster.cell_size,
                origin_x=raster.origin_x, origin_y=raster.origin_y,
                data=raster.data[:-1],
            )
            date = dt.date.fromisoformat(row["date"])
            observations.append(composite_mod.Observation(date, bands, qa))
    return composite_mod.ObservationStack(observations)


def _write_observations(stack, obs_dir: Path, year: int):
    obs_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, obs in enumerate(stack.observations):
        r = obs.raster
        with_qa = MultiBandRaster(
            width=r.width, height=r.height, bands=r.bands + 1,
            band_names=list(r.band_names) + ["qa"], cell_size=r.cell_size,
            origin_x=r.origin_x, origin_y=r.origin_y,
            data=np.concatenate([r.data, obs.qa[None].astype(np.float64)]),
        )
        name = f"obs_{obs.date.isoformat()}_{k:02d}.dmr"
        write_raster(with_qa, obs_dir / name)
        rows.append((obs.date.isoformat(), name))
    return rows


def write_ppm(labels: np.ndarray, colors: dict, path) -> None:
    """Binary P6 quicklook with the fixed class-color table."""
    height, width = labels.shape
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    for code, color in colors.items():
        rgb[labels == code] = color
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode())
        fh.write(rgb.tobytes())


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    out = Path(args.out)
    seed = _resolve(args, "seed")
    size = _resolve(args, "size")
    years = [int(y) for y in args.years.split(",")]
    years = list(range(years[0], years[1] + 1)) if len(years) == 2 and args.range else years
    scenario = synthcity.generate_city_timeline(seed, years, size)
    synthcity.save_scenario(scenario, out)
    noise = _resolve(args, "noise_std")
    dropout = _resolve(args, "qa_dropout")
    n_obs = _resolve(args, "n_observations")
    manifest = []
    for year in years:
        stack = synthcity.render_reflectance(scenario, year, noise, dropout, n_obs)
        manifest.extend(_write_observations(stack, out / "observations", year))
    with open(out / "observations" / "observations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "path"])
        writer.writerows(manifest)
    _echo_config(args, out, ["seed", "size", "noise_std", "qa_dropout", "n_observations"])
    print(f"scenario with {len(years)} years written to {out}")
    return 0


def cmd_composite(args):
    out = Path(args.out)
    stack = _read_observations(args.observations)
    season = (_parse_md(_resolve(args, "season_start")), _parse_md(_resolve(args, "season_end")))
    stack = composite_mod.filter_observations(stack, season)
    result = composite_mod.rolling_median_composite(
        stack, args.year, _resolve(args, "window_years")
    )
    out.mkdir(parents=True, exist_ok=True)
    write_raster(result, out / f"composite_{args.year}.dmr")
    _echo_config(args, out, ["season_start", "season_end", "window_years"])
    print(f"composite for {args.year} written to {out}")
    return 0


def cmd_scales(args):
    out = Path(args.out)
    comp = read_raster(args.composite)
    scales = composite_mod.compute_band_scales(
        comp, _resolve(args, "percentile"), source_year=args.year
    )
    out.mkdir(parents=True, exist_ok=True)
    scales.save(out / "band_scales.txt")
    _echo_config(args, out, ["percentile"])
    print(f"band scales written to {out / 'band_scales.txt'}")
    return 0


def cmd_standardize(args):
    out = Path(args.out)
    comp = read_raster(args.composite)
    scales = composite_mod.BandScales.load(args.scales)
    result = composite_mod.standardize(comp, scales)
    out.mkdir(parents=True, exist_ok=True)
    name = Path(args.composite).stem + "_std.dmr"
    write_raster(result, out / name)
    _echo_config(args, out, [])
    print(f"standardized composite written to {out / name}")
    return 0


def cmd_label(args):
    out = Path(args.out)
    bar = read_raster(args.bar)
    height = read_raster(args.height)
    grid = labeler.label_grid(bar, height, args.dimension, args.year)
    out.mkdir(parents=True, exist_ok=True)
    name = f"labels_{args.dimension}_{args.year}.dmr"
    write_raster(grid.to_raster(), out / name)
    _echo_config(args, out, [])
    print(f"label grid written to {out / name}")
    return 0


def cmd_sample(args):
    out = Path(args.out)
    comp = read_raster(args.composite)
    grid = labeler.DensityLabelGrid.from_raster(read_raster(args.labels))
    seed = _resolve(args, "seed")
    sites = sampler.sites_from_grid(grid)
    sites = sampler.thin_by_distance(
        sites, _resolve(args, "min_distance"), seed, comp.cell_size
    )
    sites = sampler.balance_classes(sites, _resolve(args, "cap_ratio"), seed + 1)
    dataset = sampler.extract_patches(
        comp, grid, sites, _resolve(args, "patch_size"), _resolve(args, "step")
    )
    train, validation = sampler.split_train_validation(
        dataset, _resolve(args, "validation_fraction"), seed + 2
    )
    sampler.save_dataset(train, out / "train")
    sampler.save_dataset(validation, out / "validation")
    _echo_config(args, out, ["seed", "min_distance", "cap_ratio", "patch_size",
                             "step", "validation_fraction"])
    print(f"{len(train.patches)} train / {len(validation.patches)} validation "
          f"patches written to {out}")
    return 0


def cmd_train(args):
    out = Path(args.out)
    train = sampler.load_dataset(Path(args.dataset) / "train")
    validation = sampler.load_dataset(Path(args.dataset) / "validation")
    n_classes = len(labeler.class_names(train.dimension))
    config = _model_config(args, n_classes=n_classes)
    params, logs = train_model(config, train, validation)
    out.mkdir(parents=True, exist_ok=True)
    save_params(config, params, out / "model.txt", out / "model.bin")
    save_training_log(logs, out / "training_log.csv")
    _echo_config(args, out, ["architecture", "patch_size", "atrous_rates",
                             "learning_rate", "epochs", "batch_size", "seed"])
    best = max(l.val_avg_f1 for l in logs)
    print(f"trained {config.architecture}: best validation avg F1 {best:.4f}")
    return 0


def cmd_predict(args):
    out = Path(args.out)
    config, params = load_params(Path(args.model) / "model.txt", Path(args.model) / "model.bin")
    comp = read_raster(args.composite)
    grid, probs = predict_map(config, params, comp, _resolve(args, "step"),
                              epoch=args.year)
    out.mkdir(parents=True, exist_ok=True)
    write_raster(grid.to_raster(), out / f"predicted_{grid.dimension}_{args.year}.dmr")
    write_raster(probs, out / f"probabilities_{grid.dimension}_{args.year}.dmr")
    _echo_config(args, out, ["step"])
    print(f"prediction for {args.year} written to {out}")
    return 0


def cmd_smooth(args):
    out = Path(args.out)
    rasters = {}
    for item in args.probabilities:
        year, _, path = item.partition("=")
        rasters[int(year)] = read_raster(path)
    window = _resolve(args, "smooth_window")
    polyorder = _resolve(args, "smooth_polyorder")
    smoothed = timeseries.smooth_probability_rasters(rasters, window, polyorder)
    out.mkdir(parents=True, exist_ok=True)
    for year, raster in smoothed.items():
        write_raster(raster, out / f"smoothed_probabilities_{year}.dmr")
        labels = np.where(
            np.all(np.isfinite(raster.data), axis=0),
            np.argmax(raster.data, axis=0),
            labeler.UNLABELED,
        ).astype(np.int16)
        grid = labeler.DensityLabelGrid(
            width=raster.width, height=raster.height, dimension=args.dimension,
            epoch=year, labels=labels, cell_size=raster.cell_size,
            origin_x=raster.origin_x, origin_y=raster.origin_y,
        )
        write_raster(grid.to_raster(), out / f"smoothed_labels_{year}.dmr")
    _echo_config(args, out, ["smooth_window", "smooth_polyorder"])
    print(f"{len(smoothed)} smoothed years written to {out}")
    return 0


def cmd_evaluate(args):
    out = Path(args.out)
    pred = labeler.DensityLabelGrid.from_raster(read_raster(args.predicted))
    ref = labeler.DensityLabelGrid.from_raster(read_raster(args.reference))
    if pred.dimension != ref.dimension:
        raise DataError(
            f"dimension mismatch: {pred.dimension} vs {ref.dimension}"
        )
    classes = labeler.class_names(ref.dimension)
    matrix = evaluation.confusion_matrix(pred.labels, ref.labels, classes)
    report = evaluation.summary_metrics(matrix)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_metrics_csv(report, out / "metrics.csv")
    with open(out / "confusion_matrix.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["map\\reference"] + classes)
        for name, row in zip(classes, matrix.counts):
            writer.writerow([name] + [int(v) for v in row])
    summary = evaluation.format_metrics_text(report)
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    _echo_config(args, out, [])
    print(summary, end="")
    return 0


def cmd_mcnemar(args):
    out = Path(args.out)
    pred_a = labeler.DensityLabelGrid.from_raster(read_raster(args.model_a))
    pred_b = labeler.DensityLabelGrid.from_raster(read_raster(args.model_b))
    ref = labeler.DensityLabelGrid.from_raster(read_raster(args.reference))
    table = evaluation.correctness_table(pred_a.labels, pred_b.labels, ref.labels)
    result = evaluation.mcnemar_test(table)
    per_class = evaluation.per_class_mcnemar(
        pred_a.labels, pred_b.labels, ref.labels, labeler.class_names(ref.dimension)
    )
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "mcnemar.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope", "chi2_corrected", "p_corrected",
                         "chi2_uncorrected", "p_uncorrected", "b", "c"])
        writer.writerow(["overall", repr(result.chi2), repr(result.p_value),
                         repr(result.chi2_uncorrected), repr(result.p_uncorrected),
                         result.b, result.c])
        for name, res in per_class.items():
            writer.writerow([name, repr(res.chi2), repr(res.p_value),
                             repr(res.chi2_uncorrected), repr(res.p_uncorrected),
                             res.b, res.c])
    _echo_config(args, out, [])
    print(f"McNemar chi2 {result.chi2:.4f} (p {result.p_value:.2e}), "
          f"b={result.b} c={result.c}")
    return 0


def cmd_growth(args):
    out = Path(args.out)
    earlier = labeler.DensityLabelGrid.from_raster(read_raster(args.earlier))
    later = labeler.DensityLabelGrid.from_raster(read_raster(args.later))
    growth = labeler.derive_growth_labels(earlier, later)
    out.mkdir(parents=True, exist_ok=True)
    raster = MultiBandRaster(
        width=later.width, height=later.height, bands=1,
        band_names=[f"growth;epochs={earlier.epoch}-{later.epoch};0=no_growth;1=growth"],
        cell_size=later.cell_size, origin_x=later.origin_x, origin_y=later.origin_y,
        data=growth[None].astype(np.float64),
    )
    write_raster(raster, out / f"growth_{earlier.epoch}_{later.epoch}.dmr")
    lines = []
    if args.reference_growth:
        ref = read_raster(args.reference_growth).data[0]
        ref_growth = np.where(np.isfinite(ref), ref, 0).astype(np.int16)
        acc = evaluation.evaluate_growth(growth, ref_growth)
        with open(out / "growth_accuracy.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["users_accuracy", "producers_accuracy", "f1",
                             "tp", "fp", "fn"])
            writer.writerow([repr(acc.users_accuracy), repr(acc.producers_accuracy),
                             repr(acc.f1), acc.tp, acc.fp, acc.fn])
        lines.append(f"growth UA {acc.users_accuracy:.4f} PA "
                     f"{acc.producers_accuracy:.4f} F1 {acc.f1:.4f}")
    _echo_config(args, out, [])
    print("\n".join(lines) if lines else f"growth map written to {out}")
    return 0


def cmd_trends(args):
    out = Path(args.out)
    annual = {}
    for item in args.labels:
        year, _, rest = item.partition("=")
        hpath, _, vpath = rest.partition(",")
        hgrid = labeler.DensityLabelGrid.from_raster(read_raster(hpath))
        vgrid = labeler.DensityLabelGrid.from_raster(read_raster(vpath))
        annual[int(year)] = (hgrid, vgrid)
    if args.regions:
        regions_raster = read_raster(args.regions)
        codes = regions_raster.data[0]
        table = {}
        for part in regions_raster.band_names[0].split(";"):
            if "=" in part:
                code, _, name = part.partition("=")
                try:
                    table[int(code)] = name
                except ValueError:
                    continue
        region_masks = {name: codes == code for code, name in table.items()}
    else:
        any_grid = next(iter(annual.values()))[0]
        region_masks = {"all": np.ones((any_grid.height, any_grid.width), bool)}
    population = None
    if args.population:
        population = {}
        with open(args.population, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["region"], int(row["year"]))
                if key in population:
                    raise DataError(f"duplicate population row for {key}")
                population[key] = float(row["population"])
    rows = evaluation.area_trends(annual, region_masks, population)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "area_trends.csv", "w", newline="") as fh:
        fields = ["region", "year", "dimension", "class", "hectares"]
        if population:
            fields.append("population")
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            row = dict(row)
            row["hectares"] = repr(row["hectares"])
            writer.writerow(row)
    _echo_config(args, out, [])
    print(f"{len(rows)} trend rows written to {out / 'area_trends.csv'}")
    return 0


def cmd_render(args):
    out = Path(args.out)
    raster = read_raster(args.labels)
    vals = raster.data[0]
    labels = np.where(np.isfinite(vals), vals, labeler.UNLABELED).astype(np.int16)
    name = raster.band_names[0]
    if name.startswith("horizontal"):
        colors = CLASS_COLORS["horizontal"]
    elif name.startswith("vertical"):
        colors = CLASS_COLORS["vertical"]
    elif name.startswith("growth"):
        colors = CLASS_COLORS["growth"]
    else:
        raise DataError(f"cannot infer a color table from band {name!r}")
    out.mkdir(parents=True, exist_ok=True)
    target = out / (Path(args.labels).stem + ".ppm")
    write_ppm(labels, colors, target)
    _echo_config(args, out, [])
    print(f"quicklook written to {target}")
    return 0


def cmd_gradcheck(args):
    arch = _resolve(args, "architecture")
    report = run_gradcheck(arch, tolerance=args.tolerance, seed=_resolve(args, "seed"))
    print(report.format(), end="")
    if args.full_model:
        config = _model_config(args, n_classes=3)
        params = init_params(config)
        from .segnet import Tensor

        rng = np.random.default_rng(_resolve(args, "seed"))
        probe = Tensor(rng.standard_normal((1, config.in_bands, 16, 16)) * 0.5)
        full = finite_difference_check(config, params, probe, args.tolerance)
        print(full.format(), end="")
        if not full.passed:
            return 2
    return 0 if report.passed else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Urban-density mapping from multispectral image time series",
    )
    parser.add_argument("--config", help="key = value configuration file")
    sub = parser.add_subparsers(dest="command")

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int)
        return p

    p = add("synth", cmd_synth, "generate a synthetic city scenario + observations")
    p.add_argument("--years", required=True, help="comma list, or start,end with --range")
    p.add_argument("--range", action="store_true")
    p.add_argument("--size", type=int)
    p.add_argument("--noise-std", dest="noise_std", type=float)
    p.add_argument("--qa-dropout", dest="qa_dropout", type=float)
    p.add_argument("--n-observations", dest="n_observations", type=int)
    p.add_argument("--out", required=True)

    p = add("composite", cmd_composite, "season-filtered rolling median composite")
    p.add_argument("--observations", required=True, help="directory with observations.csv")
    p.add_argument("--year", type=int, required=True)
    p.add_argument("--window-years", dest="window_years", type=int)
    p.add_argument("--out", required=True)

    p = add("scales", cmd_scales, "band divisors from the training-year composite")
    p.add_argument("--composite", required=True)
    p.add_argument("--year", type=int, required=True)
    p.add_argument("--percentile", type=float)
    p.add_argument("--out", required=True)

    p = add("standardize", cmd_standardize, "divide a composite by saved band scales")
    p.add_argument("--composite", required=True)
    p.add_argument("--scales", required=True)
    p.add_argument("--out", required=True)

    p = add("label", cmd_label, "density labels from ratio and height grids")
    p.add_argument("--bar", required=True)
    p.add_argument("--height", required=True)
    p.add_argument("--dimension", choices=["horizontal", "vertical"], required=True)
    p.add_argument("--year", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("sample", cmd_sample, "thin, balance and extract training patches")
    p.add_argument("--composite", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--min-distance", dest="min_distance", type=float)
    p.add_argument("--cap-ratio", dest="cap_ratio", type=float)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--validation-fraction", dest="validation_fraction", type=float)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train a segmentation model on a patch dataset")
    p.add_argument("--dataset", required=True, help="directory with train/ and validation/")
    p.add_argument("--architecture", choices=["fcn", "deeplab"])
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--atrous-rates", dest="atrous_rates")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "tile a standardized composite through a model")
    p.add_argument("--model", required=True, help="directory with model.txt/model.bin")
    p.add_argument("--composite", required=True)
    p.add_argument("--year", type=int, required=True)
    p.add_argument("--step", type=int)
    p.add_argument("--out", required=True)

    p = add("smooth", cmd_smooth, "Savitzky-Golay smoothing of annual probabilities")
    p.add_argument("--probabilities", nargs="+", required=True,
                   metavar="YEAR=PATH", help="annual probability rasters")
    p.add_argument("--dimension", choices=["horizontal", "vertical"], required=True)
    p.add_argument("--smooth-window", dest="smooth_window", type=int)
    p.add_argument("--smooth-polyorder", dest="smooth_polyorder", type=int)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "confusion matrix and accuracy metrics")
    p.add_argument("--predicted", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)

    p = add("mcnemar", cmd_mcnemar, "paired McNemar test between two predictions")
    p.add_argument("--model-a", dest="model_a", required=True)
    p.add_argument("--model-b", dest="model_b", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)

    p = add("growth", cmd_growth, "derive (and optionally score) growth labels")
    p.add_argument("--earlier", required=True)
    p.add_argument("--later", required=True)
    p.add_argument("--reference-growth", dest="reference_growth")
    p.add_argument("--out", required=True)

    p = add("trends", cmd_trends, "per-region annual class areas")
    p.add_argument("--labels", nargs="+", required=True,
                   metavar="YEAR=HPATH,VPATH", help="annual horizontal,vertical label grids")
    p.add_argument("--regions", help="region-code raster (codes in band name)")
    p.add_argument("--population", help="CSV with region,year,population")
    p.add_argument("--out", required=True)

    p = add("render", cmd_render, "PPM quicklook of a label grid")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every layer type")
    p.add_argument("--architecture", dest="architecture", choices=["fcn", "deeplab", "both"])
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--full-model", dest="full_model", action="store_true")
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--atrous-rates", dest="atrous_rates")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage/help; map parse failures to exit 1
        return 0 if exc.code == 0 else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args._config = _load_config(args.config) if args.config else {}
        return args.func(args)
    except UsageError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 1
    except (DataError, ValueError, OSError) as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
