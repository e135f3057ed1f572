"""Command-line interface: ingest, detect, estimate, synth, experiment, report,
and the end-to-end pipeline.

Every subcommand records a run manifest (tool version, resolved config,
input digests, seeds, PRNG identifier) sufficient to reproduce its outputs
bit for bit; `--fixed-clock` pins the manifest timestamp for byte-identical
reruns. Exit codes: 0 ok, 1 computation error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import (
    CfbCurve,
    WeibullParams,
    breakdown_profile,
    cdf_function,
    cumulative_frequency,
    empirical_cfb,
    grid_levels,
    record_vector,
    weibull_cdf,
    weibull_quantile,
)
from .estimators import (
    FitOptions,
    default_bounds,
    fit_cfb,
    plm_from_detection,
)
from .experiments import (
    CANONICAL_SETTINGS,
    CANONICAL_TARGETS,
    DEFAULT_BASE_SEED,
    DEFAULT_SEED_STRIDE,
    EXTRA_CASES,
    REPLICATE_VARIABLES,
    CaseSummary,
    ExperimentCase,
    awre_regression,
    canonical_demand,
    censoring_sweep,
    compare_methods,
    run_case,
    sample_size_sweep,
    solve_scale_factor,
    theoretical_bounds,
)
from .metrics import TABLE_COLUMNS, curve_errors
from .pipeline import (
    DetectionConfig,
    MalformedInputError,
    aggregate_minutes,
    detection_from_dict,
    detection_to_dict,
    detect_breakdowns,
    parse_events,
    read_minutes_csv,
    write_minutes_csv,
)
from .synthetic import (
    PRNG_ID,
    GeneratorConfig,
    calibrate_demand_peak,
    generate_pseudo_empirical,
    synth_demand_profile,
)
from .svgplot import Chart, Series, render_chart

logger = logging.getLogger(__name__)

FIXED_CLOCK = "1970-01-01T00:00:00Z"
DEFAULT_QUANTILE_PERCENTS = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 15.0)
PLM_BIAS_NOTE = (
    "product-limit estimates assume every record was exposed at all lower "
    "intensity levels; traffic flow violates that assumption, so this "
    "baseline is biased (kept for comparison only)"
)

# Expected breakdowns per demand record used to size synthetic datasets.
BREAKDOWNS_PER_RECORD = 51.4 / 6486.0


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _timestamp(fixed_clock: bool) -> str:
    if fixed_clock:
        return FIXED_CLOCK
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def write_manifest(
    path: Path,
    subcommand: str,
    config: dict,
    inputs: dict[str, str],
    seed: int | None,
    fixed_clock: bool,
) -> None:
    _write_json(
        path,
        {
            "tool": "capflow",
            "version": __version__,
            "subcommand": subcommand,
            "config": config,
            "inputs": inputs,
            "seed": seed,
            "prng": PRNG_ID,
            "created_utc": _timestamp(fixed_clock),
        },
    )


def _manifest_path(args, out: Path) -> Path:
    if getattr(args, "out_dir", None):
        return Path(args.out_dir) / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _cell(value) -> object:
    if isinstance(value, float):
        return repr(value)
    return value


def _resolve_options(args, defaults: dict) -> dict:
    """Explicit flag > --config file value > built-in default."""
    file_values = {}
    if getattr(args, "config", None):
        file_values = _read_json(Path(args.config))
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_values:
            resolved[key] = file_values[key]
        else:
            resolved[key] = default
    return resolved


# --------------------------------------------------------------------------
# ingest / detect

def cmd_ingest(args) -> int:
    with open(args.input, "rb") as stream:
        events, stats = parse_events(stream)
    minutes = aggregate_minutes(events, DetectionConfig())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as stream:
        write_minutes_csv(minutes, stream)
    logger.info("ingest: %s", stats.as_dict())
    write_manifest(
        _manifest_path(args, out),
        "ingest",
        {"input": str(args.input), "out": str(args.out), "stats": stats.as_dict()},
        {str(args.input): _digest(Path(args.input))},
        None,
        args.fixed_clock,
    )
    return 0


def cmd_detect(args) -> int:
    options = _resolve_options(
        args,
        {"breakdown_speed": 40.0, "discard_speed": 50.0, "recovery_speed": 70.0},
    )
    with open(args.minutes, "r", encoding="utf-8") as stream:
        minutes = read_minutes_csv(stream)
    config = DetectionConfig(**options)
    result = detect_breakdowns(minutes, config)
    out = Path(args.out)
    _write_json(out, detection_to_dict(result))
    write_manifest(
        _manifest_path(args, out),
        "detect",
        {"minutes": str(args.minutes), "out": str(args.out)} | options,
        {str(args.minutes): _digest(Path(args.minutes))},
        None,
        args.fixed_clock,
    )
    return 0


# --------------------------------------------------------------------------
# estimate

def _estimate_payload(detection: dict, method: str, imin, imax, starts) -> dict:
    breakdowns, hist = detection_from_dict(detection)
    if imin is not None and imax is not None:
        bounds = (int(imin), int(imax))
    else:
        bounds = default_bounds(hist, breakdowns)
    empirical = empirical_cfb(breakdowns, bounds)
    payload: dict = {
        "method": method,
        "bounds": [bounds[0], bounds[1]],
        "breakdown_count": len(breakdowns),
        "records_total": hist.total(),
        "empirical_cfb": empirical.to_json_dict(),
    }
    if method == "cfb":
        options = FitOptions(n_scale_starts=starts) if starts else FitOptions()
        fit = fit_cfb(hist, empirical, bounds, options)
        payload.update(fit.to_json_dict())
    else:
        curve = plm_from_detection(breakdowns, hist)
        levels = grid_levels(bounds)
        cdf_grid = np.asarray(curve.cdf_at(levels.astype(float)), dtype=float)
        implied = CfbCurve(
            levels=levels,
            cumulative=np.cumsum(record_vector(hist, bounds) * cdf_grid),
        )
        logger.warning("PLM baseline requested: %s", PLM_BIAS_NOTE)
        payload.update(
            {
                "method_note": PLM_BIAS_NOTE,
                "params": None,
                "survival_steps": {
                    "levels": [float(v) for v in curve.levels],
                    "values": [float(v) for v in curve.survival],
                },
                "cdf_steps": {
                    "levels": [float(v) for v in curve.levels],
                    "values": [float(v) for v in curve.cdf],
                },
                "predicted_cfb": implied.to_json_dict(),
                "sse": curve_errors(implied, empirical).sse,
                "converged": True,
                "iterations": 0,
            }
        )
    return payload


def cmd_estimate(args) -> int:
    options = _resolve_options(
        args, {"method": "cfb", "imin": None, "imax": None, "starts": None}
    )
    detection = _read_json(Path(args.detection))
    payload = _estimate_payload(
        detection, options["method"], options["imin"], options["imax"], options["starts"]
    )
    out = Path(args.out)
    _write_json(out, payload)
    write_manifest(
        _manifest_path(args, out),
        "estimate",
        {"detection": str(args.detection), "out": str(args.out)} | options,
        {str(args.detection): _digest(Path(args.detection))},
        None,
        args.fixed_clock,
    )
    return 0


# --------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    options = _resolve_options(
        args,
        {
            "scale": 150.0, "shape": 6.5, "records": 6486, "peak": None,
            "spread": 0.4, "split": 0.5, "expected": None,
            "profile_seed": 7, "seed": 0,
        },
    )
    params = WeibullParams(scale=options["scale"], shape=options["shape"])
    records = int(options["records"])
    expected = options["expected"]
    if expected is None:
        expected = records * BREAKDOWNS_PER_RECORD
    peak = options["peak"]
    if peak is None:
        peak = calibrate_demand_peak(
            records, params, expected,
            spread=options["spread"], seed=options["profile_seed"],
        )
    hist = synth_demand_profile(
        records, peak, spread=options["spread"], seed=options["profile_seed"]
    )
    bounds = theoretical_bounds(hist, params)
    seed = int(options["seed"])
    curve, realized = generate_pseudo_empirical(
        hist, params, bounds, GeneratorConfig(seed=seed, target_split=options["split"])
    )
    counts = np.diff(curve.cumulative, prepend=0.0)
    payload = {
        "config": {
            "scale": params.scale,
            "shape": params.shape,
            "records": records,
            "spread": options["spread"],
            "peak": peak,
            "profile_seed": options["profile_seed"],
            "target_split": options["split"],
            "expected_total": expected,
        },
        "seed": seed,
        "prng": PRNG_ID,
        "bounds": [bounds[0], bounds[1]],
        "realized_total": realized,
        "realized_counts": [
            [int(l), int(c)] for l, c in zip(curve.levels, counts) if c > 0
        ],
        "pseudo_empirical_cfb": curve.to_json_dict(),
        "demand_histogram": [[level, hist.counts[level]] for level in hist.levels()],
    }
    out = Path(args.out)
    _write_json(out, payload)
    write_manifest(
        _manifest_path(args, out), "synth", payload["config"] | {"out": str(args.out)},
        {}, seed, args.fixed_clock,
    )
    return 0


# --------------------------------------------------------------------------
# experiment

EXPERIMENT_DEFAULTS = {
    "records": 6486,
    "spread": 0.4,
    "profile_seed": 7,
    "expected_total": 51.4,
    "replicates": 15,
    "base_seed": DEFAULT_BASE_SEED,
    "seed_stride": DEFAULT_SEED_STRIDE,
    "settings": [[label, p.scale, p.shape] for label, p in CANONICAL_SETTINGS],
    "targets": list(CANONICAL_TARGETS),
    "extra_cases": [[label, target] for label, target in EXTRA_CASES],
    "censoring_targets": [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 0.999],
    "censoring_shape": 6.5,
    "compare_scale": 150.0,
    "compare_shape": 6.5,
    "table3_target": 51.4,
    "significance": 0.1,
}


def _experiment_config(args) -> dict:
    config = dict(EXPERIMENT_DEFAULTS)
    if args.config:
        config.update(_read_json(Path(args.config)))
    return config


def _base_profile(config):
    params = WeibullParams(*config["settings"][0][1:])
    hist = canonical_demand(
        records=config["records"],
        spread=config["spread"],
        seed=config["profile_seed"],
        expected_total=config["expected_total"],
        params=params,
    )
    return hist, params, theoretical_bounds(hist, params)


def _case_csv_rows(summary: CaseSummary) -> tuple[list[str], list[list]]:
    header = (
        ["variable"]
        + [f"rep_{r.replicate}" for r in summary.replicates]
        + ["mean", "sd", "max"]
    )
    rows = []
    for variable in REPLICATE_VARIABLES:
        rows.append(
            [variable]
            + [_cell(r.value(variable)) for r in summary.replicates]
            + [_cell(summary.mean[variable]), _cell(summary.sd[variable]),
               _cell(summary.max[variable])]
        )
    rows.append(
        ["converged"]
        + [int(r.converged) for r in summary.replicates]
        + [_cell(sum(r.converged for r in summary.replicates) / len(summary.replicates)), "", ""]
    )
    return header, rows


def _write_case(out_dir: Path, summary: CaseSummary) -> None:
    header, rows = _case_csv_rows(summary)
    _write_csv(out_dir / f"case_{summary.case.case_id}.csv", header, rows)


def _write_flat(out_dir: Path, flat) -> None:
    _write_csv(
        out_dir / "awre_dataset.csv",
        ["tf_records", "bd_records", "awre_cf", "awre_cdf", "case_id", "seed"],
        [
            [row.tf_records, row.bd_records, _cell(row.awre_cf), _cell(row.awre_cdf),
             row.case_id, row.seed]
            for row in flat
        ],
    )


def cmd_experiment(args) -> int:
    config = _experiment_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hist, _, bounds = _base_profile(config)
    settings = [(label, WeibullParams(scale, shape))
                for label, scale, shape in config["settings"]]
    options = FitOptions()
    study = args.study

    if study == "table3":
        factor = solve_scale_factor(
            hist, settings[0][1], bounds, config["table3_target"]
        )
        if factor is None:
            raise ValueError("table3 target total is unreachable on this profile")
        case = ExperimentCase(
            case_id="table3",
            scale_factor=factor,
            true_params=settings[0][1],
            replicates=config["replicates"],
            base_seed=config["base_seed"],
        )
        _write_case(out_dir, run_case(case, hist, bounds, options))
    elif study in ("table5", "regression"):
        extras = config["extra_cases"] if study == "regression" else ()
        sweep = sample_size_sweep(
            hist,
            settings,
            config["targets"],
            bounds,
            extra_cases=[(label, target) for label, target in extras],
            replicates=config["replicates"],
            base_seed=config["base_seed"],
            seed_stride=config["seed_stride"],
            options=options,
        )
        for summary in sweep.cases:
            _write_case(out_dir, summary)
        _write_flat(out_dir, sweep.flat)
        _write_csv(
            out_dir / "sweep_summary.csv",
            ["case_id", "tf_records", "theoretical_queues", "scale_factor"]
            + [f"mean_{v}" for v in REPLICATE_VARIABLES],
            [
                [s.case.case_id, s.tf_records, _cell(s.theoretical_queues),
                 _cell(s.case.scale_factor)]
                + [_cell(s.mean[v]) for v in REPLICATE_VARIABLES]
                for s in sweep.cases
            ],
        )
        if study == "regression":
            reports = {}
            for response in ("awre_cdf", "awre_cf"):
                regression = awre_regression(
                    sweep.flat, response=response, significance=config["significance"]
                )
                reports[response] = {
                    "candidates": [
                        {
                            "name": model.name,
                            "terms": list(model.terms),
                            "skipped_reason": model.skipped_reason,
                            "result": model.result.to_json_dict() if model.result else None,
                        }
                        for model in regression.candidates
                    ],
                    "best": regression.best.name if regression.best else None,
                    "dropped_rows": regression.dropped_rows,
                }
            _write_json(out_dir / "regression.json", reports)
            scatter = Series(
                label="replicates",
                x=[row.bd_records for row in sweep.flat],
                y=[row.awre_cdf for row in sweep.flat],
                kind="scatter",
            )
            chart = Chart(
                title="CDF error vs recorded breakdowns",
                x_label="breakdown records",
                y_label="weighted relative CDF error",
                series=[scatter],
            )
            best = awre_regression(sweep.flat, significance=config["significance"]).best
            if best is not None and best.result is not None:
                coef = dict(zip(best.result.names, best.result.coefficients))
                xs = np.linspace(
                    max(1.0, min(scatter.x)), max(scatter.x), 100
                )
                ys = np.full_like(xs, coef.get("intercept", 0.0))
                for term, values in (
                    ("bd_records", xs),
                    ("ln_bd_records", np.log(xs)),
                ):
                    if term in coef:
                        ys = ys + coef[term] * values
                chart.series.append(
                    Series(label=f"model {best.name}", x=list(xs), y=list(ys))
                )
            (out_dir / "awre_scatter.svg").write_text(render_chart(chart), encoding="utf-8")
    elif study == "censoring":
        points = censoring_sweep(
            hist, config["censoring_targets"], bounds,
            shape=config["censoring_shape"], options=options,
        )
        _write_csv(
            out_dir / "censoring_sweep.csv",
            ["censoring_target", "censoring_achieved", "scale", "shape"]
            + [f"plm_{c}" for c in TABLE_COLUMNS] + [f"fit_{c}" for c in TABLE_COLUMNS],
            [
                [_cell(p.target_censoring), _cell(p.achieved_censoring),
                 _cell(p.params.scale), _cell(p.params.shape)]
                + [_cell(v) for v in p.plm.to_csv_row("plm")[1:]]
                + [_cell(v) for v in p.fit.to_csv_row("fit")[1:]]
                for p in points
            ],
        )
        chart = Chart(
            title="Product-limit error vs censoring rate",
            x_label="censored share of records",
            y_label="relative error",
            series=[
                Series("ARE CDF", [p.target_censoring for p in points],
                       [p.plm.are_cdf for p in points]),
                Series("AWRE CDF", [p.target_censoring for p in points],
                       [p.plm.awre_cdf for p in points]),
                Series("ARE CFB", [p.target_censoring for p in points],
                       [p.plm.are_cf for p in points]),
                Series("AWRE CFB", [p.target_censoring for p in points],
                       [p.plm.awre_cf for p in points]),
            ],
        )
        (out_dir / "censoring_sweep.svg").write_text(render_chart(chart), encoding="utf-8")
    elif study == "compare":
        params = WeibullParams(config["compare_scale"], config["compare_shape"])
        rows = []
        for i in range(config["replicates"]):
            seed = config["base_seed"] + i
            comparison = compare_methods(hist, params, bounds, seed, options)
            rows.append(
                [seed, comparison.realized_queues]
                + [_cell(v) for v in comparison.fit.to_csv_row("fit")[1:]]
                + [_cell(v) for v in comparison.plm.to_csv_row("plm")[1:]]
                + [_cell(comparison.ratios["awre_cdf"])]
            )
        _write_csv(
            out_dir / "method_comparison.csv",
            ["seed", "realized_queues"]
            + [f"fit_{c}" for c in TABLE_COLUMNS] + [f"plm_{c}" for c in TABLE_COLUMNS]
            + ["awre_cdf_ratio"],
            rows,
        )
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown study {study}")

    write_manifest(
        out_dir / "manifest.json",
        f"experiment:{study}",
        config,
        {str(args.config): _digest(Path(args.config))} if args.config else {},
        config["base_seed"],
        args.fixed_clock,
    )
    return 0


# --------------------------------------------------------------------------
# report

def _result_quantile(result: dict, probability: float) -> float | None:
    if result.get("params"):
        params = WeibullParams.from_json_dict(result["params"])
        return float(weibull_quantile(params, probability))
    steps = result.get("cdf_steps")
    if not steps:
        return None
    values = np.asarray(steps["values"], dtype=float)
    levels = np.asarray(steps["levels"], dtype=float)
    hit = np.nonzero(values >= probability)[0]
    return float(levels[hit[0]]) if len(hit) else None


def _result_cdf_series(result: dict) -> tuple[list[float], list[float]]:
    levels = [float(v) for v in result["predicted_cfb"]["levels"]]
    if result.get("params"):
        params = WeibullParams.from_json_dict(result["params"])
        return levels, [float(v) for v in weibull_cdf(params, np.asarray(levels))]
    steps = result.get("cdf_steps", {"levels": [], "values": []})
    grid = np.asarray(levels)
    step_levels = np.asarray(steps["levels"], dtype=float)
    step_values = np.concatenate(([0.0], np.asarray(steps["values"], dtype=float)))
    idx = np.searchsorted(step_levels, grid, side="left")
    return levels, [float(v) for v in step_values[idx]]


def write_report(
    result_a: dict,
    result_b: dict | None,
    out_dir: Path,
    quantile_percents=DEFAULT_QUANTILE_PERCENTS,
) -> list[Path]:
    """Overlay chart plus quantile comparison tables for one or two estimates."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    series: list[Series] = []
    for tag, result in (("A", result_a), ("B", result_b)):
        if result is None:
            continue
        empirical = result.get("empirical_cfb")
        if empirical:
            series.append(
                Series(
                    label=f"{tag} empirical CFB",
                    x=[float(v) for v in empirical["levels"]],
                    y=[float(v) for v in empirical["values"]],
                    kind="step",
                )
            )
        else:
            logger.warning("result %s has no empirical curve; series omitted", tag)
        predicted = result["predicted_cfb"]
        series.append(
            Series(
                label=f"{tag} fitted CFB",
                x=[float(v) for v in predicted["levels"]],
                y=[float(v) for v in predicted["values"]],
            )
        )
        cdf_x, cdf_y = _result_cdf_series(result)
        series.append(
            Series(label=f"{tag} capacity CDF", x=cdf_x, y=cdf_y, axis="right")
        )
    chart = Chart(
        title="Cumulative breakdown frequency and capacity CDF",
        x_label="traffic intensity (PCE per interval)",
        y_label="cumulative breakdowns",
        y2_label="breakdown probability",
        series=series,
    )
    overlay = out_dir / "report_overlay.svg"
    overlay.write_text(render_chart(chart), encoding="utf-8")
    written.append(overlay)

    quantile_rows = []
    for percent in quantile_percents:
        p = percent / 100.0
        qa = _result_quantile(result_a, p)
        row: list = [_cell(float(percent)), _cell(qa) if qa is not None else ""]
        if result_b is not None:
            qb = _result_quantile(result_b, p)
            if qa is not None and qb is not None:
                row += [_cell(qb), _cell(qb - qa), _cell(100.0 * (qb - qa) / qa)]
            else:
                row += ["" if qb is None else _cell(qb), "", ""]
        quantile_rows.append(row)
    header = ["probability_pct", "intensity_a"]
    if result_b is not None:
        header += ["intensity_b", "abs_difference_pce", "rel_difference_pct"]
    quantiles = out_dir / "report_quantiles.csv"
    _write_csv(quantiles, header, quantile_rows)
    written.append(quantiles)

    if result_b is not None:
        grid_a = {int(l): float(v) for l, v in zip(result_a["predicted_cfb"]["levels"],
                                                   result_a["predicted_cfb"]["values"])}
        grid_b = {int(l): float(v) for l, v in zip(result_b["predicted_cfb"]["levels"],
                                                   result_b["predicted_cfb"]["values"])}
        levels_a, values_a = _result_cdf_series(result_a)
        levels_b, values_b = _result_cdf_series(result_b)
        cdf_a = {int(l): v for l, v in zip(levels_a, values_a)}
        cdf_b = {int(l): v for l, v in zip(levels_b, values_b)}
        shared = sorted(set(grid_a) & set(grid_b))
        rows = []
        for level in shared:
            if grid_a[level] <= 0 or cdf_a[level] <= 0:
                continue
            rows.append([
                level,
                _cell((grid_a[level] - grid_b[level]) / grid_a[level]),
                _cell((cdf_a[level] - cdf_b[level]) / cdf_a[level]),
            ])
        reldiff = out_dir / "report_reldiff.csv"
        _write_csv(reldiff, ["intensity", "rel_diff_cfb", "rel_diff_cdf"], rows)
        written.append(reldiff)
    return written


def cmd_report(args) -> int:
    result_a = _read_json(Path(args.a))
    result_b = _read_json(Path(args.b)) if args.b else None
    if args.quantiles is not None:
        percents = tuple(float(v) for v in args.quantiles.split(","))
    else:
        resolved = _resolve_options(args, {"quantiles": list(DEFAULT_QUANTILE_PERCENTS)})
        percents = tuple(float(v) for v in resolved["quantiles"])
    out_dir = Path(args.out_dir)
    write_report(result_a, result_b, out_dir, percents)
    inputs = {str(args.a): _digest(Path(args.a))}
    if args.b:
        inputs[str(args.b)] = _digest(Path(args.b))
    write_manifest(
        out_dir / "manifest.json",
        "report",
        {"a": str(args.a), "b": args.b and str(args.b), "quantiles": list(percents)},
        inputs,
        None,
        args.fixed_clock,
    )
    return 0


# --------------------------------------------------------------------------
# pipeline

PIPELINE_DEFAULTS = {
    "method": "cfb",
    "breakdown_speed": 40.0,
    "discard_speed": 50.0,
    "recovery_speed": 70.0,
    "imin": None,
    "imax": None,
    "starts": None,
    "quantile_percents": list(DEFAULT_QUANTILE_PERCENTS),
}


def _load_pipeline_config(path: Path) -> dict:
    payload = _read_json(path)
    if isinstance(payload, dict) and payload.get("tool") == "capflow" and "config" in payload:
        payload = payload["config"]  # re-run straight from an emitted manifest
    config = dict(PIPELINE_DEFAULTS)
    config.update(payload)
    if "events" not in config:
        raise MalformedInputError(f"pipeline config {path} lacks an 'events' input path")
    if "out_dir" not in config:
        raise MalformedInputError(f"pipeline config {path} lacks an 'out_dir'")
    return config


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise type(exc)(f"{name}: {exc}") from exc


def cmd_pipeline(args) -> int:
    if not args.config:
        raise MalformedInputError("pipeline requires --config <json>")
    config = _load_pipeline_config(Path(args.config))
    if args.out_dir:
        config["out_dir"] = str(args.out_dir)
    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    events_path = Path(config["events"])

    def run_ingest():
        with open(events_path, "rb") as stream:
            events, stats = parse_events(stream)
        minutes = aggregate_minutes(events, DetectionConfig())
        with (out_dir / "minutes.csv").open("w", encoding="utf-8", newline="") as stream:
            write_minutes_csv(minutes, stream)
        return minutes, stats

    minutes, stats = _stage("ingest", run_ingest)
    detection_config = DetectionConfig(
        breakdown_speed=config["breakdown_speed"],
        discard_speed=config["discard_speed"],
        recovery_speed=config["recovery_speed"],
    )
    result = _stage("detect", detect_breakdowns, minutes, detection_config)
    _write_json(out_dir / "detection.json", detection_to_dict(result))

    payload = _stage(
        "estimate",
        _estimate_payload,
        detection_to_dict(result),
        config["method"],
        config["imin"],
        config["imax"],
        config["starts"],
    )
    _write_json(out_dir / "estimate.json", payload)
    if config["method"] == "plm":
        print(f"note: {PLM_BIAS_NOTE}")

    _stage(
        "report",
        write_report,
        payload,
        None,
        out_dir,
        tuple(config["quantile_percents"]),
    )
    write_manifest(
        out_dir / "manifest.json",
        "pipeline",
        config | {"ingest_stats": stats.as_dict()},
        {str(events_path): _digest(events_path)},
        None,
        args.fixed_clock,
    )
    return 0


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capflow",
        description="Stochastic highway capacity estimation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"capflow {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--fixed-clock", action="store_true",
                        help="pin manifest timestamps for byte-identical reruns")
    common.add_argument("--out-dir", default=None, help="directory for outputs/manifest")
    common.add_argument("--seed", type=int, default=None, help="seed override where applicable")
    common.add_argument("--config", default=None,
                        help="JSON file supplying defaults for tunable options")

    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", parents=[common], help="events CSV -> minutes CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("detect", parents=[common], help="minutes CSV -> detection JSON")
    p.add_argument("--minutes", required=True)
    p.add_argument("--breakdown-speed", type=float, default=None)
    p.add_argument("--discard-speed", type=float, default=None)
    p.add_argument("--recovery-speed", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("estimate", parents=[common], help="fit a capacity distribution")
    p.add_argument("--method", choices=("cfb", "plm"), default=None)
    p.add_argument("--detection", required=True)
    p.add_argument("--imin", type=int, default=None)
    p.add_argument("--imax", type=int, default=None)
    p.add_argument("--starts", type=int, default=None,
                   help="scale starts in the multi-start grid (default 5)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("synth", parents=[common], help="generate pseudo-empirical data")
    p.add_argument("--lambda", dest="scale", type=float, default=None)
    p.add_argument("--gamma", dest="shape", type=float, default=None)
    p.add_argument("--records", type=int, default=None)
    p.add_argument("--peak", type=float, default=None,
                   help="demand profile peak; calibrated when omitted")
    p.add_argument("--spread", type=float, default=None)
    p.add_argument("--split", type=float, default=None)
    p.add_argument("--expected", type=float, default=None,
                   help="expected breakdown total used for calibration")
    p.add_argument("--profile-seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("experiment", parents=[common], help="run a simulation study")
    p.add_argument("study", choices=("table3", "table5", "censoring", "compare", "regression"))
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("report", parents=[common], help="render charts and quantile tables")
    p.add_argument("--a", required=True, help="primary estimate JSON")
    p.add_argument("--b", default=None, help="optional comparison estimate JSON")
    p.add_argument("--quantiles", default=None,
                   help="probability levels in percent, comma separated")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("pipeline", parents=[common], help="ingest -> detect -> fit -> report")
    p.set_defaults(handler=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (MalformedInputError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"capflow: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError) as exc:
        print(f"capflow: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
