"""Command line pipeline: simulate, fit, poststratify, diagnose.

Runs are driven by an INI-style config file; every artifact lands in the
configured run directory under a fixed name so a manifest plus the inputs
reproduce any run byte for byte.

Exit codes: 0 success, 2 input error, 3 non-convergence, 4 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from mrpkit import __version__
from mrpkit.data import DataError, load_dataset
from mrpkit.design import ModelSpec, build_layout
from mrpkit.diagnostics import diagnostics_table
from mrpkit.model import LogDensityModel, PriorConfig
from mrpkit.poststrat import calibrate_to_totals, poststratify, predict_cells
from mrpkit.samplers import load_draws, sample_mcmc, save_draws
from mrpkit.synthetic import Scenario, redblue_scenario, write_scenario_files

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3
EXIT_INTERNAL = 4

REPORT_EXCLUDED_STATES = ("AK", "HI", "DC")


@dataclass
class RunConfig:
    survey: str = ""
    cells: str = ""
    states: str = ""
    rung: str = "M1"
    use_ethnicity: bool = False
    state_predictors: tuple[str, ...] = ("avg_income", "prev_rep_share", "region")
    prior_mode: str = "weak"
    coef_scale: float = 5.0
    chains: int = 4
    warmup: int = 1000
    iters: int = 1000
    seed: int = 1
    outdir: str = "run"
    exclude_ak_hi_dc: bool = False

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.rung, self.use_ethnicity, self.state_predictors)

    @property
    def prior(self) -> PriorConfig:
        return PriorConfig(self.prior_mode, self.coef_scale)

    def to_dict(self) -> dict:
        return {
            "survey": self.survey, "cells": self.cells, "states": self.states,
            "rung": self.rung, "use_ethnicity": self.use_ethnicity,
            "state_predictors": list(self.state_predictors),
            "prior_mode": self.prior_mode, "coef_scale": self.coef_scale,
            "chains": self.chains, "warmup": self.warmup, "iters": self.iters,
            "seed": self.seed, "outdir": self.outdir,
            "exclude_ak_hi_dc": self.exclude_ak_hi_dc,
        }


def read_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    cfg = RunConfig()
    if cp.has_section("data"):
        cfg.survey = cp.get("data", "survey", fallback=cfg.survey)
        cfg.cells = cp.get("data", "cells", fallback=cfg.cells)
        cfg.states = cp.get("data", "states", fallback=cfg.states)
    if cp.has_section("model"):
        cfg.rung = cp.get("model", "rung", fallback=cfg.rung)
        cfg.use_ethnicity = cp.getboolean("model", "use_ethnicity",
                                          fallback=cfg.use_ethnicity)
        preds = cp.get("model", "state_predictors", fallback=None)
        if preds:
            cfg.state_predictors = tuple(p.strip() for p in preds.split(","))
    if cp.has_section("prior"):
        cfg.prior_mode = cp.get("prior", "mode", fallback=cfg.prior_mode)
        cfg.coef_scale = cp.getfloat("prior", "coef_scale",
                                     fallback=cfg.coef_scale)
    if cp.has_section("sampler"):
        cfg.chains = cp.getint("sampler", "chains", fallback=cfg.chains)
        cfg.warmup = cp.getint("sampler", "warmup", fallback=cfg.warmup)
        cfg.iters = cp.getint("sampler", "iters", fallback=cfg.iters)
        cfg.seed = cp.getint("sampler", "seed", fallback=cfg.seed)
    if cp.has_section("output"):
        cfg.outdir = cp.get("output", "dir", fallback=cfg.outdir)
    if cp.has_section("report"):
        cfg.exclude_ak_hi_dc = cp.getboolean("report", "exclude_ak_hi_dc",
                                             fallback=cfg.exclude_ak_hi_dc)
    return cfg


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _load(cfg: RunConfig):
    for name, path in (("survey", cfg.survey), ("cells", cfg.cells),
                       ("states", cfg.states)):
        if not path:
            raise DataError(f"config is missing the {name} input path")
        if not os.path.exists(path):
            raise DataError(f"{name} file not found: {path}")
    return load_dataset(cfg.survey, cfg.cells, cfg.states, cfg.spec)


# ---------------------------------------------------------------------------
# subcommands

def cmd_fit(cfg: RunConfig) -> int:
    dataset = _load(cfg)  # validate inputs before touching the output dir
    model = LogDensityModel(dataset, cfg.spec, cfg.prior)
    draws = sample_mcmc(model, chains=cfg.chains, warmup=cfg.warmup,
                        iters=cfg.iters, seed=cfg.seed)
    os.makedirs(cfg.outdir, exist_ok=True)
    save_draws(draws, os.path.join(cfg.outdir, "draws.bin"),
               os.path.join(cfg.outdir, "draws.json"))
    with open(os.path.join(cfg.outdir, "diagnostics.txt"), "w",
              encoding="utf-8") as f:
        f.write(diagnostics_table(draws))
    diag = draws.diagnostics or {}
    converged = bool(diag.get("converged", False))
    with open(os.path.join(cfg.outdir, "diagnostics.json"), "w",
              encoding="utf-8") as f:
        json.dump({k: (np.asarray(v).tolist() if isinstance(v, np.ndarray)
                       else v) for k, v in diag.items()},
                  f, indent=1, sort_keys=True)
        f.write("\n")
    manifest = {
        "tool": f"mrpkit {__version__}",
        "config": cfg.to_dict(),
        "inputs": {"survey": _sha256(cfg.survey), "cells": _sha256(cfg.cells),
                   "states": _sha256(cfg.states)},
        "converged": converged,
        "n_draws": int(draws.n_draws),
        "n_params": int(draws.n_params),
    }
    with open(os.path.join(cfg.outdir, "manifest.json"), "w",
              encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    if not converged:
        print("warning: run stamped non-converged", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _read_recorded(path, states) -> np.ndarray:
    rec = np.full(states.n_states, np.nan)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "state" not in reader.fieldnames \
                or "rep_share" not in reader.fieldnames:
            raise DataError(f"{path}: needs columns state,rep_share")
        for row in reader:
            idx = states.index_of(row["state"].strip())
            rec[idx - 1] = float(row["rep_share"])
    if np.any(np.isnan(rec)):
        missing = [states.labels[i] for i in np.flatnonzero(np.isnan(rec))]
        raise DataError(f"{path}: missing recorded share for {missing[:5]}")
    return rec


def cmd_poststratify(cfg: RunConfig, grouping: str, recorded_path=None,
                     export_draws=False) -> int:
    dataset = _load(cfg)
    layout = build_layout(cfg.spec, dataset.states)
    draws = load_draws(os.path.join(cfg.outdir, "draws.bin"),
                       os.path.join(cfg.outdir, "draws.json"), layout)
    est = predict_cells(draws, dataset.cells, layout)
    if recorded_path:
        rec = _read_recorded(recorded_path, dataset.states)
        est, _ = calibrate_to_totals(est, dataset.cells, rec)
    dims = tuple(d.strip() for d in grouping.split(",")) if grouping else ()
    agg = poststratify(est, dataset.cells, dims, dataset.states)
    name = "_".join(dims) if dims else "national"
    out = os.path.join(cfg.outdir, f"estimates_{name}.csv")
    s = agg.summary()
    with open(out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        keycols = [("state_label" if d == "state" else d) for d in dims]
        w.writerow(keycols + ["mean", "sd", "q05", "q25", "q50", "q75", "q95",
                              "weight"])
        for g, key in enumerate(agg.keys):
            kvals = []
            for d, v in zip(dims, key):
                kvals.append(dataset.states.labels[v - 1] if d == "state"
                             else v)
            w.writerow(kvals + [repr(float(s[k][g])) for k in
                                ("mean", "sd", "q05", "q25", "q50", "q75",
                                 "q95")] + [repr(float(agg.weight[g]))])
    if export_draws:
        dpath = os.path.join(cfg.outdir, f"estimates_{name}_draws.csv")
        np.savetxt(dpath, agg.theta, delimiter=",",
                   header=",".join(str(k) for k in agg.keys), comments="")
    print(out)
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig) -> int:
    dataset = _load(cfg)
    layout = build_layout(cfg.spec, dataset.states)
    draws = load_draws(os.path.join(cfg.outdir, "draws.bin"),
                       os.path.join(cfg.outdir, "draws.json"), layout)
    est = predict_cells(draws, dataset.cells, layout)
    agg = poststratify(est, dataset.cells, ("state", "income"))
    s = agg.summary()
    by_state = poststratify(est, dataset.cells, ("state",))
    state_mean = dict(zip((k[0] for k in by_state.keys),
                          by_state.summary()["mean"]))

    sv = dataset.survey
    raw = {}
    for st, inc, v in zip(sv.state_id, sv.income_cat, sv.vote):
        n, k = raw.get((st, inc), (0, 0))
        raw[(st, inc)] = (n + 1, k + v)

    order = sorted(range(len(agg.keys)),
                   key=lambda g: (-state_mean[agg.keys[g][0]], agg.keys[g]))
    out = os.path.join(cfg.outdir, "diagnostics.csv")
    os.makedirs(cfg.outdir, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["state", "income", "n_respondents", "raw_mean", "raw_se",
                    "model_mean", "model_sd"])
        for g in order:
            st, inc = agg.keys[g]
            label = dataset.states.labels[st - 1]
            if cfg.exclude_ak_hi_dc and label in REPORT_EXCLUDED_STATES:
                continue
            n, k = raw.get((st, inc), (0, 0))
            if n > 0:
                p = float(k) / n
                raw_mean = repr(p)
                raw_se = repr(float(np.sqrt(p * (1 - p) / n)))
            else:
                raw_mean = raw_se = ""  # model columns still populated
            w.writerow([label, inc, n, raw_mean, raw_se,
                        repr(float(s["mean"][g])), repr(float(s["sd"][g]))])
    print(out)
    return EXIT_OK


def cmd_simulate(config_path) -> int:
    cp = configparser.ConfigParser()
    if not os.path.exists(config_path):
        raise DataError(f"config file not found: {config_path}")
    cp.read(config_path)
    if not cp.has_section("scenario"):
        raise DataError("simulate config needs a [scenario] section")
    kind = cp.get("scenario", "kind", fallback="redblue")
    S = cp.getint("scenario", "S", fallback=50)
    n = cp.getint("scenario", "n", fallback=30000)
    seed = cp.getint("scenario", "seed", fallback=0)
    outdir = cp.get("scenario", "outdir", fallback="simdata")
    if kind == "redblue":
        scenario = redblue_scenario(S=S, n=n, seed=seed)
    elif kind == "basic":
        rung = cp.get("scenario", "rung", fallback="M1")
        scenario = Scenario(S=S, rung=rung, n=n, seed=seed)
    else:
        raise DataError(f"unknown scenario kind {kind!r}")
    paths = write_scenario_files(scenario, outdir)
    for p in paths.values():
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mrp",
        description="Multilevel regression and poststratification pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--config", required=True)

    p = sub.add_parser("fit", help="fit the model, write posterior draws")
    p.add_argument("--config", required=True)

    p = sub.add_parser("poststratify", help="aggregate cell estimates")
    p.add_argument("--config", required=True)
    p.add_argument("--grouping", default="state",
                   help="comma-separated dimensions, e.g. state or "
                        "ethnicity,region; empty for national")
    p.add_argument("--recorded", default=None,
                   help="CSV of recorded two-party shares (state,rep_share) "
                        "to calibrate against")
    p.add_argument("--export-draws", action="store_true")

    p = sub.add_parser("diagnose", help="model-vs-raw-data diagnostic table")
    p.add_argument("--config", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config)
        cfg = read_config(args.config)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "poststratify":
            return cmd_poststratify(cfg, args.grouping, args.recorded,
                                    args.export_draws)
        if args.command == "diagnose":
            return cmd_diagnose(cfg)
        return EXIT_INTERNAL
    except (DataError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as err:  # noqa: BLE001
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
