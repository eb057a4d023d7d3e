"""Command-line entry point: gen-data, train, verify, simulate, repro, replay.

Exit codes: 0 success, 1 a verification threshold failed, 2 usage or
configuration error, 3 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .gridsim.network import ConfigError
from .gridsim.scenario import FaultScenario, load_scenario
from .matnets import DissipativityModel
from .training import TrainConfig, TrajectoryDataset, generate_dataset, load_config, train
from .training.dataset import EmptyDatasetError

log = logging.getLogger("dissipatgrid")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3
MANIFEST_FORMAT = "dissipatgrid.manifest/1"
SUMMARY_FORMAT = "dissipatgrid.summary/1"
EXPERIMENTS = {"scib": "scib.json", "kundur2a": "kundur2a.json"}


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- helpers -----------------------------------------------------------------

def _resolve(path: str | os.PathLike) -> Path:
    p = Path(path)
    root = os.environ.get("DISSIPATGRID_WORKDIR")
    if root and not p.is_absolute():
        p = Path(root) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: Path, command: list[str], artifacts: dict[str, Path], config: dict | None,
                   seeds: dict, started: float) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "tool_version": __version__,
        "command": command,
        "config": config,
        "seeds": seeds,
        "artifacts": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in artifacts.items()},
        "started": started,
        "finished": time.time(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _load_cfg(args) -> TrainConfig:
    over = {} if args.seed is None else {"seed": args.seed}
    return load_config(args.config, **over)


def _scenario_for(cfg: TrainConfig, override: str | None = None) -> FaultScenario:
    return load_scenario(override or cfg.scenario)


def _load_dataset(path) -> TrajectoryDataset:
    try:
        return TrajectoryDataset.load(path)
    except EmptyDatasetError:
        raise
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: malformed dataset ({exc})") from exc


def _heldout(model: DissipativityModel, ds: TrajectoryDataset):
    frac = model.meta.get("holdout_fraction", 0.0)
    if not frac:
        return ds, ds
    return ds.split(frac, model.meta.get("split_seed", 0))


# -- stages --------------------------------------------------------------------

def stage_gen_data(cfg: TrainConfig, out: Path, argv: list[str]) -> TrajectoryDataset:
    t0 = time.time()
    sc = _scenario_for(cfg)
    ds = generate_dataset(sc, cfg)
    ds.save(out)
    log.info("dataset: %d tuples (%d raw) -> %s", len(ds), ds.raw_count, out)
    write_manifest(_manifest_path(out), argv, {"dataset": out}, cfg.to_dict(), {"seed": cfg.seed}, t0)
    return ds


def stage_train(cfg: TrainConfig, data: Path, out: Path, argv: list[str]) -> DissipativityModel:
    from .plotting import plot_history

    t0 = time.time()
    ds = _load_dataset(data)
    sc = _scenario_for(cfg)
    if ds.n != sc.plant_post.n or ds.m != sc.plant_post.m:
        raise ConfigError(f"dataset dimensions (n={ds.n}, m={ds.m}) do not match scenario "
                          f"{cfg.scenario!r} (n={sc.plant_post.n}, m={sc.plant_post.m})")
    tr, _ = ds.split(cfg.holdout_fraction, cfg.seed) if cfg.holdout_fraction else (ds, None)
    model, hist = train(tr, cfg, anchor=sc.equilibrium.x)
    model.meta.update({"holdout_fraction": cfg.holdout_fraction, "split_seed": cfg.seed,
                       "scenario": cfg.scenario, "dataset_sha256": _sha256(data)})
    model.save(out)
    hist_path = out.with_name(out.stem + ".history.csv")
    fig_path = out.with_name(out.stem + ".history.png")
    hist.to_csv(hist_path)
    plot_history(hist.rows, fig_path)
    write_manifest(_manifest_path(out), argv, {"model": out, "history": hist_path, "history_plot": fig_path},
                   cfg.to_dict(), {"seed": cfg.seed}, t0)
    return model


def stage_verify(cfg: TrainConfig, model_path: Path, data: Path, scenario: str | None, out: Path,
                 argv: list[str]) -> dict:
    from .verify import save_report, verify_model

    t0 = time.time()
    model = DissipativityModel.load(model_path)
    ds = _load_dataset(data)
    if (ds.n, ds.m) != (model.n, model.m):
        raise ConfigError(f"model (n={model.n}, m={model.m}) and dataset (n={ds.n}, m={ds.m}) disagree")
    tr, ho = _heldout(model, ds)
    sc = load_scenario(scenario or model.meta.get("scenario") or cfg.scenario)
    report = verify_model(model, ho, sc, n_probes=cfg.n_probes, seed=cfg.seed,
                          threshold=cfg.violation_threshold, cost=cfg.cost, train_states=tr.x)
    save_report(report, out)
    write_manifest(_manifest_path(out), argv, {"report": out}, cfg.to_dict(), {"seed": cfg.seed}, t0)
    return report


def stage_simulate(scenario: str, model_path: Path | None, out: Path, argv: list[str],
                   cost=None) -> dict:
    from .plotting import plot_runs
    from .verify import eval_closed_loop

    t0 = time.time()
    sc = load_scenario(scenario)
    model = DissipativityModel.load(model_path) if model_path else None
    metrics, traj = eval_closed_loop(sc, model, cost)
    traj.to_csv(out)
    mpath = out.with_name(out.stem + ".metrics.json")
    fig = out.with_name(out.stem + ".png")
    doc = {"format": "dissipatgrid.metrics/1", "scenario": sc.name,
           "controlled": model is not None, **metrics.to_dict()}
    with open(mpath, "w") as fh:
        json.dump(doc, fh, indent=2)
    plot_runs({"controlled" if model else "uncontrolled": traj}, fig, sc.name)
    write_manifest(_manifest_path(out), argv, {"trajectory": out, "metrics": mpath, "figure": fig},
                   None, {}, t0)
    return doc


def _max_domega_after(csv_path: Path, t_from: float, n_angles: int, x_eq: np.ndarray) -> float | None:
    from .gridsim.scenario import read_trajectory_csv

    cols = read_trajectory_csv(csv_path)
    t = cols["t"]
    om = np.column_stack([v for k, v in cols.items() if k.startswith("omega_")])
    sel = t >= t_from - 1e-9
    if not sel.any():
        return None
    return float(np.max(np.abs(om[sel] - x_eq[n_angles:])))


def run_repro(exp: str, workdir: Path, seed: int | None, argv_base: list[str]) -> dict:
    """gen-data, train, verify, simulate (both ways) and a criterion-by-criterion summary."""
    from .plotting import plot_runs
    from .gridsim.scenario import Trajectory

    if exp not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {exp!r}; valid ids: {', '.join(EXPERIMENTS)}")
    workdir.mkdir(parents=True, exist_ok=True)
    over = {} if seed is None else {"seed": seed}
    cfg = load_config(EXPERIMENTS[exp], **over)
    cfg_path = workdir / "config.json"
    with open(cfg_path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
    paths = {k: workdir / v for k, v in {
        "dataset": "dataset.jsonl", "model": "model.json", "report": "report.json",
        "uncontrolled": "uncontrolled.csv", "controlled": "controlled.csv"}.items()}
    timings = {}

    def stage(name, fn, *a):
        t = time.time()
        try:
            res = fn(*a)
        except (ConfigError, UsageError, EmptyDatasetError):
            raise
        except Exception as exc:  # noqa: BLE001 - reported with the stage name
            raise StageError(name, exc) from exc
        timings[name] = round(time.time() - t, 2)
        log.info("[%s] %s done in %.1fs", exp, name, timings[name])
        return res

    c = str(cfg_path)
    stage("gen-data", stage_gen_data, cfg, paths["dataset"],
          argv_base + ["gen-data", "--config", c, "--out", str(paths["dataset"])])
    stage("train", stage_train, cfg, paths["dataset"], paths["model"],
          argv_base + ["train", "--data", str(paths["dataset"]), "--config", c, "--out", str(paths["model"])])
    report = stage("verify", stage_verify, cfg, paths["model"], paths["dataset"], None, paths["report"],
                   argv_base + ["verify", "--model", str(paths["model"]), "--data", str(paths["dataset"]),
                                "--scenario", cfg.scenario, "--config", c, "--out", str(paths["report"])])
    unc = stage("simulate-uncontrolled", stage_simulate, cfg.scenario, None, paths["uncontrolled"],
                argv_base + ["simulate", "--scenario", cfg.scenario, "--out", str(paths["uncontrolled"])],
                cfg.cost)
    ctl = stage("simulate-controlled", stage_simulate, cfg.scenario, paths["model"], paths["controlled"],
                argv_base + ["simulate", "--scenario", cfg.scenario, "--model", str(paths["model"]),
                             "--out", str(paths["controlled"])], cfg.cost)

    sc = load_scenario(cfg.scenario)
    na = sc.plant_post.n_angles
    t_check = sc.t_clear + cfg.settle_after
    dw_late = _max_domega_after(paths["controlled"], t_check, na, sc.equilibrium.x) if ctl["synchronism"] else None
    criteria = {
        "uncontrolled_loses_synchronism": not unc["synchronism"],
        "controlled_keeps_synchronism": bool(ctl["synchronism"]),
        f"controlled_max_domega_after_t_clear_plus_{cfg.settle_after:g}s<=1e-3":
            dw_late is not None and dw_late <= 1e-3,
        "heldout_violation_fraction<=threshold":
            report["dissipativity"]["fraction_bad"] <= cfg.violation_threshold,
        "delta_pd_probe_failure_fraction<=threshold":
            report["delta_pd"]["fraction_bad"] <= cfg.violation_threshold,
    }
    if cfg.final_angle_tol is not None:
        criteria[f"final_angle_error<={cfg.final_angle_tol:g}rad"] = bool(
            ctl["synchronism"] and max(abs(v) for v in ctl["final_ddelta"]) <= cfg.final_angle_tol)
    if exp == "kundur2a":
        criteria["uncontrolled_separation_is_inter_area"] = _inter_area(paths["uncontrolled"], sc)

    runs = {}
    for lab in ("uncontrolled", "controlled"):
        from .gridsim.scenario import read_trajectory_csv

        cols = read_trajectory_csv(paths[lab])
        t = cols["t"]
        xs = np.column_stack([v for k, v in cols.items() if k.startswith(("delta_", "omega_"))])
        us = np.column_stack([v for k, v in cols.items() if k.startswith("u_")])
        meta = unc if lab == "uncontrolled" else ctl
        runs[lab] = Trajectory(t, xs, us, sc.equilibrium.x, na, not meta["synchronism"],
                               meta["diverged_at"], None, sc.t_clear)
    plot_runs(runs, workdir / "comparison.png", f"{exp}: fault cleared at {sc.t_clear:g} s")

    summary = {
        "format": SUMMARY_FORMAT,
        "experiment": exp,
        "seed": cfg.seed,
        "criteria": criteria,
        "passed": all(criteria.values()),
        "values": {
            "heldout_violation_fraction": report["dissipativity"]["fraction_bad"],
            "heldout_violation_max": report["dissipativity"]["max"],
            "delta_pd_failure_fraction": report["delta_pd"]["fraction_bad"],
            "delta_min_eig": report["delta_pd"]["min"],
            "max_domega_after_check_time": dw_late,
            "controlled_final_ddelta": ctl["final_ddelta"],
            "controlled_max_u": ctl["max_u"],
            "uncontrolled_diverged_at": unc["diverged_at"],
            "verify_report_passed": report["passed"],
        },
        "timings_s": timings,
        "artifacts": {k: str(v) for k, v in paths.items()},
    }
    with open(workdir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def _inter_area(csv_path: Path, sc: FaultScenario) -> bool:
    """True when the largest final angle gap is between the two areas (VSG1-2 vs VSG3-4)."""
    from .gridsim.scenario import read_trajectory_csv

    cols = read_trajectory_csv(csv_path)
    rel = np.column_stack([np.zeros_like(cols["t"])] + [cols[f"delta_{i}"] for i in (1, 2, 3)])
    last = rel[-1]
    gap_inter = min(abs(last[i] - last[j]) for i in (0, 1) for j in (2, 3))
    gap_intra = max(abs(last[0] - last[1]), abs(last[2] - last[3]))
    return bool(gap_inter > np.pi and gap_inter > gap_intra)


# -- replay ------------------------------------------------------------------

def replay(manifest_path: Path) -> bool:
    """Re-run a recorded command and compare artifact hashes."""
    with open(manifest_path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"{manifest_path}: /format expected {MANIFEST_FORMAT!r}")
    expected = {k: v["sha256"] for k, v in doc["artifacts"].items()}
    code = main(doc["command"][1:] if doc["command"] and doc["command"][0] == "dissipatgrid"
                else doc["command"])
    if code not in (EXIT_OK, EXIT_FAIL):
        return False
    ok = True
    for k, v in doc["artifacts"].items():
        if k == "history_plot" or k == "figure":  # raster output may embed renderer metadata
            continue
        got = _sha256(Path(v["path"]))
        if got != expected[k]:
            log.error("artifact %s differs: %s != %s", k, got, expected[k])
            ok = False
    return ok


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, default):
        parser.add_argument("--seed", type=int, default=default(None), help="override the config seed")
        parser.add_argument("--threads", type=int, default=default(None), help="BLAS thread count")
        parser.add_argument("--quiet", action="store_true", default=default(False),
                            help="only print warnings and errors")

    p = argparse.ArgumentParser(prog="dissipatgrid", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    global_flags(p, lambda v: v)
    # the same flags are accepted after the subcommand; SUPPRESS keeps the top-level value otherwise
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, lambda v: argparse.SUPPRESS)
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="simulate excited post-fault trajectories")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[common], help="fit the dissipativity networks")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)

    v = sub.add_parser("verify", parents=[common], help="check a trained model; exit 1 if a threshold fails")
    v.add_argument("--model", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--scenario", default=None)
    v.add_argument("--config", default=None, help="thresholds and probe settings (default: built-in)")
    v.add_argument("--out", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a fault scenario, optionally with a learned controller")
    s.add_argument("--scenario", required=True)
    s.add_argument("--model", default=None)
    s.add_argument("--out", required=True)

    r = sub.add_parser("repro", parents=[common], help="full pipeline for a bundled experiment")
    r.add_argument("experiment", help=f"one of: {', '.join(EXPERIMENTS)}")
    r.add_argument("--workdir", default=None)

    rp = sub.add_parser("replay", parents=[common], help="re-run the command in a manifest and compare outputs")
    rp.add_argument("manifest")
    return p


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    from threadpoolctl import threadpool_limits

    threadpool_limits(limits=n)


def _dispatch(args, argv: list[str]) -> int:
    full = ["dissipatgrid"] + argv
    if args.cmd == "gen-data":
        stage_gen_data(_load_cfg(args), _resolve(args.out), full)
        return EXIT_OK
    if args.cmd == "train":
        stage_train(_load_cfg(args), Path(args.data), _resolve(args.out), full)
        return EXIT_OK
    if args.cmd == "verify":
        cfg = _load_cfg(args) if args.config else TrainConfig(**({} if args.seed is None else {"seed": args.seed}))
        rep = stage_verify(cfg, Path(args.model), Path(args.data), args.scenario, _resolve(args.out), full)
        for k, ok in rep["verdicts"].items():
            log.info("%-18s %s", k, "pass" if ok else "FAIL")
        return EXIT_OK if rep["passed"] else EXIT_FAIL
    if args.cmd == "simulate":
        doc = stage_simulate(args.scenario, Path(args.model) if args.model else None, _resolve(args.out), full)
        log.info("synchronism=%s max|d_omega|=%.4g", doc["synchronism"], doc["max_domega"])
        return EXIT_OK
    if args.cmd == "repro":
        root = args.workdir or os.environ.get("DISSIPATGRID_WORKDIR") or "dissipatgrid-runs"
        wd = Path(root) if args.workdir else Path(root) / args.experiment
        base = ["dissipatgrid"] + (["--seed", str(args.seed)] if args.seed is not None else [])
        summary = run_repro(args.experiment, wd, args.seed, base)
        for k, ok in summary["criteria"].items():
            print(f"{'PASS' if ok else 'FAIL'}  {k}")
        return EXIT_OK if summary["passed"] else EXIT_FAIL
    if args.cmd == "replay":
        same = replay(Path(args.manifest))
        print("identical" if same else "DIFFERENT")
        return EXIT_OK if same else EXIT_FAIL
    raise UsageError(f"unknown command {args.cmd!r}")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    try:
        return _dispatch(args, argv)
    except (UsageError, ConfigError, EmptyDatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc.cause, (ConfigError, FileNotFoundError)) else EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
