"""Command-line entry point: ``cdvi simulate | train | eval | gap | study``.

Every command accepts ``--config FILE`` (a JSON document of the same keys
as the long flags, with dashes as underscores); explicit flags win over the
file.  Unknown keys are rejected.  Each run writes ``resolved_config.json``
and ``manifest.json`` under ``--out``; feeding the resolved config back with
``--config`` repeats the run.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import inference, metrics, simulator
from . import model as mdl
from .nn import DivergenceError, load_checkpoint, save_checkpoint

SCHEMA_VERSION = 1

# per-command defaults; the keys double as the accepted config keys
DEFAULTS = {
    "simulate": {
        "preset": None, "mu_c": None, "n": 10000, "seed": 0, "burn_in": 10000,
        "sigma_c": simulator.SIGMA_C, "out": None,
    },
    "train": {
        "data": None, "objective": "elbo-c", "m": 1, "k": 1, "family": "gaussian", "seed": 0,
        "temperature": 1.0, "learning_rate": 1e-3, "batch_size": 100, "max_epochs": 100,
        "patience": None, "hidden": [32, 32], "dropout": 0.0, "latent_dim": None,
        "activation": "tanh", "time_transform": "none", "validation_metric": "c_index",
        "time_column": "time", "event_column": "event", "out": None,
    },
    "eval": {
        "checkpoint": None, "data": None, "metrics": "c,ctd,brier", "risk_csv": None,
        "n_prior_samples": 200, "out": None,
    },
    "gap": {
        "checkpoint": None, "data": None, "M": 10000, "elbo_replications": 1000,
        "rows": None, "encoder_override": "none", "seed": 0, "out": None,
    },
    "study": {
        "study": None, "checkpoint": None, "data": None, "replications": None, "seed": 0,
        "m_grid": None, "k_grid": None, "rows": 20, "x": 1.0, "y": 0.0, "out": None,
    },
}
META_KEYS = ("command", "schema_version")


class CliError(Exception):
    pass


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdvi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of defaults for this command")
        sp.add_argument("--out", help="output directory")

    s = sub.add_parser("simulate", help="generate a simulated dataset")
    common(s)
    s.add_argument("--preset", help="one of " + ", ".join(simulator.PRESETS))
    s.add_argument("--mu-c", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--burn-in", type=int)
    s.add_argument("--sigma-c", type=float)

    t = sub.add_parser("train", help="fit a model on a dataset CSV")
    common(t)
    t.add_argument("--data")
    t.add_argument("--objective", help="vanilla | elbo-c | is | dvi")
    t.add_argument("--m", type=int)
    t.add_argument("--k", type=int)
    t.add_argument("--family", help="gaussian | gumbel-min")
    t.add_argument("--seed", type=int)
    t.add_argument("--temperature", type=float)
    t.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--hidden", type=_int_list, help="comma-separated widths")
    t.add_argument("--dropout", type=float)
    t.add_argument("--latent-dim", type=int)
    t.add_argument("--activation")
    t.add_argument("--time-transform", help="none | log | exp")
    t.add_argument("--validation-metric", help="c_index | elbo")
    t.add_argument("--time-column")
    t.add_argument("--event-column")

    e = sub.add_parser("eval", help="test-split metrics for a checkpoint")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--metrics", help="comma-separated subset of " + ",".join(metrics.METRIC_NAMES))
    e.add_argument("--risk-csv", help="CSV with a 'survival' column per data row, used instead of the model")
    e.add_argument("--n-prior-samples", type=int)

    g = sub.add_parser("gap", help="inference-gap report")
    common(g)
    g.add_argument("--checkpoint")
    g.add_argument("--data")
    g.add_argument("--M", type=int)
    g.add_argument("--elbo-replications", type=int)
    g.add_argument("--rows", type=int, help="use only the first N test rows")
    g.add_argument("--encoder-override", help="none | true-posterior")
    g.add_argument("--seed", type=int)

    st = sub.add_parser("study", help="Monte Carlo studies")
    common(st)
    st.add_argument("--study", help="monotonicity | bias-scaling | posterior-slice")
    st.add_argument("--checkpoint")
    st.add_argument("--data")
    st.add_argument("--replications", type=int)
    st.add_argument("--seed", type=int)
    st.add_argument("--m-grid", type=_int_list)
    st.add_argument("--k-grid", type=_int_list)
    st.add_argument("--rows", type=int)
    st.add_argument("--x", type=float)
    st.add_argument("--y", type=float)
    return p


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    defaults = DEFAULTS[command]
    doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise CliError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(defaults) - set(META_KEYS))
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
        if doc.get("command", command) != command:
            raise CliError(f"config was written for {doc['command']!r}, not {command!r}")
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        resolved[key] = flag if flag is not None else doc.get(key, default)
    if not resolved["out"]:
        raise CliError("--out is required")
    return resolved


class Outputs:
    """Tracks files written by a run so a failure can remove them."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def cleanup(self):
        for p in self.files:
            p.unlink(missing_ok=True)

    def finish(self, command, config):
        cfg = self.path("resolved_config.json")
        cfg.write_text(json.dumps({"command": command, "schema_version": SCHEMA_VERSION, **config}, indent=2))
        man = self.path("manifest.json")
        man.write_text(json.dumps({"command": command, "files": [p.name for p in self.files]}, indent=2))


# data helpers -----------------------------------------------------------------

def load_dataset(path, time_column="time", event_column="event"):
    ds = data_mod.load_csv(path, time_column, event_column)
    latent_path = Path(path).with_name("latent.csv")
    if latent_path.exists():
        from dataclasses import replace
        latent = simulator.load_latent(latent_path)
        if len(latent["u"]) == ds.n:
            ds = replace(ds, latent=latent)
    return ds


def load_model(path):
    store, meta = load_checkpoint(path)
    return mdl.CdCvaeModel.from_checkpoint(store, meta["model"]), meta


def model_scale(dataset, meta):
    """Split by the stored seed and map the dataset to the checkpoint's scale."""
    from dataclasses import replace
    rec = data_mod.TransformRecord.from_dict(meta["transform"])
    if dataset.d_x != len(rec.x_mean):
        raise CliError(f"dimension mismatch: checkpoint expects {len(rec.x_mean)} covariates, data has {dataset.d_x}")
    idx = data_mod.split(dataset, meta["split_seed"])
    scaled = replace(dataset, x=rec.x_forward(dataset.x), y=rec.time_forward(dataset.y), transform=rec)
    return scaled, idx


# commands -----------------------------------------------------------------------

def cmd_simulate(cfg, out: Outputs):
    if cfg["preset"]:
        sim_cfg = simulator.preset(cfg["preset"], n=cfg["n"], seed=cfg["seed"], burn_in=cfg["burn_in"],
                                   sigma_c=cfg["sigma_c"])
        if cfg["mu_c"] is not None:
            sim_cfg = simulator.SimConfig(**{**sim_cfg.to_dict(), "mu_c": cfg["mu_c"]})
    elif cfg["mu_c"] is not None:
        sim_cfg = simulator.SimConfig(n=cfg["n"], mu_c=cfg["mu_c"], seed=cfg["seed"],
                                      burn_in=cfg["burn_in"], sigma_c=cfg["sigma_c"])
    else:
        raise CliError("give --preset or --mu-c")
    ds = simulator.gibbs_simulate(sim_cfg)
    for key, name in (("data", "data.csv"), ("latent", "latent.csv"), ("config", "sim_config.json")):
        out.path(name)
    simulator.write_outputs(out.dir, ds, sim_cfg)
    summary = simulator.table_summary(ds)
    out.path("summary.json").write_text(json.dumps(summary, indent=2))
    print(f"censor rate: {100 * summary['censor_rate']:.1f}%")
    for key, val in summary.items():
        print(f"  {key}: {val if not isinstance(val, float) else round(val, 4)}")


def cmd_train(cfg, out: Outputs):
    estimator = mdl.EstimatorConfig(cfg["objective"], cfg["m"], cfg["k"], cfg["temperature"])
    train_cfg = mdl.TrainConfig(cfg["learning_rate"], cfg["batch_size"], cfg["max_epochs"],
                                cfg["patience"], cfg["seed"], cfg["validation_metric"])
    ds = load_dataset(cfg["data"], cfg["time_column"], cfg["event_column"])
    idx = data_mod.split(ds, cfg["seed"])
    scaled = data_mod.standardize(ds, idx.train, cfg["time_transform"])
    model = mdl.CdCvaeModel.create(ds.d_x, cfg["latent_dim"], cfg["hidden"], cfg["activation"],
                                   cfg["dropout"], cfg["family"], cfg["seed"])
    result = mdl.train(model, scaled.subset(idx.train), scaled.subset(idx.validation), estimator, train_cfg)
    meta = {
        "model": result.model.metadata(),
        "estimator": estimator.to_dict(),
        "train": train_cfg.to_dict(),
        "transform": scaled.transform.to_dict(),
        "split_seed": cfg["seed"],
        "feature_names": list(ds.feature_names),
        "best_epoch": result.best_epoch,
        "best_validation": result.best_value,
    }
    save_checkpoint(out.path("checkpoint.json"), result.model.params, meta)
    mdl.write_history(out.path("history.csv"), result.history)
    print(f"trained {len(result.history)} epochs; best validation "
          f"{train_cfg.validation_metric} {result.best_value:.4f} at epoch {result.best_epoch}")


def _read_risk_csv(path, n):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "survival" not in rows[0]:
        raise CliError("risk CSV needs a 'survival' column")
    surv = np.array([float(r["survival"]) for r in rows])
    if len(surv) != n:
        raise CliError(f"risk CSV has {len(surv)} rows, data has {n}")
    return surv


def cmd_eval(cfg, out: Outputs):
    names = [m.strip() for m in str(cfg["metrics"]).split(",") if m.strip()]
    bad = [m for m in names if m not in metrics.METRIC_NAMES]
    if bad or not names:
        raise CliError(f"unknown metric {', '.join(bad) or '(none)'}; valid: {', '.join(metrics.METRIC_NAMES)}")
    raw = load_dataset(cfg["data"])
    if cfg["risk_csv"]:
        seed = 0
        if cfg["checkpoint"]:
            seed = load_checkpoint(cfg["checkpoint"])[1]["split_seed"]
        idx = data_mod.split(raw, seed)
        injected = _read_risk_csv(cfg["risk_csv"], raw.n)[idx.test]
        predict = lambda t: np.repeat(injected[:, None], len(np.atleast_1d(t)), axis=1)
    else:
        if not cfg["checkpoint"]:
            raise CliError("--checkpoint is required unless --risk-csv is given")
        model, meta = load_model(cfg["checkpoint"])
        scaled, idx = model_scale(raw, meta)
        rec = scaled.transform
        x_test = scaled.x[idx.test]
        predict = lambda t: mdl.predict_survival(model, x_test, rec.time_forward(np.atleast_1d(t)),
                                                 cfg["n_prior_samples"])
    test = raw.subset(idx.test)
    censor_km = metrics.kaplan_meier(test.y, test.delta, target="censor")
    t75 = float(np.quantile(test.y[test.delta == 1], 0.75))
    results = []
    for name in names:
        if name == "c":
            times = metrics.quantile_times(test.y, test.delta)
            value = metrics.c_index_quantile_avg(predict(times), test.y, test.delta, times)
            results.append(metrics.MetricResult("c", value, times.tolist(), n=test.n))
        elif name == "ctd":
            results.append(metrics.c_td_ipcw(predict(t75)[:, 0], test.y, test.delta, t75, censor_km))
        else:
            results.append(metrics.brier_ipcw(predict(t75)[:, 0], test.y, test.delta, t75, censor_km))
    metrics.write_report(out.path("metrics.json"), results)
    for r in results:
        print(f"{r.metric}: {r.value:.4f}")


def cmd_gap(cfg, out: Outputs):
    raw = load_dataset(cfg["data"])
    if cfg["encoder_override"] == "true-posterior":
        if not raw.has_ground_truth:
            raise CliError("true-posterior override needs simulated data with latent.csv")
        idx = data_mod.split(raw, 0 if not cfg["checkpoint"] else load_checkpoint(cfg["checkpoint"])[1]["split_seed"])
        model, data, estimator = inference.ground_truth_model(), raw, mdl.EstimatorConfig()
    elif cfg["encoder_override"] == "none":
        if not cfg["checkpoint"]:
            raise CliError("--checkpoint is required")
        model, meta = load_model(cfg["checkpoint"])
        data, idx = model_scale(raw, meta)
        est = meta["estimator"]
        estimator = mdl.EstimatorConfig(est["objective"], est["m"], est["k"], est["temperature"])
    else:
        raise CliError("encoder override must be 'none' or 'true-posterior'")
    rows = idx.test if cfg["rows"] is None else idx.test[: cfg["rows"]]
    report = inference.gap_report(model, data.subset(rows), estimator, cfg["M"],
                                  cfg["elbo_replications"], cfg["seed"])
    report.write(out.path("gap_report.json"))
    print(f"gap {report.gap_estimate:.4f} ± {report.gap_se:.4f} (E-KL {report.e_kl}, C-KL {report.c_kl})")


def cmd_study(cfg, out: Outputs):
    kind = cfg["study"]
    if kind == "bias-scaling":
        grid = cfg["m_grid"] or [4, 8, 16, 32, 64, 128, 256, 512, 1024]
        res = inference.bias_variance_study(m_grid=grid, replications=cfg["replications"] or 10_000,
                                            seed=cfg["seed"])
        res.write_csv(out.path("bias_scaling.csv"))
        res.write_json(out.path("bias_scaling.json"))
        print(f"slopes: IS bias {res.is_bias_slope:.3f}, IS variance {res.is_var_slope:.3f}, "
              f"delta-method bias {res.dvi_bias_slope:.3f}")
        return
    if kind not in ("monotonicity", "posterior-slice"):
        raise CliError("study must be monotonicity, bias-scaling or posterior-slice")
    if not (cfg["checkpoint"] and cfg["data"]):
        raise CliError("--checkpoint and --data are required for this study")
    model, meta = load_model(cfg["checkpoint"])
    data, idx = model_scale(load_dataset(cfg["data"]), meta)
    if kind == "monotonicity":
        grid_m = cfg["m_grid"] or [1, 2, 4, 8, 16, 32]
        grid_k = cfg["k_grid"] or grid_m
        tab = inference.monotonicity_study(model, data.subset(idx.test[: cfg["rows"]]), grid_m, grid_k,
                                           cfg["replications"] or 100_000, cfg["seed"],
                                           meta["estimator"]["temperature"])
        tab.write_csv(out.path("monotonicity.csv"))
        print(f"nondecreasing along both axes: {tab.nondecreasing}")
    else:
        if not data.has_ground_truth:
            raise CliError("posterior slices need simulated data with latent.csv")
        cols = inference.posterior_slice_export(model, data, cfg["x"], cfg["y"],
                                                path=out.path("posterior_slice.csv"))
        print(f"local event rate at (x={cfg['x']}, y={cfg['y']}): {cols['event_rate']:.3f}")


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "gap": cmd_gap, "study": cmd_study}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        cfg = resolve_config(args.command, args)
        out = Outputs(cfg["out"])
        COMMANDS[args.command](cfg, out)
        out.finish(args.command, cfg)
        return 0
    except DivergenceError as exc:
        if out:
            out.cleanup()
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except (CliError, ValueError, FileNotFoundError, KeyError) as exc:
        if out:
            out.cleanup()
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
