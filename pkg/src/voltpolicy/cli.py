"""Command-line entry point: ``voltpolicy {gen,train,eval,baseline,export-plots}``.

Every subcommand reads one JSON run configuration (``--config``), applies
flag overrides (flags win) and writes its artifacts under ``--out`` together
with the resolved configuration, so each output can be regenerated.

Exit codes
----------
0  success
2  configuration error (bad flag, unknown key, invalid value)
3  data error (missing or malformed feeder, profiles, scenarios, checkpoint)
4  numeric abort (training diverged, every power flow failed)
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .estimator import VoltVarPolicy, ZeroPolicy, resolve_feeder
from .evaluation import EvalReport, evaluate_policy, opf_sweep, plot_extracts, write_report
from .feeder import FeederError
from .scenarios import (
    ScenarioError,
    bundled_profiles_path,
    generate_dataset,
    load_profiles,
    read_scenarios,
    split,
    write_scenarios,
)
from .training import TrainConfig, TrainingAborted

__all__ = ["main", "RunConfig", "load_run_config", "parse_mask", "ConfigError", "DataError"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

logger = logging.getLogger("voltpolicy")


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


TRAIN_KEYS = {f.name for f in fields(TrainConfig)} | {"init_scale", "hidden_sizes", "standardize"}


@dataclass
class RunConfig:
    feeder: str | None = None
    profiles: str | None = None
    noise_sigma_ratio: float = 0.1
    replicas: int = 5
    train_fraction: float = 0.8
    mask: list | None = None
    train: dict = field(default_factory=dict)
    baselines: list = field(default_factory=lambda: ["none"])
    split: str = "test"
    out: str = "runs/default"
    seed: int = 0

    def train_config(self) -> TrainConfig:
        kw = {k: v for k, v in self.train.items() if k in {f.name for f in fields(TrainConfig)}}
        kw["seed"] = self.seed
        try:
            return TrainConfig(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from exc

    def to_dict(self) -> dict:
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc["train"] = dict(self.train)
        return doc


def load_run_config(path) -> RunConfig:
    """Read a JSON run configuration; unknown keys are errors."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    train = doc.get("train", {})
    if not isinstance(train, dict):
        raise ConfigError(f"{path}: 'train' must be an object")
    bad = sorted(set(train) - TRAIN_KEYS)
    if bad:
        raise ConfigError(f"{path}: unknown train keys {bad}")
    cfg = RunConfig(**doc)
    base = path.parent
    for key in ("feeder", "profiles"):
        value = getattr(cfg, key)
        if value is not None and not Path(value).is_absolute():
            setattr(cfg, key, str(base / value))
    return cfg


def parse_mask(text: str, solar_buses=()) -> list | None:
    """``"full"``, ``"solar"``, ids and ranges, e.g. ``"solar,2-11"``."""
    ids = set()
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        if token == "full":
            return None
        if token == "solar":
            ids.update(int(b) for b in solar_buses)
        elif "-" in token:
            lo, hi = token.split("-", 1)
            try:
                ids.update(range(int(lo), int(hi) + 1))
            except ValueError:
                raise ConfigError(f"bad mask range {token!r}") from None
        else:
            try:
                ids.add(int(token))
            except ValueError:
                raise ConfigError(f"bad mask entry {token!r}") from None
    if not ids:
        raise ConfigError("empty meter mask")
    return sorted(ids)


# -- argument handling ---------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--formulation", choices=["avg", "cc"])
    common.add_argument("--alpha", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--gradient-mode", choices=["analytic", "zeroth-order"])
    common.add_argument("--epsilon", type=float)
    common.add_argument("--mask", help='meter mask: "full", "solar", ids and ranges ("solar,2-11")')
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="voltpolicy", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate and split the scenario dataset")
    sub.add_parser("train", parents=[common], help="train a policy on the training split")
    for name, helptext in (("eval", "evaluate a trained policy"), ("baseline", "run baselines only")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--split", choices=["train", "test"])
        sp.add_argument("--baseline", help='comma list from "none", "opf"')
        if name == "eval":
            sp.add_argument("--checkpoint", help="defaults to OUT/checkpoint.json")
    sp = sub.add_parser("export-plots", parents=[common], help="CSV plot extracts from a report")
    sp.add_argument("--report", help="defaults to OUT/eval_report.json")
    return p


def _resolve(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    overrides = {
        "formulation": args.formulation,
        "alpha": args.alpha,
        "epochs": args.epochs,
        "gradient_mode": args.gradient_mode,
        "epsilon": args.epsilon,
    }
    cfg.train.update({k: v for k, v in overrides.items() if v is not None})
    if args.mask is not None:
        cfg.mask = args.mask
    if isinstance(cfg.mask, str):
        solar = resolve_feeder(cfg.feeder).solar_buses if "solar" in cfg.mask else ()
        cfg.mask = parse_mask(cfg.mask, solar)
    elif cfg.mask is not None:
        try:
            cfg.mask = sorted({int(b) for b in cfg.mask})
        except (TypeError, ValueError):
            raise ConfigError(f"bad mask {cfg.mask!r}") from None
    if getattr(args, "split", None):
        cfg.split = args.split
    if getattr(args, "baseline", None):
        cfg.baselines = [b.strip() for b in args.baseline.split(",") if b.strip()]
    unknown = set(cfg.baselines) - {"none", "opf"}
    if unknown:
        raise ConfigError(f"unknown baselines {sorted(unknown)}")
    if cfg.split not in ("train", "test"):
        raise ConfigError("split must be 'train' or 'test'")
    cfg.train_config()  # validate early
    return cfg


def _feeder(cfg):
    try:
        return resolve_feeder(cfg.feeder)
    except (FeederError, OSError, json.JSONDecodeError) as exc:
        raise DataError(f"feeder: {exc}") from exc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(type(obj).__name__)


def _read_split(cfg, which):
    path = Path(cfg.out) / f"{which}.csv"
    if not path.is_file():
        raise DataError(f"{path} not found; run 'voltpolicy gen' first")
    data = read_scenarios(path)
    if len(data) == 0:
        raise DataError(f"{path}: no scenarios")
    return data


# -- subcommands -------------------------------------------------------------------

def cmd_gen(cfg: RunConfig) -> int:
    feeder = _feeder(cfg)
    profiles_path = cfg.profiles or bundled_profiles_path()
    profiles = load_profiles(profiles_path)
    if profiles.p_c.shape[1] != feeder.n_buses:
        raise DataError(f"profiles have {profiles.p_c.shape[1]} buses, feeder has {feeder.n_buses}")
    data = generate_dataset(profiles, cfg.noise_sigma_ratio, cfg.replicas, seed=cfg.seed)
    train_set, test_set = split(data, cfg.train_fraction, shuffle_seed=cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scenarios(data, out / "scenarios.csv")
    write_scenarios(train_set, out / "train.csv")
    write_scenarios(test_set, out / "test.csv")
    _write_json(out / "manifest.json", {
        "config": cfg.to_dict(),
        "n_scenarios": len(data),
        "n_train": len(train_set),
        "n_test": len(test_set),
        "digests": {"all": data.digest(), "train": train_set.digest(), "test": test_set.digest()},
    })
    print(f"wrote {len(data)} scenarios ({len(train_set)} train / {len(test_set)} test) to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    feeder = _feeder(cfg)
    train_set = _read_split(cfg, "train")
    tc = cfg.train_config()
    extra = {k: cfg.train[k] for k in ("init_scale", "hidden_sizes", "standardize") if k in cfg.train}
    est = VoltVarPolicy(
        feeder=feeder,
        formulation=tc.formulation,
        alpha=tc.alpha,
        epochs=tc.epochs,
        lr_w=tc.lr_w,
        lr_t=tc.lr_t,
        mu_lambda0=tc.mu_lambda0,
        gradient_mode=tc.gradient_mode,
        epsilon=tc.epsilon,
        sigma_delta=tc.sigma_delta,
        zo_samples=tc.zo_samples,
        metered_buses=cfg.mask,
        max_pf_iter=tc.max_pf_iter,
        recourse_budget=tc.recourse_budget,
        seed=cfg.seed,
        **extra,
    )
    est.fit(train_set)
    out = Path(cfg.out)
    est.save(out / "checkpoint.json", run_config=cfg.to_dict(), train_config=est.config_.to_dict())
    (out / "train_log.csv").write_text(est.log_.to_csv())
    _write_json(out / "config.resolved.json", cfg.to_dict())
    last = est.log_.rows[-1] if len(est.log_) else {}
    print(f"trained {tc.formulation}/{tc.gradient_mode} for {len(est.log_)} epochs; last epoch {last}")
    return EXIT_OK


def _baselines(cfg, feeder, data):
    reports = {}
    if "none" in cfg.baselines:
        reports["no_compensation"] = evaluate_policy(ZeroPolicy(feeder), feeder, data, strategy="no_compensation")
    if "opf" in cfg.baselines:
        reports["deterministic_opf"] = opf_sweep(feeder, data)
    return reports


def _summary(reports):
    for name, r in reports.items():
        p = r.violation_probability()
        print(f"{name:>18}: mean loss {r.mean_loss:.6f}  max violation prob {p.max():.4f}  "
              f"divergent {len(r.divergent)}")


def cmd_eval(cfg: RunConfig, checkpoint=None) -> int:
    feeder = _feeder(cfg)
    ckpt = Path(checkpoint) if checkpoint else Path(cfg.out) / "checkpoint.json"
    if not ckpt.is_file():
        raise DataError(f"checkpoint not found: {ckpt}")
    try:
        est = VoltVarPolicy.load(ckpt, feeder)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{ckpt}: {exc}") from exc
    stored = list(est.mask_.metered_buses)
    if cfg.mask is not None and list(cfg.mask) != stored:
        raise DataError(f"meter mask {cfg.mask} does not match checkpoint mask {stored}")
    data = _read_split(cfg, cfg.split)
    reports = {"policy": evaluate_policy(est, feeder, data, strategy="policy", metadata={"checkpoint": ckpt.name})}
    reports.update(_baselines(cfg, feeder, data))
    out = Path(cfg.out)
    write_report(out / "eval_report.json", reports, extra={"config": cfg.to_dict(), "split": cfg.split})
    _export(reports, out)
    _summary(reports)
    return EXIT_OK


def cmd_baseline(cfg: RunConfig) -> int:
    feeder = _feeder(cfg)
    data = _read_split(cfg, cfg.split)
    reports = _baselines(cfg, feeder, data)
    if not reports:
        raise ConfigError("no baselines selected")
    out = Path(cfg.out)
    write_report(out / "baseline_report.json", reports, extra={"config": cfg.to_dict(), "split": cfg.split})
    _summary(reports)
    return EXIT_OK


def report_from_dict(doc: dict) -> EvalReport:
    """Rebuild an :class:`EvalReport` from its JSON form (setpoints are not stored)."""
    n = len(doc["mean_voltage"])
    v = np.array(doc["voltages"], dtype=float).reshape(-1, n)
    return EvalReport(
        strategy=doc["strategy"],
        scenario_index=np.array(doc["scenario_index"], dtype=int),
        timestamps=np.array(doc["timestamps"], dtype=int),
        losses=np.array(doc["losses"], dtype=float),
        voltages=v,
        setpoints=np.zeros_like(v),
        divergent=list(doc["divergent"]),
        v_min=np.array(doc["v_min"], dtype=float),
        v_max=np.array(doc["v_max"], dtype=float),
        metadata=doc.get("metadata", {}),
    )


def _export(reports, out: Path) -> None:
    plots = out / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    for name, text in plot_extracts(reports).items():
        (plots / name).write_text(text)


def cmd_export_plots(cfg: RunConfig, report=None) -> int:
    path = Path(report) if report else Path(cfg.out) / "eval_report.json"
    if not path.is_file():
        raise DataError(f"report not found: {path}")
    try:
        doc = json.loads(path.read_text())
        reports = {k: report_from_dict(v) for k, v in doc["strategies"].items()}
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    _export(reports, path.parent)
    print(f"wrote plot extracts to {path.parent / 'plots'}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "baseline":
            return cmd_baseline(cfg)
        return cmd_export_plots(cfg, args.report)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ScenarioError, FeederError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingAborted, FloatingPointError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as exc:
        if "diverged" in str(exc):
            print(f"numeric abort: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        raise


if __name__ == "__main__":
    sys.exit(main())
