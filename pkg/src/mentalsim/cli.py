"""Command-line entry point: ``msim <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` (JSON); explicit flags override it. Each output
directory receives ``resolved-config.json`` with the merged settings.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import behavior, dynamics as dyn, mpong, neuralbench as nb, synth, tensorio

log = logging.getLogger("mentalsim")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class ConfigError(Exception):
    pass


DEFAULTS = {
    "mpong-gen": {"n": 79, "seed": 0, "spec": None, "resolution": [32, 64], "frames": True},
    "synth": {"what": "dmfc", "seed": 0, "conditions": None, "kind": "position+velocity",
              "noise": 0.5, "n_units": 50, "n_trials": 20, "animals": "P,M", "readout_seed": 0,
              "softplus": False, "d": 16, "rho": 0.95, "n_stimuli": 200, "frames": 25,
              "latent_noise": 0.0, "per_scenario": 60, "shuffle_labels": False},
    "train-dynamics": {"latents": None, "kind": "ctrnn", "hidden": 512, "T": 7, "batch_size": 32,
                       "lr": 1e-4, "epochs": 100, "seed": 0, "tau": 1.0, "dt": 0.1, "resume": None},
    "eval-neural": {"neural": None, "conditions": None, "checkpoint": None, "latents": None,
                    "oracle": [], "random_control": False, "T": 7, "seed": 0, "n_splits": 5,
                    "n_repeats": 10, "ceiling": True},
    "decode-ball": {"neural": None, "conditions": None, "seed": 0, "n_splits": 5, "n_repeats": 10},
    "eval-ocp": {"train_latents": None, "test_latents": None, "judgements": None, "checkpoint": None,
                 "T": 7, "total": 25, "iters": 20000, "seed": 0},
    "report": {"runs": []},
}

# JSON Schema of eval-neural's report.json
REPORT_SCHEMA = {
    "type": "object",
    "required": ["ceiling", "per_model", "splits_seed"],
    "properties": {
        "splits_seed": {"type": "integer"},
        "ceiling": {
            "anyOf": [{"type": "null"}, {
                "type": "object",
                "required": ["median_np", "sem", "n_units", "n_flagged"],
            }],
        },
        "per_model": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["median_np", "sem", "n_flagged", "per_unit_csv_path", "ball_decode"],
                "properties": {
                    "median_np": {"type": ["number", "null"]},
                    "sem": {"type": ["number", "null"]},
                    "per_unit_csv_path": {"type": "string"},
                    "ball_decode": {
                        "type": "object",
                        "required": ["joint", "position", "velocity"],
                    },
                },
            },
        },
    },
}


def _num(x):
    """JSON-safe float: NaN becomes null."""
    x = float(x)
    return None if math.isnan(x) else x


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n")


def _resolve(cmd: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[cmd])
    if getattr(args, "config", None):
        try:
            cfg.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    for key, value in vars(args).items():
        if key in ("config", "cmd", "out", "verbose", "func"):
            continue
        cfg[key] = value
    unknown = set(cfg) - set(DEFAULTS[cmd])
    if unknown:
        raise ConfigError(f"unknown config keys for {cmd}: {sorted(unknown)}")
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, "", []):
            raise ConfigError(f"missing required setting {k!r}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_mpong_gen(cfg: dict, out: Path) -> dict:
    spec = mpong.BoardSpec()
    if cfg["spec"]:
        spec = mpong.BoardSpec.from_dict(json.loads(Path(cfg["spec"]).read_text()))
    conds = mpong.generate_conditions(spec, int(cfg["n"]), int(cfg["seed"]))
    (out / "conditions.json").write_text(conds.to_json() + "\n")
    (out / "oracles").mkdir(exist_ok=True)
    if cfg["frames"]:
        (out / "frames").mkdir(exist_ok=True)
    items = {k: [] for k in mpong.ORACLE_KINDS}
    for c, traj in zip(conds, conds.trajectories()):
        if cfg["frames"]:
            frames = mpong.render_frames(spec, traj, tuple(cfg["resolution"]), c.visible_end)
            tensorio.write_tensor(frames, out / "frames" / f"cond_{c.id:03d}.msb")
        for kind in mpong.ORACLE_KINDS:
            tag = kind.replace("+", "_")
            rel = f"cond_{c.id:03d}_{tag}.msb"
            tensorio.write_tensor(mpong.oracle_latents(traj, kind), out / "oracles" / rel)
            items[kind].append({"id": str(c.id), "path": rel})
    for kind, its in items.items():
        doc = {"kind": "latents", "d": 4 if "+" in kind else 2, "subsample": 1, "items": its}
        _dump(out / "oracles" / f"{kind.replace('+', '_')}.json", doc)
    n = [c.n_frames for c in conds]
    summary = {"n_conditions": len(conds), "min_frames": min(n), "max_frames": max(n),
               "min_visible": min(c.n_visible for c in conds)}
    print(f"{len(conds)} conditions; frames min {min(n)} max {max(n)}")
    return summary


def cmd_synth(cfg: dict, out: Path) -> dict:
    what = cfg["what"]
    seed = int(cfg["seed"])
    if what == "dmfc":
        _require(cfg, "conditions")
        conds = mpong.ConditionSet.load(cfg["conditions"])
        spec = synth.SynthNeuralSpec(n_units=int(cfg["n_units"]), kind=cfg["kind"],
                                     readout_seed=int(cfg["readout_seed"]), noise=float(cfg["noise"]),
                                     n_trials=int(cfg["n_trials"]), softplus=bool(cfg["softplus"]))
        names = [a for a in str(cfg["animals"]).split(",") if a]
        sets = [synth.make_synth_dmfc(conds, spec, seed + i, name) for i, name in enumerate(names)]
        ds = synth.merge_animals(*sets)
        path = tensorio.save_neural_dataset(ds, out)
        print(f"wrote {path.name}: {len(names)} animals, {ds.n_units} units, {len(conds)} conditions")
        return {"manifest": path.name, "n_units": ds.n_units}
    if what == "linear-world":
        ds = synth.make_linear_world(int(cfg["d"]), float(cfg["rho"]), int(cfg["n_stimuli"]),
                                     int(cfg["frames"]), float(cfg["latent_noise"]), seed)
        path = tensorio.save_latent_dataset(ds, out)
        print(f"wrote {path.name}: {len(ds)} stimuli, d={ds.d}")
        return {"manifest": path.name}
    if what == "ocp":
        paths = synth_ocp(out, int(cfg["d"]), int(cfg["frames"]), int(cfg["per_scenario"]), seed,
                          bool(cfg["shuffle_labels"]))
        print("wrote " + ", ".join(p.name for p in paths))
        return {"manifests": [p.name for p in paths]}
    raise ConfigError(f"unknown synth target {what!r}")


def synth_ocp(out: Path, d: int = 8, frames: int = 25, per_scenario: int = 60, seed: int = 0,
              shuffle_labels: bool = False):
    train, test, judgements = synth.make_ocp_world(d, frames, per_scenario, seed,
                                                   shuffle_labels=shuffle_labels)
    return [
        tensorio.save_latent_dataset(train, out, "train_latents"),
        tensorio.save_latent_dataset(test, out, "test_latents"),
        tensorio.save_judgements(judgements, out / "judgements.json"),
    ]


def cmd_train_dynamics(cfg: dict, out: Path) -> dict:
    _require(cfg, "latents")
    if cfg["kind"] == "none":
        raise ConfigError("kind 'none' has no parameters: nothing to train")
    ds = tensorio.load_latent_dataset(cfg["latents"])
    tc = dyn.TrainConfig(T=int(cfg["T"]), batch_size=int(cfg["batch_size"]), lr=float(cfg["lr"]),
                         epochs=int(cfg["epochs"]), seed=int(cfg["seed"]))
    state = None
    if cfg["resume"]:
        model, _, state = dyn.load_checkpoint(cfg["resume"])
        if state is None:
            raise ConfigError(f"checkpoint {cfg['resume']} has no training state to resume")
    else:
        model = dyn.init_model(cfg["kind"], ds.d, int(cfg["hidden"]), int(cfg["seed"]),
                               float(cfg["tau"]), float(cfg["dt"]))
    model, losses, state = dyn.train(
        model, ds, tc, state, progress=lambda e, l: log.info("epoch %d mse %.6g", e, l))
    dyn.save_checkpoint(out, model, tc, state)
    print(f"trained {model.kind} for {state.epoch} epochs; final mse {losses[-1]:.6g}")
    return {"final_mse": losses[-1], "epochs": state.epoch}


def _load_model(cfg):
    if cfg.get("checkpoint") in (None, "", "none"):
        return None
    if cfg["checkpoint"] == "no-dynamics":
        return "none"
    model, _, _ = dyn.load_checkpoint(cfg["checkpoint"])
    return model


def _summary_np(res):
    s = res.summary
    return {"median_np": _num(s.median), "sem": _num(s.sem), "n_units": s.n + s.n_nan,
            "n_flagged": int(res.flagged.sum())}


def _ball_summary(bd: nb.BallDecode) -> dict:
    out = {}
    for key, val in bd.summary().items():
        out[key] = {k: _num(v) for k, v in val.items()}
    return out


def cmd_eval_neural(cfg: dict, out: Path) -> dict:
    _require(cfg, "neural", "conditions")
    conds = mpong.ConditionSet.load(cfg["conditions"])
    neural = tensorio.load_neural_dataset(cfg["neural"])
    if len(neural.responses) != len(conds):
        raise nb.AlignmentError(
            f"neural manifest {cfg['neural']} has {len(neural.responses)} conditions but "
            f"condition set {cfg['conditions']} has {len(conds)}"
        )
    aligned = nb.interpolate_bins(neural, conds)
    seed = int(cfg["seed"])
    splits = nb.make_splits(len(conds), int(cfg["n_splits"]), seed)
    reps = int(cfg["n_repeats"])

    models = {}
    for kind in cfg["oracle"] or []:
        models[f"oracle:{kind}"] = nb.oracle_frame_latents(conds, kind)
    if cfg["random_control"]:
        rng = np.random.default_rng([seed, 7])
        models["random-control"] = [rng.normal(size=(c.n_frames, 4)) for c in conds]
    ck = _load_model(cfg)
    if ck is not None:
        _require(cfg, "latents")
        enc = tensorio.load_latent_dataset(cfg["latents"])
        if len(enc) != len(conds):
            raise nb.AlignmentError(
                f"latent manifest {cfg['latents']} has {len(enc)} stimuli but "
                f"condition set {cfg['conditions']} has {len(conds)}"
            )
        model = dyn.DynamicsModel("none", enc.d, 1) if ck == "none" else ck
        name = "no-dynamics" if ck == "none" else f"checkpoint:{Path(cfg['checkpoint']).name}"
        models[name] = [nb.model_frame_latents(model, z, c, int(cfg["T"]))
                        for z, c in zip(enc.latents, conds)]
    if not models:
        raise ConfigError("nothing to evaluate: pass --oracle, --random-control or --checkpoint")

    report = {"splits_seed": seed, "ceiling": None, "per_model": {}}
    animals = [a for a, _ in neural.animals]
    if cfg["ceiling"] and len(animals) >= 2:
        ceil = nb.fit_internal_consistency(aligned.animal(animals[0]), aligned.animal(animals[1]),
                                           splits, n_repeats=reps, seed=seed)
        report["ceiling"] = _summary_np(ceil.combined)
        report["ceiling"]["excluded_units"] = len(ceil.excluded_units)
    (out / "units").mkdir(exist_ok=True)
    for j, (name, feats) in enumerate(models.items()):
        res = nb.model_predictivity(feats, aligned, splits, n_repeats=reps, seed=seed)
        rel = f"units/model_{j:02d}.csv"
        res.to_csv(out / rel)
        bd = nb.ball_decode(feats, conds, splits, n_repeats=reps, seed=seed)
        entry = _summary_np(res)
        entry.update(per_unit_csv_path=rel, ball_decode=_ball_summary(bd),
                     lambdas=[float(l) for l in res.lambdas])
        report["per_model"][name] = entry
        print(f"{name}: median NP {entry['median_np']:.4f} +/- {entry['sem']:.4f}")
    if report["ceiling"]:
        print(f"ceiling: median NP {report['ceiling']['median_np']:.4f}")
    _dump(out / "report.json", report)
    return report


def cmd_decode_ball(cfg: dict, out: Path) -> dict:
    _require(cfg, "neural", "conditions")
    conds = mpong.ConditionSet.load(cfg["conditions"])
    neural = tensorio.load_neural_dataset(cfg["neural"])
    if len(neural.responses) != len(conds):
        raise nb.AlignmentError(
            f"neural manifest {cfg['neural']} has {len(neural.responses)} conditions but "
            f"condition set {cfg['conditions']} has {len(conds)}"
        )
    aligned = nb.interpolate_bins(neural, conds)
    seed = int(cfg["seed"])
    splits = nb.make_splits(len(conds), int(cfg["n_splits"]), seed)
    bd = nb.ball_decode(aligned, conds, splits, n_repeats=int(cfg["n_repeats"]), seed=seed)
    report = {"splits_seed": seed, "ball_decode": _ball_summary(bd)}
    _dump(out / "report.json", report)
    j = report["ball_decode"]["joint"]
    print(f"ball state predictivity: median {j['median']:.4f} +/- {j['sem']:.4f}")
    return report


def cmd_eval_ocp(cfg: dict, out: Path) -> dict:
    _require(cfg, "train_latents", "test_latents", "judgements")
    train_ds = tensorio.load_latent_dataset(cfg["train_latents"])
    test_ds = tensorio.load_latent_dataset(cfg["test_latents"])
    judgements = tensorio.load_judgements(cfg["judgements"])
    ck = _load_model(cfg)
    model = dyn.DynamicsModel("none", train_ds.d, 1) if ck in (None, "none") else ck
    T, total = int(cfg["T"]), int(cfg["total"])
    ftr = behavior.build_features(train_ds, model, T, total)
    fte = behavior.build_features(test_ds, model, T, total)
    clf = behavior.train_readout(ftr, iters=int(cfg["iters"]), seed=int(cfg["seed"]))
    scores = behavior.evaluate(clf, fte, judgements)
    agg = behavior.aggregate(scores)
    behavior.write_scores_csv(out / "scores.csv", scores, agg)
    report = {
        "model": model.kind,
        "C": clf.C,
        "scenarios": [{"scenario": s.scenario, "n": s.n_stimuli, "accuracy": s.accuracy,
                       "pearson_to_human": _num(s.pearson_to_human)} for s in scores],
        "aggregate": {k: {f: _num(v) for f, v in agg[k]._asdict().items()}
                      for k in ("accuracy", "correlation")},
        "n_flagged": agg["n_flagged"],
    }
    _dump(out / "report.json", report)
    print(f"accuracy {agg['accuracy'].weighted_mean:.4f} +/- {agg['accuracy'].weighted_sem:.4f}; "
          f"human r {agg['correlation'].weighted_mean:.4f}")
    return report


REPORT_COLUMNS = ["run_id", "kind", "model", "median_np", "np_sem", "ball_joint",
                  "accuracy", "accuracy_sem", "correlation", "correlation_sem"]


def report_rows(run_dirs) -> list:
    rows = []
    for d in sorted(Path(r) for r in run_dirs):
        path = d / "report.json"
        if not path.exists():
            raise tensorio.DataError(f"{d}: no report.json")
        doc = json.loads(path.read_text())
        if "per_model" in doc:
            for name in sorted(doc["per_model"]):
                m = doc["per_model"][name]
                rows.append({"run_id": d.name, "kind": "neural", "model": name,
                             "median_np": m["median_np"], "np_sem": m["sem"],
                             "ball_joint": m["ball_decode"]["joint"]["median"]})
        elif "aggregate" in doc:
            a = doc["aggregate"]
            rows.append({"run_id": d.name, "kind": "ocp", "model": doc.get("model", ""),
                         "accuracy": a["accuracy"]["weighted_mean"],
                         "accuracy_sem": a["accuracy"]["weighted_sem"],
                         "correlation": a["correlation"]["weighted_mean"],
                         "correlation_sem": a["correlation"]["weighted_sem"]})
        elif "ball_decode" in doc:
            rows.append({"run_id": d.name, "kind": "decode", "model": "neural",
                         "ball_joint": doc["ball_decode"]["joint"]["median"]})
    return rows


def cmd_report(cfg: dict, out: Path | None) -> dict:
    if not cfg["runs"]:
        raise ConfigError("report needs at least one run directory")
    rows = report_rows(cfg["runs"])
    fmt = lambda v: "" if v is None else (repr(v) if isinstance(v, float) else str(v))
    lines = [",".join(REPORT_COLUMNS)]
    lines += [",".join(fmt(r.get(c)) for c in REPORT_COLUMNS) for r in rows]
    text = "\n".join(lines) + "\n"
    if out is not None:
        (out / "comparison.csv").write_text(text)
    else:
        sys.stdout.write(text)
    return {"rows": len(rows)}


COMMANDS = {
    "mpong-gen": cmd_mpong_gen,
    "synth": cmd_synth,
    "train-dynamics": cmd_train_dynamics,
    "eval-neural": cmd_eval_neural,
    "decode-ball": cmd_decode_ball,
    "eval-ocp": cmd_eval_ocp,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = argparse.ArgumentParser(prog="msim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", required=True)

    def add(name, help_, out_required=True):
        sp = sub.add_parser(name, help=help_, argument_default=S)
        sp.add_argument("--config", help="JSON config; flags override it")
        sp.add_argument("--out", required=out_required, default=None if not out_required else S)
        sp.add_argument("--seed", type=int)
        return sp

    sp = add("mpong-gen", "generate Mental-Pong conditions, frames and oracle latents")
    sp.add_argument("--n", type=int)
    sp.add_argument("--spec", help="JSON board spec")
    sp.add_argument("--resolution", type=int, nargs=2, metavar=("H", "W"))
    sp.add_argument("--no-frames", dest="frames", action="store_false")

    sp = add("synth", "write synthetic datasets (dmfc | linear-world | ocp)")
    sp.add_argument("what", choices=["dmfc", "linear-world", "ocp"])
    sp.add_argument("--conditions")
    sp.add_argument("--kind", choices=synth.READOUT_KINDS)
    sp.add_argument("--noise", type=float)
    sp.add_argument("--n-units", type=int)
    sp.add_argument("--n-trials", type=int)
    sp.add_argument("--animals")
    sp.add_argument("--readout-seed", type=int)
    sp.add_argument("--softplus", action="store_true")
    sp.add_argument("--d", type=int)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--n-stimuli", type=int)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--latent-noise", type=float)
    sp.add_argument("--per-scenario", type=int)
    sp.add_argument("--shuffle-labels", action="store_true", help="ocp: labels independent of latents")

    sp = add("train-dynamics", "train a CTRNN or LSTM on encoder latents")
    sp.add_argument("--latents")
    sp.add_argument("--kind", choices=dyn.KINDS)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--T", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--resume")

    sp = add("eval-neural", "neural predictivity of models against DMFC responses")
    sp.add_argument("--neural")
    sp.add_argument("--conditions")
    sp.add_argument("--checkpoint", help="checkpoint dir, or 'no-dynamics'")
    sp.add_argument("--latents", help="per-condition encoder latents for --checkpoint")
    sp.add_argument("--oracle", action="append", choices=mpong.ORACLE_KINDS)
    sp.add_argument("--random-control", action="store_true")
    sp.add_argument("--T", type=int)
    sp.add_argument("--n-splits", type=int)
    sp.add_argument("--n-repeats", type=int)
    sp.add_argument("--no-ceiling", dest="ceiling", action="store_false")

    sp = add("decode-ball", "decode occluded ball state from neural responses")
    sp.add_argument("--neural")
    sp.add_argument("--conditions")
    sp.add_argument("--n-splits", type=int)
    sp.add_argument("--n-repeats", type=int)

    sp = add("eval-ocp", "object contact prediction readout and human comparison")
    sp.add_argument("--train-latents")
    sp.add_argument("--test-latents")
    sp.add_argument("--judgements")
    sp.add_argument("--checkpoint", help="checkpoint dir; omit for No-Dynamics")
    sp.add_argument("--T", type=int)
    sp.add_argument("--total", type=int)
    sp.add_argument("--iters", type=int)

    sp = add("report", "combine run reports into one CSV", out_required=False)
    sp.add_argument("runs", nargs="*")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = args.cmd
    try:
        cfg = _resolve(cmd, args)
        out = _outdir(args) if getattr(args, "out", None) else None
        COMMANDS[cmd](cfg, out)
        if out is not None:
            _dump(out / "resolved-config.json", {"command": cmd, **cfg})
    except (ConfigError, mpong.GenerationError, ValueError, TypeError) as exc:
        print(f"msim {cmd}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (tensorio.DataError, OSError) as exc:
        print(f"msim {cmd}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"msim {cmd}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
