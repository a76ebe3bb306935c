"""Batch experiment driver.

Every pipeline is a subcommand selected by the ``pipeline`` key of a
JSON config file.  Exit codes: 0 success, 2 when the certification
defense fires (Reject), 1 on configuration or data errors.  Identical
config and seed produce byte-identical primary outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import jsonschema
import numpy as np

from . import attack, defense, learner, mcap, mnistio, rng, synth, trial
from .core import NormKind, PerturbationSet, binary_loss, robust_loss, save_dataset_csv
from .errors import BackdoorLabError

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_STR = {"type": "string"}


def _schema(extra: dict, required: list[str]) -> dict:
    props = {"pipeline": _STR, "seed": _INT, "outputPath": _STR}
    props.update(extra)
    return {"type": "object", "properties": props,
            "required": ["pipeline"] + required,
            "additionalProperties": False}


_INSTANCE_KEYS = {
    "d": _INT, "s": _INT, "gamma": _NUM, "R": _NUM, "nClean": _INT,
    "balance": _NUM,
}

SCHEMAS = {
    "synth-attack": _schema({**_INSTANCE_KEYS, "nPoison": _INT, "target": _INT,
                             "magnitude": _NUM, "nTest": _INT,
                             "saveDatasets": {"type": "boolean"}},
                            ["d", "s", "gamma", "R", "nClean", "nPoison"]),
    "detect-margin": _schema({**_INSTANCE_KEYS, "nPoison": _INT, "target": _INT,
                              "magnitude": _NUM},
                             ["d", "s", "gamma", "R", "nClean", "nPoison"]),
    "certify": _schema({**_INSTANCE_KEYS, "alpha": _NUM, "epsilon": _NUM,
                        "radius": _NUM, "magnitude": _NUM, "target": _INT},
                       ["d", "s", "gamma", "R", "nClean", "alpha", "epsilon", "radius"]),
    "filter": _schema({**_INSTANCE_KEYS, "alpha": _NUM, "epsilon": _NUM,
                       "radius": _NUM, "magnitude": _NUM, "target": _INT,
                       "nTest": _INT},
                      ["d", "s", "gamma", "R", "nClean", "alpha", "epsilon", "radius"]),
    "mcap": _schema({"problem": {"type": "object"}, "problemPath": _STR,
                     "maxK": _INT}, []),
    "mnist-trial": _schema({"trainImages": _STR, "trainLabels": _STR,
                            "testImages": _STR, "testLabels": _STR,
                            "target": _INT, "alphas": {"type": "array",
                                                       "items": _NUM},
                            "amplitude": _NUM, "epochs": _INT,
                            "batchSize": _INT, "stepSize": _NUM,
                            "pgd": {"type": "object"},
                            "robustSampleSize": _INT, "trainSubsample": _INT},
                           ["trainImages", "trainLabels", "testImages",
                            "testLabels"]),
}


def load_config(path: str) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict) or "pipeline" not in cfg:
        raise ValueError("config must be a JSON object with a 'pipeline' key")
    name = cfg["pipeline"]
    if name not in SCHEMAS:
        raise ValueError(f"unknown pipeline {name!r}; expected one of {sorted(SCHEMAS)}")
    jsonschema.validate(cfg, SCHEMAS[name])
    return cfg


def _dump_json(obj: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _make_instance(cfg: dict, seed: int):
    return synth.sample_instance(
        d=cfg["d"], s=cfg["s"], gamma=cfg["gamma"], R=cfg["R"],
        n=cfg["nClean"], balance_target=cfg.get("balance", 0.5), seed=seed)


def _poisoned_set(cfg: dict, seed: int, n_poison: int, magnitude: float):
    inst, clean = _make_instance(cfg, seed)
    t = cfg.get("target", 1)
    patch = attack.orthogonal_patch(inst, t, magnitude, seed)
    poison = attack.build_poison_set(inst, [patch], n_poison, seed)
    return inst, patch, clean, clean.concat(poison)


def run_synth_attack(cfg: dict, seed: int, out: str) -> int:
    magnitude = cfg.get("magnitude", 1.0)
    inst, patch, clean, combined = _poisoned_set(cfg, seed, cfg["nPoison"], magnitude)
    h = learner.max_margin_erm(combined)
    report = attack.evaluate_attack(h, inst, patch, patch.target_label,
                                    cfg.get("nTest", 1000), seed,
                                    poison_count=cfg["nPoison"])
    out_json = report.to_json()
    out_json["trainBinaryLoss"] = binary_loss(h, combined)
    _dump_json(out_json, os.path.join(out, "attack_report.json"))
    if cfg.get("saveDatasets", False):
        save_dataset_csv(combined, os.path.join(out, "training_set.csv"))
        synth.save_instance(inst, os.path.join(out, "instance.json"))
    return 0


def run_detect_margin(cfg: dict, seed: int, out: str) -> int:
    magnitude = cfg.get("magnitude", 0.5 * cfg["gamma"])
    inst, patch, clean, combined = _poisoned_set(cfg, seed, cfg["nPoison"], magnitude)
    gamma_inv = 1.0 / cfg["gamma"]
    _, clean_loss = learner.norm_constrained_margin_erm(clean, gamma_inv, seed=seed)
    _, poisoned_loss = learner.norm_constrained_margin_erm(combined, gamma_inv, seed=seed)
    _dump_json({"cleanMarginLoss": clean_loss, "poisonedMarginLoss": poisoned_loss,
                "gammaInv": gamma_inv},
               os.path.join(out, "margin_report.json"))
    return 0


def run_certify(cfg: dict, seed: int, out: str) -> int:
    alpha = cfg["alpha"]
    n_clean = cfg["nClean"]
    magnitude = cfg.get("magnitude", 0.5 * cfg["gamma"])
    if alpha > 0:
        n_poison = int(np.ceil(alpha * n_clean / (1.0 - alpha)))
        _, _, _, S = _poisoned_set(cfg, seed, n_poison, magnitude)
    else:
        _, S = _make_instance(cfg, seed)
    P = PerturbationSet(NormKind.L2, cfg["radius"])
    outcome = defense.certify(S, P, cfg["epsilon"], seed=seed)
    _dump_json(outcome.to_json(), os.path.join(out, "certify_report.json"))
    return 2 if outcome.verdict is defense.Verdict.REJECT else 0


def run_filter(cfg: dict, seed: int, out: str) -> int:
    alpha = cfg["alpha"]
    n_clean = cfg["nClean"]
    magnitude = cfg.get("magnitude", 0.5 * cfg["gamma"])
    if alpha > 0:
        n_poison = int(np.ceil(alpha * n_clean / (1.0 - alpha)))
        inst, patch, clean, S = _poisoned_set(cfg, seed, n_poison, magnitude)
    else:
        inst, S = _make_instance(cfg, seed)
    P = PerturbationSet(NormKind.L2, cfg["radius"])
    generalizer = lambda D: learner.robust_erm_halfspace(D, P, seed=seed)
    outcome = defense.generalize_to_filter(S, P, generalizer, cfg["epsilon"],
                                           seed=seed)
    report = outcome.to_json()
    retrained = defense.filter_then_generalize(S, P, lambda _: outcome.kept,
                                               seed=seed)
    test = synth.sample_labeled(inst, cfg.get("nTest", 1000), rng.generator(seed, 99))
    report["robustTestLoss"] = robust_loss(retrained, test, P)
    _dump_json(report, os.path.join(out, "filter_report.json"))
    return 0


def run_mcap(cfg: dict, seed: int, out: str) -> int:
    if "problem" in cfg:
        problem = mcap.FiniteProblem.from_json(cfg["problem"])
    elif "problemPath" in cfg:
        problem = mcap.load_finite_problem(cfg["problemPath"])
    else:
        raise ValueError("mcap pipeline needs 'problem' or 'problemPath'")
    max_k = cfg.get("maxK", problem.n_points)
    k, witness = mcap.brute_force_mcap(problem, max_k)
    vc = mcap.brute_force_vc(problem)
    valid = witness is not None and mcap.verify_mcap_witness(problem, witness)
    _dump_json({"mcap": k, "vc": vc, "witnessValid": bool(valid or k == 0)},
               os.path.join(out, "mcap_report.json"))
    return 0


def run_mnist_trial(cfg: dict, seed: int, out: str) -> int:
    train = mnistio.load_image_dataset(cfg["trainImages"], cfg["trainLabels"])
    test = mnistio.load_image_dataset(cfg["testImages"], cfg["testLabels"])
    subsample = cfg.get("trainSubsample", 0)
    if subsample and subsample < len(train):
        idx = rng.generator(seed, 98).choice(len(train), size=subsample, replace=False)
        train = train.subset(np.sort(idx))
    pgd_cfg = learner.PgdConfig.from_json(cfg.get(
        "pgd", {"epsilon": 0.3, "stepSize": 0.01, "iterations": 40, "restarts": 10}))
    tc = learner.TrainConfig(epochs=cfg.get("epochs", 2),
                             batch_size=cfg.get("batchSize", 32),
                             step_size=cfg.get("stepSize", 0.5),
                             seed=seed, pgd=pgd_cfg)
    rows = trial.run_trial(train, test, cfg.get("target", 0),
                           cfg.get("alphas", [0.0, 0.05, 0.15, 0.2, 0.3]), tc,
                           robust_sample_size=cfg.get("robustSampleSize", 5000),
                           seed=seed, amplitude=cfg.get("amplitude", 0.3))
    trial.write_rows_csv(rows, os.path.join(out, "trial.csv"))
    trial.write_manifest(os.path.join(out, "trial_manifest.json"), seed, tc,
                         train, test)
    return 0


PIPELINES = {
    "synth-attack": run_synth_attack,
    "detect-margin": run_detect_margin,
    "certify": run_certify,
    "filter": run_filter,
    "mcap": run_mcap,
    "mnist-trial": run_mnist_trial,
}


def run(config_path: str, seed_override: int | None = None,
        out_dir: str | None = None, dry_run: bool = False) -> int:
    """Validate a config file and execute its pipeline; returns the exit code."""
    try:
        cfg = load_config(config_path)
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError,
            ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    seed = seed_override if seed_override is not None else cfg.get("seed", 0)
    out = out_dir or cfg.get("outputPath", "out")
    plan = dict(cfg)
    plan["seed"] = seed
    plan["outputPath"] = out
    if dry_run:
        print(json.dumps({"plan": plan}, sort_keys=True, indent=2))
        return 0
    os.makedirs(out, exist_ok=True)
    try:
        return PIPELINES[cfg["pipeline"]](cfg, seed, out)
    except (BackdoorLabError, OSError, ValueError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="backdoorlab",
        description="Batch driver for backdoor attack, defense, and capacity pipelines.")
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--dry-run", action="store_true",
                        help="validate config and print the resolved plan")
    args = parser.parse_args(argv)
    return run(args.config, seed_override=args.seed, out_dir=args.out,
               dry_run=args.dry_run)


if __name__ == "__main__":
    sys.exit(main())
