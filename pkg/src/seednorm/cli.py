"""Command line interface: gradient checks, probes, training, comparisons,
and the overhead cost model.

Exit codes: 0 when the requested run completes and its checks pass, 1 when a
check fails or training diverges, 2 for usage errors (bad flags, unknown
probe names, malformed config files, unknown config keys).

Option precedence, lowest to highest: built-in defaults, the SEEDNORM_SEED
environment variable (seed only), entries from a `--config` file, explicit
command line flags. Config files are flat `key = value` lines; `#` starts a
comment; hyphens and underscores in keys are interchangeable; unknown keys
are rejected.

Reports are byte-stable for a fixed seed: JSON is written with sorted keys,
CSV uses CRLF line endings per RFC 4180, and wall-clock timing stays out of
both unless `--timing` is passed.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import dataclass

import numpy as np

from .core import make_rng
from .gradcheck import DEFAULT_DIMS, VARIANTS, run_gradcheck
from .model import ModelConfig, NormVariant, count_parameters, save_checkpoint
from .params import NormParams
from .probes import (
    estimate_cost,
    probe_dot_variance,
    probe_dyt_rmsnorm_ode,
    probe_scale_insensitivity,
)
from .training import (
    ByteFileTask,
    CopyTask,
    TrainConfig,
    TrainingDiverged,
    compare_runs,
    train_model,
)

PROBE_NAMES = ("scale_insensitivity", "dot_variance", "dyt_rmsnorm_ode")


class UsageError(Exception):
    """Bad invocation: malformed values, unknown keys, missing requirements."""


@dataclass(frozen=True)
class Opt:
    """One option: drives both the argparse flag and config-file parsing."""

    name: str
    kind: str  # int | float | str | bool | path | int_list | float_list | str_list
    default: object
    help: str
    choices: tuple = ()

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def _add_to_parser(parser: argparse.ArgumentParser, opts) -> None:
    for o in opts:
        shown = "" if o.default in (None, ()) else f" (default {o.default})"
        kw: dict = {"dest": o.name, "default": None, "help": o.help + shown}
        if o.kind == "bool":
            parser.add_argument(o.flag, action="store_true", **kw)
            continue
        if o.kind in ("int_list", "float_list", "str_list"):
            kw["nargs"] = "+"
        if o.kind in ("int", "int_list"):
            kw["type"] = int
        elif o.kind in ("float", "float_list"):
            kw["type"] = float
        if o.choices:
            kw["choices"] = o.choices
        parser.add_argument(o.flag, **kw)
    parser.add_argument(
        "--config", default=None, metavar="PATH",
        help="flat 'key = value' file merged below explicit flags",
    )


_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True,
               "0": False, "false": False, "no": False, "off": False}


def _coerce(opt: Opt, text: str, where: str):
    try:
        if opt.kind == "int":
            return int(text)
        if opt.kind == "float":
            return float(text)
        if opt.kind == "bool":
            if text.lower() not in _BOOL_WORDS:
                raise ValueError(f"expected a boolean, got {text!r}")
            return _BOOL_WORDS[text.lower()]
        if opt.kind == "int_list":
            return [int(tok) for tok in re.split(r"[,\s]+", text) if tok]
        if opt.kind == "float_list":
            return [float(tok) for tok in re.split(r"[,\s]+", text) if tok]
        if opt.kind == "str_list":
            return [tok for tok in re.split(r"[,\s]+", text) if tok]
    except ValueError as exc:
        raise UsageError(f"{where}: bad value for {opt.name!r}: {exc}") from None
    if opt.choices and text not in opt.choices:
        raise UsageError(
            f"{where}: {opt.name!r} must be one of {', '.join(opt.choices)}, got {text!r}"
        )
    return text


def _load_config(path: str, opts) -> dict:
    by_name = {o.name: o for o in opts}
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip().lower().replace("-", "_")
        if key not in by_name:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(by_name[key], value.strip(), f"{path}:{lineno}")
    return out


def _resolve(opts, args) -> dict:
    """defaults < SEEDNORM_SEED < config file < explicit flags."""
    values = {o.name: o.default for o in opts}
    env = os.environ.get("SEEDNORM_SEED")
    if env is not None and "seed" in values:
        try:
            values["seed"] = int(env)
        except ValueError:
            raise UsageError(f"SEEDNORM_SEED must be an integer, got {env!r}") from None
    if getattr(args, "config", None):
        values.update(_load_config(args.config, opts))
    for o in opts:
        cli_val = getattr(args, o.name)
        if cli_val is not None:
            values[o.name] = cli_val
    return values


def _write_json(path: str, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text + "\n")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# ---------------------------------------------------------------- gradcheck

GRADCHECK_OPTS = (
    Opt("seed", "int", 0, "base seed for the randomized suite"),
    Opt("variant", "str", "all", "which layer to check", VARIANTS + ("all",)),
    Opt("dims", "int_list", list(DEFAULT_DIMS), "row widths to sample from"),
    Opt("trials", "int", 100, "random configurations per variant"),
    Opt("tol", "float", 1e-5, "max relative error allowed"),
    Opt("step", "float", 1e-5, "finite-difference step"),
    Opt("heads", "int_list", [2, 4], "head counts sampled for the multi-head layer"),
    Opt("timing", "bool", False, "include wall-clock timing in the report"),
    Opt("json", "str", None, "write the JSON report here"),
)


def cmd_gradcheck(args) -> int:
    v = _resolve(GRADCHECK_OPTS, args)
    variants = VARIANTS if v["variant"] == "all" else (v["variant"],)
    try:
        report = run_gradcheck(
            variants=variants, dims=tuple(v["dims"]), trials=v["trials"],
            seed=v["seed"], heads=tuple(v["heads"]), step=v["step"],
            tolerance=v["tol"], timing=v["timing"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(
        f"gradcheck seed={v['seed']} dims={','.join(map(str, v['dims']))} "
        f"trials={v['trials']} step={_fmt(v['step'])} tol={_fmt(v['tol'])}"
    )
    for entry in report["variants"]:
        extras = "".join(f"  {k}={_fmt(val)}" for k, val in entry["extras"].items())
        print(
            f"  {entry['variant']:<12} max_rel_err={entry['max_rel_error']:.3e}"
            f"  trials={entry['trials']}{extras}"
        )
    verdict = "PASS" if report["pass"] else "FAIL"
    print(f"{verdict} max_rel_err={report['max_rel_error']:.3e} tol={_fmt(v['tol'])}")
    if v["json"]:
        _write_json(v["json"], report)
    return 0 if report["pass"] else 1


# -------------------------------------------------------------------- probe

PROBE_OPTS = (
    Opt("seed", "int", 0, "seed for sampled inputs"),
    Opt("name", "str", None, "which probe to run", PROBE_NAMES),
    Opt("dims", "int", None, "row width (default: 8 / 64 / 4 per probe)"),
    Opt("samples", "int", None, "sample count (default: 100000 / 100 per probe)"),
    Opt("heads", "int", 1, "head count for the variance probe"),
    Opt("sigma", "float", 1.0, "entry standard deviation for the variance probe"),
    Opt("dist", "str", "normal", "sampling law for the variance probe",
        ("normal", "uniform")),
    Opt("c", "float", 1.0, "frozen row RMS level for the ODE probe"),
    Opt("grid", "int", 101, "grid points for the ODE probe"),
    Opt("span", "float", 10.0, "half-width of the ODE probe grid"),
    Opt("k", "float_list", [2.0, 10.0, 1000.0], "input scale factors for the drift probe"),
    Opt("trials", "int", 8, "random inputs for the drift probe"),
    Opt("beta_zero", "bool", False, "zero the coefficient projection in the drift probe"),
    Opt("alpha_init", "float", 1.0, "alpha fill value for the drift probe"),
    Opt("json", "str", None, "write the JSON report here"),
)


def cmd_probe(args) -> int:
    v = _resolve(PROBE_OPTS, args)
    if v["name"] is None:
        raise UsageError("probe requires --name")
    rng = make_rng(v["seed"])
    try:
        if v["name"] == "scale_insensitivity":
            dim = v["dims"] if v["dims"] is not None else 8
            if v["beta_zero"]:
                beta = np.zeros(dim)
            else:
                beta = rng.standard_normal(dim) / np.sqrt(dim)
            p = NormParams(
                gamma=np.ones(dim), alpha=np.full(dim, v["alpha_init"]),
                beta=beta, eps=0.0,
            )
            report = probe_scale_insensitivity(p, v["k"], rng, trials=v["trials"])
        elif v["name"] == "dot_variance":
            dim = v["dims"] if v["dims"] is not None else 64
            samples = v["samples"] if v["samples"] is not None else 100000
            report = probe_dot_variance(
                dim, v["heads"], v["sigma"], samples, rng, dist=v["dist"]
            )
        else:
            dim = v["dims"] if v["dims"] is not None else 4
            samples = v["samples"] if v["samples"] is not None else 100
            report = probe_dyt_rmsnorm_ode(
                v["c"], dim, grid_points=v["grid"], span=v["span"],
                samples=samples, rng=rng,
            )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    verdict = "PASS" if report.passed else "FAIL"
    rule = "<=" if report.one_sided else "within"
    print(
        f"probe {report.name} samples={report.samples} "
        f"statistic={_fmt(report.statistic)} {rule} expected={_fmt(report.expected)}"
        f"+tol={_fmt(report.tolerance)} {verdict}"
    )
    for detail in report.details:
        print("  " + " ".join(f"{k}={_fmt(val)}" for k, val in detail.items()))
    if v["json"]:
        _write_json(v["json"], {"command": "probe", "seed": v["seed"],
                                "report": report.to_dict()})
    return 0 if report.passed else 1


# --------------------------------------------------------------------- cost

COST_OPTS = (
    Opt("layers", "int", 2, "transformer layers"),
    Opt("dims", "int", 64, "hidden width"),
    Opt("heads", "int", 1, "attention heads (sets the query/key norm width)"),
    Opt("check", "bool", False,
        "cross-check extra_params against a built model's parameter-count delta"),
    Opt("json", "str", None, "write the JSON report here"),
)


def _model_param_delta(layers: int, hidden_dim: int, heads: int) -> int:
    """Parameter-count difference, dynamic layer vs static RMS scaling, from
    the trainer's own parameter enumeration (shapes only, nothing allocated)."""
    common = dict(
        layers=layers, hidden_dim=hidden_dim, attn_heads=heads,
        vocab=7, context=4, qk_norm_per_head=True,
    )
    dyn = ModelConfig(norm_variant=NormVariant.SEEDNORM, **common)
    base = ModelConfig(norm_variant=NormVariant.RMSNORM, **common)
    return count_parameters(dyn) - count_parameters(base)


def cmd_cost(args) -> int:
    v = _resolve(COST_OPTS, args)
    try:
        est = estimate_cost(v["layers"], v["dims"], v["heads"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"cost layers={est.layers} hidden_dim={est.hidden_dim} heads={est.heads}")
    print(f"  extra_params={est.extra_params}")
    print(f"  extra_madds={est.extra_madds}")
    check = None
    if v["check"]:
        delta = _model_param_delta(v["layers"], v["dims"], v["heads"])
        check = {
            "dynamic_variant": NormVariant.SEEDNORM.value,
            "baseline_variant": NormVariant.RMSNORM.value,
            "model_param_delta": delta,
            "matches": bool(delta == est.extra_params),
        }
        print(f"  check: model_param_delta={delta} matches={_fmt(check['matches'])}")
    if v["json"]:
        _write_json(v["json"], {"command": "cost", "estimate": est.to_dict(),
                                "check": check})
    return 0 if check is None or check["matches"] else 1


# ---------------------------------------------------------- train / compare

MODEL_OPTS = (
    Opt("dims", "int", 64, "hidden width"),
    Opt("layers", "int", 2, "transformer layers"),
    Opt("heads", "int", 4, "attention heads"),
    Opt("norm_heads", "int", 1, "heads for the multi-head dynamic layer"),
    Opt("vocab", "int", 17, "vocabulary size (copy task; bytes task forces 256)"),
    Opt("context", "int", 16, "context length"),
    Opt("alpha_init", "float", 1.0, "initial dynamic coefficient scale"),
)

HYPER_OPTS = (
    Opt("steps", "int", 1000, "optimizer steps"),
    Opt("batch_size", "int", 32, "sequences per batch"),
    Opt("lr", "float", 1e-3, "peak learning rate"),
    Opt("warmup", "int", 50, "linear warmup steps"),
    Opt("weight_decay", "float", 0.1, "decoupled weight decay"),
    Opt("clip", "float", 1.0, "global gradient-norm cap (<=0 disables)"),
    Opt("ema", "float", 0.99, "loss smoothing coefficient"),
    Opt("no_decay_dynamic", "bool", False,
        "exempt the dynamic coefficient vectors from weight decay"),
    Opt("freeze", "str_list", [], "param-name suffixes whose gradients are zeroed"),
    Opt("log_every", "int", 100, "stdout cadence"),
    Opt("timing", "bool", False, "include wall-clock columns in reports"),
)

TASK_OPTS = (
    Opt("task", "str", "copy", "training task", ("copy", "bytes")),
    Opt("data", "str", None, "byte-level input file for the bytes task"),
)

TRAIN_OPTS = (
    (Opt("seed", "int", 0, "run seed"),)
    + TASK_OPTS
    + (Opt("variant", "str", "seednorm", "norm layer in every slot",
           tuple(m.value for m in NormVariant)),)
    + MODEL_OPTS
    + HYPER_OPTS
    + (
        Opt("csv", "str", None, "write the loss curve as CSV here"),
        Opt("json", "str", None, "write the JSON report here"),
        Opt("checkpoint", "str", None, "save model + optimizer state here"),
    )
)

COMPARE_OPTS = (
    (Opt("seed", "int", 0, "run seed (shared by both variants)"),)
    + TASK_OPTS
    + (
        Opt("variant_a", "str", "seednorm", "first norm layer",
            tuple(m.value for m in NormVariant)),
        Opt("variant_b", "str", "rmsnorm", "second norm layer",
            tuple(m.value for m in NormVariant)),
    )
    + MODEL_OPTS
    + HYPER_OPTS
    + (
        Opt("csv", "str", None, "write the paired loss curves as CSV here"),
        Opt("json", "str", None, "write the JSON report here"),
    )
)


def _build_task_and_cfg(v: dict, variant: str):
    try:
        if v["task"] == "bytes":
            if not v["data"]:
                raise UsageError("bytes task requires --data FILE")
            task = ByteFileTask(v["data"], context=v["context"])
        else:
            task = CopyTask(vocab=v["vocab"], context=v["context"])
        cfg = ModelConfig(
            layers=v["layers"], hidden_dim=v["dims"], attn_heads=v["heads"],
            vocab=task.vocab, context=v["context"], norm_variant=variant,
            norm_heads=v["norm_heads"], alpha_init=v["alpha_init"],
        )
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from None
    return task, cfg


def _build_train_cfg(v: dict) -> TrainConfig:
    try:
        return TrainConfig(
            steps=v["steps"], batch_size=v["batch_size"], lr=v["lr"],
            warmup_steps=v["warmup"], weight_decay=v["weight_decay"],
            grad_clip=v["clip"], ema=v["ema"],
            decay_dynamic=not v["no_decay_dynamic"], freeze=tuple(v["freeze"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _print_curve(curve, log_every: int) -> None:
    ema = curve.ema()
    for i, rec in enumerate(curve.records):
        last = i == len(curve.records) - 1
        if rec.step % max(1, log_every) == 0 or last:
            print(f"  step {rec.step:<6d} loss={rec.loss:.6f} ema={ema[i]:.6f}")


def cmd_train(args) -> int:
    v = _resolve(TRAIN_OPTS, args)
    task, cfg = _build_task_and_cfg(v, v["variant"])
    tcfg = _build_train_cfg(v)
    print(
        f"train variant={cfg.norm_variant.value} task={v['task']} dims={cfg.hidden_dim} "
        f"layers={cfg.layers} steps={tcfg.steps} seed={v['seed']}"
    )
    try:
        result = train_model(cfg, tcfg, task, make_rng(v["seed"]))
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    curve = result.curve
    _print_curve(curve, v["log_every"])
    if len(curve):
        print(f"final loss={curve.losses()[-1]:.6f} ema={curve.final_ema():.6f}")
    else:
        print("no steps run")
    if v["csv"]:
        with open(v["csv"], "w", encoding="utf-8", newline="") as fh:
            curve.to_csv(fh, include_wall_time=v["timing"])
    if v["json"]:
        payload = {
            "command": "train",
            "seed": v["seed"],
            "task": v["task"],
            "variant": cfg.norm_variant.value,
            "steps": tcfg.steps,
            "final_loss": curve.losses()[-1] if len(curve) else None,
            "final_ema": curve.final_ema() if len(curve) else None,
            "curve": curve.to_json_dict(include_wall_time=v["timing"]),
        }
        _write_json(v["json"], payload)
    if v["checkpoint"]:
        save_checkpoint(result.model, v["checkpoint"], opt_state=result.opt_state)
        print(f"checkpoint written to {v['checkpoint']}")
    return 0


def cmd_compare(args) -> int:
    v = _resolve(COMPARE_OPTS, args)
    task, cfg = _build_task_and_cfg(v, v["variant_a"])
    tcfg = _build_train_cfg(v)
    print(
        f"compare {v['variant_a']} vs {v['variant_b']} task={v['task']} "
        f"dims={cfg.hidden_dim} layers={cfg.layers} steps={tcfg.steps} seed={v['seed']}"
    )
    try:
        paired = compare_runs(cfg, v["variant_a"], v["variant_b"], tcfg, task, v["seed"])
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if len(paired.curve_a):
        ema_a = paired.curve_a.final_ema()
        ema_b = paired.curve_b.final_ema()
        if ema_a < ema_b:
            winner = paired.variant_a
        elif ema_b < ema_a:
            winner = paired.variant_b
        else:
            winner = "tie"
        print(f"  {paired.variant_a:<12} final_ema={ema_a:.6f}")
        print(f"  {paired.variant_b:<12} final_ema={ema_b:.6f}")
        print(f"winner: {winner}")
    else:
        ema_a = ema_b = None
        winner = "tie"
        print("no steps run")
    if v["csv"]:
        with open(v["csv"], "w", encoding="utf-8", newline="") as fh:
            paired.to_csv(fh)
    if v["json"]:
        _write_json(v["json"], {
            "command": "compare",
            "seed": v["seed"],
            "final_ema_a": ema_a,
            "final_ema_b": ema_b,
            "winner": winner,
            **paired.to_json_dict(),
        })
    return 0


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seednorm",
        description="dynamic normalization layers: checks, probes, and training",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = (
        ("gradcheck", "verify analytic gradients against finite differences",
         GRADCHECK_OPTS, cmd_gradcheck),
        ("probe", "run one executable analysis probe", PROBE_OPTS, cmd_probe),
        ("train", "train the desk-scale transformer", TRAIN_OPTS, cmd_train),
        ("compare", "train two norm variants on identical batches",
         COMPARE_OPTS, cmd_compare),
        ("cost", "closed-form overhead of the dynamic layers", COST_OPTS, cmd_cost),
    )
    for name, help_text, opts, fn in specs:
        p = sub.add_parser(name, help=help_text)
        _add_to_parser(p, opts)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
