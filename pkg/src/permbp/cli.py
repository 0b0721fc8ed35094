"""Command-line surface: code generation, training, sweeps, timing, probes.

Every run command writes a run directory containing the exact config it ran
(config.json), provenance (meta.json: argv, seed, git describe), and a
results.csv. Configs are JSON; a --config value may be a preset name or a
path to a JSON file, and flag overrides win over both. Unknown config keys
are a hard error at any nesting depth — typos never pass silently.

Exit codes: 0 ok, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import copy
import dataclasses
import functools
import json
import subprocess
import sys
import time
from pathlib import Path

import click

from permbp.bench import (
    StopRule,
    parse_decoder_spec,
    run_sweep,
    run_timing,
    write_sweep_csv,
    write_timing_csv,
)
from permbp.codes import CodeError, CodeSpec, build_bch_code, \
    load_parity_matrix, save_alist
from permbp.decoder import DecoderConfig, load_weights, save_weights
from permbp.hessian import probe_run, write_probe_csv
from permbp.training import NumericalError, TrainConfig, train, \
    write_learning_curve_csv

EXIT_NUMERICAL = 3

PRESETS: dict[str, dict] = {
    "bch15_11": {
        "code": {"m": 4, "t": 1},
        "train": {
            "decoder": {"i_permutations": 2, "i_bp": 2, "llr_clip": 15.0},
            "epochs": 60,
            "snr_list": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            "per_snr": 20,
            "learning_rate": 1e-3,
            "lam": 100.0,
            "grad_clip": 0.1,
            "n_pr": 20,
            "k_pr": 60,
            "seed": 0,
            "val_per_snr": 500,
            "val_seed": 90210,
        },
    },
    "bch31_16": {
        "code": {"m": 5, "t": 3},
        "train": {
            "decoder": {"i_permutations": 10, "i_bp": 2, "llr_clip": 15.0},
            "epochs": 120,
            "snr_list": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            "per_snr": 20,
            "learning_rate": 1e-3,
            "lam": 100.0,
            "grad_clip": 0.1,
            "n_pr": 20,
            "k_pr": 60,
            "seed": 0,
            "val_per_snr": 1000,
            "val_seed": 90210,
        },
    },
    "bch63_45": {
        "code": {"m": 6, "t": 3},
        "train": {
            "decoder": {"i_permutations": 50, "i_bp": 2, "llr_clip": 15.0},
            "epochs": 300,
            "snr_list": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            "per_snr": 20,
            "learning_rate": 1e-3,
            "lam": 100.0,
            "grad_clip": 0.1,
            "n_pr": 20,
            "k_pr": 60,
            "seed": 0,
            "val_per_snr": 1000,
            "val_seed": 90210,
        },
    },
    "bch63_36": {
        "code": {"m": 6, "t": 5},
        "train": {
            "decoder": {"i_permutations": 300, "i_bp": 2, "llr_clip": 15.0},
            "epochs": 300,
            "snr_list": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            "per_snr": 30,
            "learning_rate": 1e-3,
            "lam": 1e12,
            "grad_clip": 0.1,
            "n_pr": 1000,
            "k_pr": 4000,
            "seed": 0,
            "val_per_snr": 1000,
            "val_seed": 90210,
        },
    },
}

_DECODER_KEYS = {f.name: None for f in dataclasses.fields(DecoderConfig)}
_TRAIN_KEYS = {f.name: None for f in dataclasses.fields(TrainConfig)
               if f.name != "decoder"}
_TRAIN_KEYS["decoder"] = _DECODER_KEYS
_SCHEMA = {
    "code": {"m": None, "t": None, "alist": None, "name": None},
    "train": _TRAIN_KEYS,
}


def _reject_unknown(given, schema: dict, path: str = "config") -> None:
    if not isinstance(given, dict):
        raise click.UsageError(f"{path} must be a JSON object")
    for key, value in given.items():
        if key not in schema:
            raise click.UsageError(f"unknown config key {path}.{key}")
        sub = schema[key]
        if isinstance(sub, dict):
            _reject_unknown(value, sub, f"{path}.{key}")


def load_config(ref: str) -> dict:
    """A preset name or a JSON file path -> validated config dict."""
    if ref in PRESETS:
        cfg = copy.deepcopy(PRESETS[ref])
    else:
        path = Path(ref)
        if not path.is_file():
            raise click.UsageError(
                f"--config {ref!r} is neither a preset "
                f"({', '.join(sorted(PRESETS))}) nor a file")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise click.UsageError(f"{ref}: invalid JSON: {err}")
    _reject_unknown(cfg, _SCHEMA)
    return cfg


def code_from_config(cfg: dict) -> CodeSpec:
    code_cfg = cfg.get("code")
    if not code_cfg:
        raise click.UsageError("config has no 'code' section")
    if "alist" in code_cfg:
        return load_parity_matrix(code_cfg["alist"],
                                  name=code_cfg.get("name", ""),
                                  bch_m=code_cfg.get("m"))
    if "m" not in code_cfg or "t" not in code_cfg:
        raise click.UsageError("code section needs either 'alist' or "
                               "'m' and 't'")
    return build_bch_code(code_cfg["m"], code_cfg["t"])


def train_config_from(cfg: dict, **overrides) -> TrainConfig:
    train_cfg = copy.deepcopy(cfg.get("train"))
    if not train_cfg:
        raise click.UsageError("config has no 'train' section")
    decoder = DecoderConfig(**train_cfg.pop("decoder", {}))
    if "snr_list" in train_cfg:
        train_cfg["snr_list"] = tuple(train_cfg["snr_list"])
    for key, value in overrides.items():
        if value is not None:
            train_cfg[key] = value
    return TrainConfig(decoder=decoder, **train_cfg)


def _config_as_json(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=10,
            cwd=Path(__file__).resolve().parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _make_run_dir(run_dir: str | None, command: str) -> Path:
    if run_dir is None:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = f"runs/{command}-{stamp}"
    path = Path(run_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_provenance(run_dir: Path, command: str, cfg: dict | None,
                      seed: int, extra: dict | None = None) -> None:
    if cfg is not None:
        (run_dir / "config.json").write_text(_config_as_json(cfg))
    meta = {
        "command": command,
        "argv": sys.argv,
        "seed": seed,
        "git_describe": git_describe(),
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    meta.update(extra or {})
    (run_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def _parse_snr_grid(text: str) -> list[float]:
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) == 2:
                lo, hi, step = parts[0], parts[1], 1.0
            elif len(parts) == 3:
                lo, hi, step = parts
            else:
                raise ValueError("ranges are lo:hi or lo:hi:step")
            if step <= 0 or hi < lo:
                raise ValueError("need lo <= hi and step > 0")
            count = int(round((hi - lo) / step)) + 1
            return [lo + i * step for i in range(count)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as err:
        raise click.UsageError(f"bad --snr {text!r}: {err}")


def _numerical_guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericalError as err:
            click.echo(f"numerical failure: {err}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except CodeError as err:
            raise click.UsageError(str(err))
    return wrapper


@click.group()
@click.version_option(package_name="permbp")
def main() -> None:
    """Permutation-interleaved neural BP decoding toolkit."""


@main.command("gen-code")
@click.option("--m", type=int, required=True, help="GF(2^m) extension degree")
@click.option("--t", "t_errs", type=int, required=True,
              help="designed error-correction capability")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="alist output path (default bch_<n>_<k>.alist)")
@_numerical_guard
def gen_code(m: int, t_errs: int, out: str | None) -> None:
    """Construct a BCH parity-check matrix and write it as alist."""
    code = build_bch_code(m, t_errs)
    out = out or f"bch_{code.n}_{code.k}.alist"
    save_alist(code.h, out)
    click.echo(f"{code.name}: n={code.n} k={code.k} "
               f"checks={code.h.shape[0]} edges={code.graph.edge_count} "
               f"-> {out}")


@main.command("dump-config")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="write here instead of stdout")
def dump_config(preset: str, out: str | None) -> None:
    """Print a preset as JSON; the dump re-runs identically via --config."""
    text = _config_as_json(PRESETS[preset])
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")


@main.command("train")
@click.option("--config", "config_ref", required=True,
              help="preset name or JSON config path")
@click.option("--run-dir", default=None, help="output directory")
@click.option("--epochs", type=int, default=None, help="override epochs")
@click.option("--lam", type=float, default=None, help="override lambda")
@click.option("--seed", type=int, default=None, help="override batch seed")
@click.option("--perms-seed", type=int, default=0, show_default=True,
              help="seed of the permutation schedule")
@_numerical_guard
def train_cmd(config_ref: str, run_dir: str | None, epochs: int | None,
              lam: float | None, seed: int | None, perms_seed: int) -> None:
    """Train decoder weights; writes the learning curve and the weights."""
    cfg = load_config(config_ref)
    config = train_config_from(cfg, epochs=epochs, lam=lam, seed=seed)
    cfg["train"].update({"epochs": config.epochs, "lam": config.lam,
                         "seed": config.seed})
    code = code_from_config(cfg)
    out = _make_run_dir(run_dir, "train")
    state = train(code, config, perms_seed=perms_seed)
    write_learning_curve_csv(state.history, out / "results.csv")
    save_weights(code, state.params, out / "weights.txt")
    _write_provenance(out, "train", cfg, config.seed, {
        "perms_seed": perms_seed,
        "diverged": state.diverged,
        "epochs_run": state.epoch,
    })
    last = state.history[-1]
    click.echo(f"{code.name}: {state.epoch} epochs, "
               f"final loss {last.breakdown.total:.6g}, "
               f"val BER {last.val_ber:.3e}"
               + (" [DIVERGED]" if state.diverged else ""))
    click.echo(f"run dir: {out}")


@main.command("eval-sweep")
@click.option("--config", "config_ref", required=True,
              help="preset name or JSON config path (defines the code)")
@click.option("--decoders", required=True,
              help="comma list, e.g. ml,osd-2,bp-50,mrrd-3,perm-rnn-1-50-2")
@click.option("--snr", default="1:8", show_default=True,
              help="grid: lo:hi[:step] or comma list")
@click.option("--paired/--independent", default=True, show_default=True,
              help="share noise across decoders")
@click.option("--min-frame-errors", type=int, default=100, show_default=True)
@click.option("--max-frames", type=int, default=1_000_000, show_default=True)
@click.option("--chunk-frames", type=int, default=2000, show_default=True)
@click.option("--weights", "weights_path", type=click.Path(exists=True),
              default=None, help="trained weights for *-rnn-* decoders")
@click.option("--random-codewords", is_flag=True,
              help="draw random codewords instead of the all-zero word")
@click.option("--es-mode", is_flag=True, help="interpret SNR as Es/N0")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--run-dir", default=None)
@_numerical_guard
def eval_sweep(config_ref: str, decoders: str, snr: str, paired: bool,
               min_frame_errors: int, max_frames: int, chunk_frames: int,
               weights_path: str | None, random_codewords: bool,
               es_mode: bool, seed: int, run_dir: str | None) -> None:
    """Monte-Carlo BER/FER sweep over an SNR grid."""
    cfg = load_config(config_ref)
    code = code_from_config(cfg)
    specs = [parse_decoder_spec(s) for s in decoders.split(",") if s.strip()]
    weights = load_weights(code, weights_path) if weights_path else None
    grid = _parse_snr_grid(snr)
    out = _make_run_dir(run_dir, "eval-sweep")
    result = run_sweep(specs, code, grid,
                       StopRule(min_frame_errors, max_frames), seed,
                       paired=paired, weights=weights,
                       chunk_frames=chunk_frames,
                       random_codewords=random_codewords, es_mode=es_mode)
    write_sweep_csv(result, out / "results.csv")
    _write_provenance(out, "eval-sweep", cfg, seed, {
        "decoders": [s.label for s in specs],
        "snr_grid": grid,
        "paired": paired,
        "weights": weights_path,
        "random_codewords": random_codewords,
        "es_mode": es_mode,
    })
    for r in result.rows:
        click.echo(f"{r.decoder:>18s} {r.snr_db:5.2f} dB  "
                   f"ber={r.ber:.3e} fer={r.fer:.3e} "
                   f"frames={r.frames} [{r.stopped_on}]")
    click.echo(f"run dir: {out}")


@main.command("timing")
@click.option("--config", "config_ref", required=True)
@click.option("--decoders", required=True)
@click.option("--snr", default="1:8", show_default=True)
@click.option("--frames", type=int, default=200, show_default=True)
@click.option("--warmup", type=int, default=10, show_default=True)
@click.option("--weights", "weights_path", type=click.Path(exists=True),
              default=None)
@click.option("--es-mode", is_flag=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--run-dir", default=None)
@_numerical_guard
def timing(config_ref: str, decoders: str, snr: str, frames: int,
           warmup: int, weights_path: str | None, es_mode: bool, seed: int,
           run_dir: str | None) -> None:
    """Per-frame wall-clock comparison (single-threaded, warm-up excluded)."""
    cfg = load_config(config_ref)
    code = code_from_config(cfg)
    specs = [parse_decoder_spec(s) for s in decoders.split(",") if s.strip()]
    weights = load_weights(code, weights_path) if weights_path else None
    grid = _parse_snr_grid(snr)
    out = _make_run_dir(run_dir, "timing")
    rows = run_timing(specs, code, grid, frames, warmup=warmup, seed=seed,
                      weights=weights, es_mode=es_mode)
    write_timing_csv(rows, out / "results.csv")
    _write_provenance(out, "timing", cfg, seed, {
        "decoders": [s.label for s in specs],
        "snr_grid": grid,
        "frames": frames,
        "warmup": warmup,
    })
    for r in rows:
        click.echo(f"{r.decoder:>18s} {r.snr_db:5.2f} dB  "
                   f"mean={r.mean_seconds * 1e3:.3f} ms  "
                   f"p95={r.p95_seconds * 1e3:.3f} ms")
    click.echo(f"run dir: {out}")


@main.command("hessian-probe")
@click.option("--config", "config_ref", required=True)
@click.option("--lam", type=float, default=None,
              help="override the regularized twin's lambda (must be > 0)")
@click.option("--epochs", type=int, default=None)
@click.option("--checkpoints", default=None,
              help="comma list of epochs to take spectra at")
@click.option("--seed", type=int, default=None)
@click.option("--perms-seed", type=int, default=0, show_default=True)
@click.option("--run-dir", default=None)
@_numerical_guard
def hessian_probe(config_ref: str, lam: float | None, epochs: int | None,
                  checkpoints: str | None, seed: int | None,
                  perms_seed: int, run_dir: str | None) -> None:
    """Train lambda=0 and lambda>0 twins and compare loss landscapes."""
    cfg = load_config(config_ref)
    with_l2 = train_config_from(cfg, epochs=epochs, lam=lam, seed=seed)
    if not with_l2.lam > 0:
        raise click.UsageError("the probe needs lambda > 0 (configure "
                               "train.lam or pass --lam)")
    no_l2 = dataclasses.replace(with_l2, lam=0.0)
    cfg["train"].update({"epochs": with_l2.epochs, "lam": with_l2.lam,
                         "seed": with_l2.seed})
    code = code_from_config(cfg)
    marks = None
    if checkpoints is not None:
        try:
            marks = sorted({int(c) for c in checkpoints.split(",")})
        except ValueError:
            raise click.UsageError(f"bad --checkpoints {checkpoints!r}")
    out = _make_run_dir(run_dir, "hessian-probe")
    result = probe_run(code, no_l2, with_l2, marks, perms_seed=perms_seed)
    write_probe_csv(result.with_l2, out / "results.csv")
    write_probe_csv(result.no_l2, out / "baseline.csv")
    _write_provenance(out, "hessian-probe", cfg, with_l2.seed, {
        "perms_seed": perms_seed,
        "lam": with_l2.lam,
        "checkpoints": [r.epoch for r in result.with_l2.reports],
    })
    for run, tag in ((result.no_l2, "lam=0"), (result.with_l2, "lam>0")):
        first, last = run.reports[0], run.reports[-1]
        click.echo(f"{tag}: loss {run.curve[0]['loss']:.6g} -> "
                   f"{run.curve[-1]['loss']:.6g}, positive ratio "
                   f"{first.positive_ratio:.3f} -> {last.positive_ratio:.3f},"
                   f" condition {first.condition_number:.3g} -> "
                   f"{last.condition_number:.3g}")
    click.echo(f"run dir: {out}")


if __name__ == "__main__":
    main()
