"""Command-line front end: synth | align | train | eval.

Every command writes a manifest into its output directory recording the
resolved configuration, seeds, and SHA-256 hashes of its inputs. With
determinism enabled (the default) reruns with identical inputs and
configuration produce byte-identical artifacts.

Exit codes: 0 success, 1 usage error, 2 data/config error.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import evalkit, synthgen
from .edmodel import ModelSpec, init_model, load_model, save_model, variant_spec
from .encoders import GRecConfig
from .mdgraph import IngestError, ingest_file
from .trainer import TrainConfig, TrainingDiverged, train
from .walker import WalkConfig, load_pairs, mine_pairs, write_pairs

VARIANTS = ("edda", "wo-da", "inter", "intra", "ed-mf")
ALIGNED_VARIANTS = ("edda", "ed-mf")  # the rest drop the alignment term


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


@dataclass(frozen=True)
class RunConfig:
    """Resolved run settings: defaults, then config file, then CLI flags."""

    seed: int = 0
    eval_seed: int = 0
    threads: int = 1
    determinism: bool = True
    variant: str = "edda"
    encoder: str = "grec"
    d_inter: int = 64
    d_intra: int = 64
    d_align: int = 0  # 0: same as d_intra
    num_layers: int = 2
    alpha: float = 0.1
    beta: float = 0.03
    reg_lambda: float = 1e-4
    learning_rate: float = 0.001
    batch_size: int = 8092
    edge_dropout: float = 0.3
    epochs: int = 200
    patience: int = 20  # negative: disabled
    k: int = 1
    walk_length: int = 4
    num_walks: int = 500
    checkpoint_every: int = 0  # 0: only the final checkpoint

    def model_spec(self) -> ModelSpec:
        base = ModelSpec(
            d_inter=self.d_inter,
            d_intra=self.d_intra,
            d_align=self.d_align if self.d_align > 0 else None,
            encoder=self.encoder,
            grec=GRecConfig(num_layers=self.num_layers, alpha=self.alpha),
        )
        return variant_spec(base, self.variant)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            beta=self.beta,
            reg_lambda=self.reg_lambda,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            edge_dropout=self.edge_dropout,
            epochs=self.epochs,
            k=self.k,
            seed=self.seed,
            patience=self.patience if self.patience >= 0 else None,
        )

    def walk_config(self) -> WalkConfig:
        return WalkConfig(
            walk_length=self.walk_length, num_walks=self.num_walks, rng_seed=self.seed
        )


def _parse_config_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path} line {line_no}: expected key = value")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(name: str, raw: str, kind: type):
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {name}: expected a boolean, got {raw!r}")
    return kind(raw)


def resolve_config(config_path: str | None, overrides: dict) -> RunConfig:
    cfg = RunConfig()
    if config_path:
        types = {f.name: type(getattr(cfg, f.name)) for f in fields(RunConfig)}
        file_values = _parse_config_file(Path(config_path))
        unknown = set(file_values) - set(types)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(
            cfg,
            **{k: _coerce(k, v, types[k]) for k, v in file_values.items()},
        )
    cleaned = {k: v for k, v in overrides.items() if v is not None}
    if cleaned:
        cfg = replace(cfg, **cleaned)
    if cfg.variant not in VARIANTS:
        raise ValueError(f"unknown variant {cfg.variant!r}; choose from {VARIANTS}")
    return cfg


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _config_lines(cfg: RunConfig) -> list[str]:
    return [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig | None, inputs: dict[str, Path], extra: dict | None = None) -> None:
    lines = [f"command = {command}"]
    if cfg is not None:
        lines.extend(_config_lines(cfg))
    for name, path in sorted(inputs.items()):
        lines.append(f"input.{name} = {Path(path).name}")
        lines.append(f"sha256.{name} = {_sha256(Path(path))}")
    for key, value in sorted((extra or {}).items()):
        lines.append(f"{key} = {value}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_manifest(path: Path) -> dict[str, str]:
    values = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


# -- commands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = synthgen.load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    dataset, truth = synthgen.generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    synthgen.write_dataset(out, spec, dataset, truth)
    _write_manifest(out, "synth", None, {"spec": Path(args.spec)}, {"seed": spec.seed})
    print(f"wrote {dataset.num_domains} domains to {out / 'interactions.tsv'}")
    return 0


def cmd_align(args) -> int:
    cfg = resolve_config(args.config, _overrides(args))
    dataset = ingest_file(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # pairs are mined on the training graphs so held-out edges stay unseen
    split_data = evalkit.split(dataset, seed=cfg.seed)
    written = []
    if dataset.num_domains < 2:
        print("single-domain dataset: no domain pairs to align", file=sys.stderr)
    for d in range(dataset.num_domains):
        for d_prime in range(d + 1, dataset.num_domains):
            pair_sets = [
                mine_pairs(split_data.train, d, d_prime, cfg.k, cfg.walk_config()),
                mine_pairs(split_data.train, d_prime, d, cfg.k, cfg.walk_config()),
            ]
            path = out / f"pairs_{d}_{d_prime}.tsv"
            write_pairs(path, pair_sets)
            written.append(path)
    _write_manifest(
        out,
        "align",
        cfg,
        {"data": Path(args.data)},
        {"pair_files": ",".join(p.name for p in written)},
    )
    print(f"wrote {len(written)} pair files to {out}")
    return 0


def _load_pair_sets(paths: list[str]):
    pair_sets = []
    resolved: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            resolved.extend(sorted(p.glob("pairs_*.tsv")))
        else:
            resolved.append(p)
    for p in resolved:
        pair_sets.extend(load_pairs(p))
    return pair_sets, resolved


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, _overrides(args))
    dataset = ingest_file(args.data)
    split_data = evalkit.split(dataset, seed=cfg.seed)
    pair_sets = []
    pair_paths: list[Path] = []
    if args.pairs:
        pair_sets, pair_paths = _load_pair_sets(args.pairs)
    if cfg.variant not in ALIGNED_VARIANTS and pair_sets:
        print(f"variant {cfg.variant}: alignment pairs ignored", file=sys.stderr)
        pair_sets = []

    model = init_model(cfg.model_spec(), dataset, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    callbacks = []
    if cfg.checkpoint_every > 0:
        def checkpoint_cb(log, current):
            if log.epoch % cfg.checkpoint_every == 0:
                save_model(out / f"checkpoint_epoch_{log.epoch}", current)
        callbacks.append(checkpoint_cb)

    try:
        model, logs = train(
            model, split_data, pair_sets, cfg.train_config(),
            callbacks=callbacks, eval_seed=cfg.eval_seed,
        )
    except TrainingDiverged as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 2

    save_model(out / "checkpoint", model)
    log_lines = []
    for log in logs:
        wall = 0.0 if cfg.determinism else log.wall_ms
        log_lines.append(
            f"{log.epoch}\t{log.bpr:.6f}\t{log.align:.6f}\t{log.total:.6f}"
            f"\t{log.val_auc:.6f}\t{log.val_recall:.6f}\t{wall:.3f}"
        )
    (out / "train.log").write_text("\n".join(log_lines) + ("\n" if log_lines else ""), encoding="utf-8")
    val_rows = evalkit.evaluate_all(model, split_data, which="validation", eval_seed=cfg.eval_seed)
    evalkit.write_report(out / "val_report.tsv", val_rows)

    inputs = {"data": Path(args.data)}
    for idx, p in enumerate(pair_paths):
        inputs[f"pairs{idx}"] = p
    _write_manifest(out, "train", cfg, inputs, {"epochs_run": len(logs)})
    print(f"trained {cfg.variant} for {len(logs)} epochs; checkpoint in {out / 'checkpoint'}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args.config, _overrides(args))
    run_dir = Path(args.run)
    manifest_path = run_dir / "manifest.txt"
    if manifest_path.exists():
        recorded = _read_manifest(manifest_path)
        mismatches = []
        if recorded.get("seed") != str(cfg.seed):
            mismatches.append(f"split seed {recorded.get('seed')} != {cfg.seed}")
        if recorded.get("eval_seed") != str(cfg.eval_seed):
            mismatches.append(f"eval seed {recorded.get('eval_seed')} != {cfg.eval_seed}")
        if recorded.get("sha256.data") != _sha256(Path(args.data)):
            mismatches.append("data file hash differs from the training manifest")
        if mismatches and not args.force:
            print(
                "refusing to evaluate (pass --force to override): " + "; ".join(mismatches),
                file=sys.stderr,
            )
            return 2

    dataset = ingest_file(args.data)
    split_data = evalkit.split(dataset, seed=cfg.seed)
    model = load_model(run_dir / "checkpoint")
    rows = evalkit.evaluate_all(model, split_data, which="test", eval_seed=cfg.eval_seed)
    report = evalkit.format_report(rows)
    sys.stdout.write(report)

    stats_lines = ["domain\tdomain_size\tout_of_domain_interaction"]
    for d in range(split_data.train.num_domains):
        ds_frac = evalkit.domain_size(split_data.train, d)
        oi = evalkit.out_of_domain_interaction(split_data.train, d)
        stats_lines.append(f"{d}\t{ds_frac:.6f}\t{oi:.6f}")
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.tsv").write_text(report, encoding="utf-8")
    (out / "domain_stats.tsv").write_text("\n".join(stats_lines) + "\n", encoding="utf-8")
    _write_manifest(out, "eval", cfg, {"data": Path(args.data)}, {"checkpoint": str(run_dir.name)})
    return 0


# -- argument plumbing ---------------------------------------------------------


def _overrides(args) -> dict:
    names = (
        "seed", "eval_seed", "threads", "variant", "beta", "k",
        "walk_length", "num_walks", "epochs",
    )
    return {name: getattr(args, name, None) for name in names}


def build_parser() -> _Parser:
    parser = _Parser(prog="edda", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_seed=True):
        p.add_argument("--config", help="key = value configuration file")
        if with_seed:
            p.add_argument("--seed", type=int, help="root random seed")
        p.add_argument("--threads", type=int, help="reserved; runs are single-threaded")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("spec", help="synthetic spec file")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int)
    p_synth.set_defaults(func=cmd_synth)

    p_align = sub.add_parser("align", help="mine cross-domain similar pairs")
    p_align.add_argument("data", help="interaction file")
    p_align.add_argument("--out", required=True)
    common(p_align)
    p_align.add_argument("--k", type=int)
    p_align.add_argument("--walk-length", dest="walk_length", type=int)
    p_align.add_argument("--num-walks", dest="num_walks", type=int)
    p_align.set_defaults(func=cmd_align)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("data", help="interaction file")
    p_train.add_argument("--pairs", nargs="*", help="pair files or directories")
    p_train.add_argument("--out", required=True)
    common(p_train)
    p_train.add_argument("--variant", choices=VARIANTS)
    p_train.add_argument("--beta", type=float)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--eval-seed", dest="eval_seed", type=int)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained run")
    p_eval.add_argument("data", help="interaction file")
    p_eval.add_argument("run", help="training output directory")
    p_eval.add_argument("--out")
    common(p_eval)
    p_eval.add_argument("--eval-seed", dest="eval_seed", type=int)
    p_eval.add_argument("--force", action="store_true")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (IngestError, synthgen.SynthError, ValueError, KeyError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
