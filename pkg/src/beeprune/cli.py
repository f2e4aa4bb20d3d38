"""Command-line harness: ``search``, ``cost``, and ``replay``.

Exit codes: 0 success, 1 validation problem (config, descriptor, structure,
or history), 2 fatal evaluator failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import logging
import shlex
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import arch as archmod
from .arch import ArchitectureError, ArchitectureSpec
from .fitness import EvaluationError
from .fitness.external import ExternalEvaluator
from .fitness.synthetic import SyntheticEvaluator
from .fitness.toy import (
    ToyTrainerEvaluator,
    fine_tune,
    make_blobs,
    train_full_model,
)
from .replay import ReplayViolation, validate_history
from .search import SearchConfig, run_search
from .seeds import derive_seed
from .space import InvalidAlphaError, SearchSpace, build_space, validate_structure

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_EVALUATOR = 2
EXIT_IO = 3

_BACKENDS = ("synthetic", "toy", "external")

_TOP_KEYS = {
    "arch", "alpha", "cycles", "population", "max_trials", "fitness_epochs",
    "seed", "evaluator", "out_dir", "parallel_eval",
    "synthetic", "toy", "external",
}
_SYNTHETIC_KEYS = {"target", "sharpness"}
_TOY_KEYS = {
    "train_size", "test_size", "lobes", "radius", "noise", "dataset_seed",
    "full_epochs", "lr", "batch_size", "fine_tune_epochs",
}
_EXTERNAL_KEYS = {"cmd", "timeout"}


class ConfigError(ValueError):
    """The merged config/flag settings are unusable."""


@dataclass
class Settings:
    """Resolved run settings (config file merged with flag overrides)."""

    arch: str
    alpha: float
    cycles: int = 2
    population: int = 3
    max_trials: int = 2
    fitness_epochs: int = 2
    seed: int = 0
    evaluator: str = "synthetic"
    out_dir: Optional[str] = None
    parallel_eval: int = 1
    synthetic: dict = field(default_factory=dict)
    toy: dict = field(default_factory=dict)
    external: dict = field(default_factory=dict)


def _require_type(value: Any, types: tuple, what: str) -> Any:
    if isinstance(value, bool) or not isinstance(value, types):
        raise ConfigError(f"{what} has the wrong type: {value!r}")
    return value


def _load_config_file(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path}: must be a JSON object")
    return doc


def resolve_settings(args: argparse.Namespace) -> Settings:
    """Merge a config file (if any) with command-line overrides."""
    doc: dict = {}
    if args.config:
        doc = _load_config_file(args.config)
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"config: unknown key '{sorted(unknown)[0]}'")

    def pick(flag: Any, key: str, default: Any) -> Any:
        if flag is not None:
            return flag
        return doc.get(key, default)

    sections = [name for name in _BACKENDS if name in doc]
    if len(sections) > 1:
        raise ConfigError(
            f"config: exactly one evaluator section allowed, found {sections}"
        )
    evaluator = pick(args.evaluator, "evaluator", None)
    if evaluator is None:
        evaluator = sections[0] if sections else "synthetic"
    if evaluator not in _BACKENDS:
        raise ConfigError(f"unknown evaluator '{evaluator}'")
    if sections and sections[0] != evaluator:
        raise ConfigError(
            f"config has a '{sections[0]}' section but the evaluator is "
            f"'{evaluator}'"
        )

    arch = pick(args.arch, "arch", None)
    if not arch:
        raise ConfigError("an architecture descriptor is required (--arch)")
    alpha = pick(args.alpha, "alpha", None)
    if alpha is None:
        raise ConfigError("alpha is required (--alpha or config)")

    synthetic = dict(doc.get("synthetic", {}))
    toy = dict(doc.get("toy", {}))
    external = dict(doc.get("external", {}))
    for section, allowed, name in (
        (synthetic, _SYNTHETIC_KEYS, "synthetic"),
        (toy, _TOY_KEYS, "toy"),
        (external, _EXTERNAL_KEYS, "external"),
    ):
        if not isinstance(doc.get(name, {}), dict):
            raise ConfigError(f"config: '{name}' must be an object")
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"config: unknown key '{name}.{sorted(bad)[0]}'")

    if args.external_cmd is not None:
        if evaluator != "external":
            raise ConfigError(
                f"--external-cmd given but the evaluator is '{evaluator}'"
            )
        external["cmd"] = args.external_cmd
    if evaluator == "external" and not external.get("cmd"):
        raise ConfigError("external evaluator needs a command (--external-cmd)")

    settings = Settings(
        arch=str(arch),
        alpha=float(_require_type(alpha, (int, float), "alpha")),
        cycles=int(_require_type(pick(args.cycles, "cycles", 2), (int,), "cycles")),
        population=int(
            _require_type(pick(args.population, "population", 3), (int,), "population")
        ),
        max_trials=int(
            _require_type(pick(args.max_trials, "max_trials", 2), (int,), "max_trials")
        ),
        fitness_epochs=int(
            _require_type(doc.get("fitness_epochs", 2), (int,), "fitness_epochs")
        ),
        seed=int(_require_type(pick(args.seed, "seed", 0), (int,), "seed")),
        evaluator=evaluator,
        out_dir=pick(args.out_dir, "out_dir", None),
        parallel_eval=int(
            _require_type(
                pick(args.parallel_eval, "parallel_eval", 1), (int,), "parallel_eval"
            )
        ),
        synthetic=synthetic,
        toy=toy,
        external=external,
    )
    if settings.parallel_eval < 1:
        raise ConfigError("parallel_eval must be >= 1")
    return settings


def resolve_arch_path(value: str) -> Path:
    """Accept a filesystem path or the name of a bundled descriptor."""
    p = Path(value)
    if p.exists():
        return p
    bundled = importlib.resources.files("beeprune.descriptors").joinpath(
        f"{value}.json"
    )
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"architecture descriptor not found: {value}")


# -- evaluator construction ---------------------------------------------------


def _toy_param(toy: dict, key: str, default, types) -> Any:
    value = toy.get(key, default)
    if value is None:
        return None
    return _require_type(value, types, f"toy.{key}")


def _build_toy(settings: Settings, spec: ArchitectureSpec, space: SearchSpace):
    if spec.input_h != 1 or spec.input_w != 1:
        raise ConfigError(
            "the toy evaluator needs a 1x1 input descriptor (vector data)"
        )
    if any(layer.kind != archmod.KIND_FC for layer in spec.layers):
        raise ConfigError(
            "the toy evaluator only trains fully-connected architectures"
        )
    toy = settings.toy
    dataset_seed = _toy_param(toy, "dataset_seed", None, (int,))
    if dataset_seed is None:
        dataset_seed = derive_seed(settings.seed, "dataset")
    dataset = make_blobs(
        num_classes=spec.num_classes,
        dim=spec.input_c,
        train_size=int(_toy_param(toy, "train_size", 512, (int,))),
        test_size=int(_toy_param(toy, "test_size", 256, (int,))),
        lobes=int(_toy_param(toy, "lobes", 2, (int,))),
        radius=float(_toy_param(toy, "radius", 3.5, (int, float))),
        noise=float(_toy_param(toy, "noise", 1.0, (int, float))),
        seed=dataset_seed,
    )
    widths = [slot.base_channels for slot in spec.slots]
    full_epochs = int(_toy_param(toy, "full_epochs", 20, (int,)))
    lr = float(_toy_param(toy, "lr", 0.05, (int, float)))
    batch_size = int(_toy_param(toy, "batch_size", 32, (int,)))
    logger.info("training the full toy model (%d epochs)", full_epochs)
    full_model = train_full_model(
        dataset, widths,
        epochs=full_epochs,
        seed=derive_seed(settings.seed, "full-train"),
        lr=lr,
        batch_size=batch_size,
    )
    full_accuracy = full_model.accuracy(dataset.test_x, dataset.test_y)
    logger.info("full toy model held-out accuracy: %.4f", full_accuracy)
    evaluator = ToyTrainerEvaluator(
        space, dataset, full_model, lr=lr, batch_size=batch_size
    )
    extras = {
        "dataset": dataset,
        "full_model": full_model,
        "full_accuracy": full_accuracy,
        "fine_tune_epochs": int(_toy_param(toy, "fine_tune_epochs", 10, (int,))),
        "lr": lr,
        "batch_size": batch_size,
    }
    return evaluator, extras


def _build_evaluator(settings: Settings, spec: ArchitectureSpec, space: SearchSpace):
    """Returns (evaluator, toy_extras or None, closer)."""
    if settings.evaluator == "synthetic":
        target = settings.synthetic.get("target")
        if target is None:
            rng = np.random.default_rng(derive_seed(settings.seed, "target"))
            target = [
                cands[int(rng.integers(0, len(cands)))] for cands in space.candidates
            ]
        sharpness = settings.synthetic.get("sharpness", 0.5)
        _require_type(sharpness, (int, float), "synthetic.sharpness")
        try:
            evaluator = SyntheticEvaluator(space, target, sharpness=float(sharpness))
        except ValueError as exc:
            raise ConfigError(f"synthetic evaluator: {exc}") from exc
        return evaluator, None, lambda: None
    if settings.evaluator == "toy":
        evaluator, extras = _build_toy(settings, spec, space)
        return evaluator, extras, lambda: None
    cmd = shlex.split(str(settings.external["cmd"]))
    timeout = settings.external.get("timeout", 3600.0)
    _require_type(timeout, (int, float), "external.timeout")
    evaluator = ExternalEvaluator(
        cmd, timeout=float(timeout), workers=settings.parallel_eval
    )
    return evaluator, None, evaluator.close


# -- reports ------------------------------------------------------------------


def _pruned_percent(baseline: int, pruned: int) -> float:
    return round(100.0 * (1.0 - pruned / baseline), 2)


def build_report(
    spec: ArchitectureSpec, structure: Sequence[int], fitness: Optional[float]
) -> dict:
    baseline = archmod.cost_report(spec)
    pruned = archmod.cost_report(spec, structure)
    kept = archmod.expand_structure(spec, structure)
    layers = []
    for layer in spec.layers:
        if not layer.prunable:
            continue
        base = int(layer.out_channels)  # type: ignore[arg-type]
        layers.append(
            {
                "name": layer.name,
                "base_channels": base,
                "kept_channels": kept[layer.name],
                "pruned_percent": _pruned_percent(base, kept[layer.name]),
            }
        )
    report = {
        "architecture": spec.name,
        "structure": list(int(v) for v in structure),
        "fitness": fitness,
        "baseline": {
            "channels": baseline.channels,
            "flops": baseline.flops,
            "params": baseline.params,
        },
        "pruned": {
            "channels": pruned.channels,
            "flops": pruned.flops,
            "params": pruned.params,
        },
        "pruned_percent": {
            "channels": _pruned_percent(baseline.channels, pruned.channels),
            "flops": _pruned_percent(baseline.flops, pruned.flops),
            "params": _pruned_percent(baseline.params, pruned.params),
        },
        "layers": layers,
    }
    return report


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _fmt_millions(value: int) -> str:
    return f"{value / 1e6:.2f}M"


# -- commands -----------------------------------------------------------------


def cmd_search(args: argparse.Namespace) -> int:
    try:
        settings = resolve_settings(args)
        arch_path = resolve_arch_path(settings.arch)
        spec = archmod.load_architecture(arch_path)
        space = build_space(spec, settings.alpha)
        config = SearchConfig(
            alpha=settings.alpha,
            cycles=settings.cycles,
            population=settings.population,
            max_trials=settings.max_trials,
            fitness_epochs=settings.fitness_epochs,
            seed=settings.seed,
        )
    except (ConfigError, ArchitectureError, InvalidAlphaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    out_dir = Path(
        settings.out_dir
        if settings.out_dir
        else f"runs/{spec.name}-alpha{settings.alpha}-seed{settings.seed}"
    )
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        history_file = (out_dir / "history.jsonl").open("w", encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        evaluator, toy_extras, closer = _build_evaluator(settings, spec, space)
    except ConfigError as exc:
        history_file.close()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EvaluationError as exc:
        history_file.close()
        print(f"error: evaluator failed to start: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR

    def on_event(event: dict) -> None:
        history_file.write(json.dumps(event) + "\n")
        history_file.flush()

    try:
        result = run_search(
            space,
            config,
            evaluator,
            arch_name=spec.name,
            on_event=on_event,
            parallel=settings.parallel_eval,
        )
    except EvaluationError as exc:
        print(f"error: evaluation failed fatally: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    finally:
        history_file.close()
        closer()

    best = {
        "structure": list(result.structure),
        "fitness": result.fitness,
        "evaluations": result.evaluations,
        "config": {
            "arch": spec.name,
            "alpha": settings.alpha,
            "cycles": settings.cycles,
            "population": settings.population,
            "max_trials": settings.max_trials,
            "fitness_epochs": settings.fitness_epochs,
            "seed": settings.seed,
            "evaluator": settings.evaluator,
        },
    }
    report = build_report(spec, result.structure, result.fitness)
    if toy_extras is not None:
        epochs = toy_extras["fine_tune_epochs"]
        model, accuracy = fine_tune(
            result.structure,
            evaluator.cached_model(result.structure),
            toy_extras["dataset"],
            epochs=epochs,
            seed=derive_seed(settings.seed, "fine-tune"),
            full_model=toy_extras["full_model"],
            lr=toy_extras["lr"],
            batch_size=toy_extras["batch_size"],
        )
        fine = {
            "epochs": epochs,
            "accuracy": accuracy,
            "full_model_accuracy": toy_extras["full_accuracy"],
        }
        best["fine_tune"] = fine
        report["fine_tune"] = fine

    try:
        _write_json(out_dir / "best.json", best)
        _write_json(out_dir / "report.json", report)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    print(
        f"arch {spec.name}  alpha {settings.alpha}  cycles {settings.cycles}  "
        f"population {settings.population}  seed {settings.seed}"
    )
    print(f"best fitness {result.fitness:.6f}  structure {list(result.structure)}")
    print(f"evaluations {result.evaluations}")
    rp = report["pruned_percent"]
    print(
        f"flops {_fmt_millions(report['baseline']['flops'])} -> "
        f"{_fmt_millions(report['pruned']['flops'])} (-{rp['flops']}%)  "
        f"params {_fmt_millions(report['baseline']['params'])} -> "
        f"{_fmt_millions(report['pruned']['params'])} (-{rp['params']}%)"
    )
    if toy_extras is not None:
        print(
            f"fine-tuned accuracy {best['fine_tune']['accuracy']:.4f} "
            f"(full model {best['fine_tune']['full_model_accuracy']:.4f})"
        )
    print(f"wrote {out_dir}/best.json, history.jsonl, report.json")
    return EXIT_OK


def cmd_cost(args: argparse.Namespace) -> int:
    try:
        arch_path = resolve_arch_path(args.arch)
        spec = archmod.load_architecture(arch_path)
        structure = None
        if args.structure:
            doc = json.loads(Path(args.structure).read_text(encoding="utf-8"))
            if not isinstance(doc, list):
                raise ConfigError(
                    f"{args.structure}: structure file must be a JSON array"
                )
            structure = [int(v) for v in doc]
        rows = list(archmod.iter_layer_costs(spec, structure))
        totals = archmod.cost_report(spec, structure)
    except (ConfigError, ArchitectureError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    print(f"{'layer':<16} {'kind':<16} {'in':>6} {'out':>6} {'flops':>14} {'params':>12}")
    for layer, in_c, out_c, flops, params in rows:
        print(
            f"{layer.name:<16} {layer.kind:<16} {in_c:>6} {out_c:>6} "
            f"{flops:>14} {params:>12}"
        )
    print(
        f"{'total':<16} {'':<16} {'':>6} {totals.channels:>6} "
        f"{totals.flops:>14} {totals.params:>12}"
    )
    summary = {
        "architecture": spec.name,
        "channels": totals.channels,
        "flops": totals.flops,
        "params": totals.params,
    }
    if structure is not None:
        baseline = archmod.cost_report(spec)
        summary["baseline"] = {
            "channels": baseline.channels,
            "flops": baseline.flops,
            "params": baseline.params,
        }
        summary["pruned_percent"] = {
            "channels": _pruned_percent(baseline.channels, totals.channels),
            "flops": _pruned_percent(baseline.flops, totals.flops),
            "params": _pruned_percent(baseline.params, totals.params),
        }
    print(json.dumps(summary))
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        lines = Path(args.history).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        summary = validate_history(lines)
    except ReplayViolation as exc:
        print(f"replay: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"history ok: {args.history}")
    print(
        f"arch {summary.arch}  population {summary.population}  "
        f"cycles {summary.cycles}  evaluations {summary.evaluations}"
    )
    print(
        f"best fitness {summary.best_fitness:.6f}  "
        f"structure {summary.best_structure}"
    )
    counts = "  ".join(f"{k}={v}" for k, v in sorted(summary.counts.items()))
    print(f"events: {counts}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beeprune",
        description="Bee-colony search over pruned channel structures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    search = sub.add_parser("search", help="run a pruning-structure search")
    search.add_argument("--config", help="JSON config file")
    search.add_argument("--arch", help="descriptor path or bundled name")
    search.add_argument("--alpha", type=float, help="shrinkage fraction (0.1..1.0)")
    search.add_argument("--cycles", type=int, help="search cycles")
    search.add_argument("--population", type=int, help="food sources")
    search.add_argument("--max-trials", type=int, help="trials before scouting")
    search.add_argument("--seed", type=int, help="root seed")
    search.add_argument(
        "--evaluator", choices=_BACKENDS, help="fitness backend"
    )
    search.add_argument(
        "--external-cmd", help="command line of an external evaluator process"
    )
    search.add_argument("--out-dir", help="output directory")
    search.add_argument(
        "--parallel-eval", type=int, help="concurrent employed-phase evaluations"
    )
    search.set_defaults(func=cmd_search)

    cost = sub.add_parser("cost", help="print per-layer and total costs")
    cost.add_argument("--arch", required=True, help="descriptor path or bundled name")
    cost.add_argument("--structure", help="JSON file with a structure to apply")
    cost.set_defaults(func=cmd_cost)

    replay = sub.add_parser("replay", help="validate a stored search history")
    replay.add_argument("history", help="history.jsonl produced by search")
    replay.set_defaults(func=cmd_replay)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
