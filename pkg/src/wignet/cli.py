"""Command-line entry point: ``wignet <command> [options]``.

Exit codes: 0 success, 1 validation or threshold failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _on_off(value: str) -> bool:
    v = value.strip().lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise UsageError(f"expected on/off, got {value!r}")


def _resolution(value: str) -> tuple[int, int]:
    parts = value.lower().replace(",", "x").split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"bad resolution {value!r}; use N or HxW") from None
    if len(dims) == 1:
        dims *= 2
    if len(dims) != 2 or min(dims) < 1:
        raise UsageError(f"bad resolution {value!r}; use N or HxW")
    return dims[0], dims[1]


@dataclass(frozen=True)
class RunConfig:
    variant: str | None = None  # None: the command's default variant
    resolution: tuple[int, int] | None = None  # None: the variant's own
    classes: int | None = None
    seed: int = 0
    shift: bool = True
    adaptive_k: bool = True
    operator: str = "max_relative"
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    samples: int = 2000
    noise: float = 1.5

    def echo(self) -> str:
        parts = []
        for k, v in asdict(self).items():
            if isinstance(v, bool):
                v = "on" if v else "off"
            elif isinstance(v, (tuple, list)):
                v = "x".join(str(i) for i in v)
            parts.append(f"{k}={v}")
        return "config: " + " ".join(parts)

    def model_config(self):
        from .model import get_config

        over = {"seed": self.seed, "shift": self.shift, "adaptive_k": self.adaptive_k, "operator": self.operator}
        if self.resolution is not None:
            over["input_resolution"] = self.resolution
        if self.classes is not None:
            over["num_classes"] = self.classes
        return get_config(self.variant or "toy-narrow", **over)


_PARSERS = {
    "variant": str, "resolution": _resolution, "classes": int, "seed": int,
    "shift": _on_off, "adaptive_k": _on_off, "operator": str, "epochs": int,
    "batch_size": int, "lr": float, "momentum": float, "samples": int, "noise": float,
}
assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def _parse_value(key: str, value):
    try:
        return _PARSERS[key](value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes in keys allowed."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _PARSERS:
            raise UsageError(f"{path}:{n}: unknown config key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = replace(cfg, **read_config_file(args.config))
    flags = {}
    for key in _PARSERS:
        value = getattr(args, key, None)
        if value is not None:
            flags[key] = _parse_value(key, value)
    cfg = replace(cfg, **flags)
    if cfg.variant is None:
        cfg = replace(cfg, variant=getattr(args, "default_variant", "toy-narrow"))
    from .layers import OPERATORS
    from .model import VARIANTS

    if cfg.variant not in VARIANTS:
        raise UsageError(f"unknown variant {cfg.variant!r}; choose from {sorted(VARIANTS)}")
    if cfg.operator not in OPERATORS:
        raise UsageError(f"unknown operator {cfg.operator!r}; choose from {sorted(OPERATORS)}")
    return cfg


# ----------------------------------------------------------------------
# commands

def cmd_gradcheck(args, cfg: RunConfig, out) -> int:
    from .checks import SUITES, THRESHOLDS

    threshold = THRESHOLDS[args.scope]
    ok = True
    print(f"gradcheck scope={args.scope} seed={cfg.seed} threshold={threshold:.0e}", file=out)
    for name, err in SUITES[args.scope](cfg.seed):
        passed = err < threshold
        ok &= passed
        print(f"  {name:<22s} {err:.3e}  {'PASS' if passed else 'FAIL'}", file=out)
    print("gradcheck: " + ("all passed" if ok else "FAILED"), file=out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_params(args, cfg: RunConfig, out) -> int:
    from .model import REFERENCE_SIZES, build, count_macs, count_params, mac_breakdown, stage_params

    mcfg = cfg.model_config()
    if cfg.resolution is None and cfg.variant in REFERENCE_SIZES:
        mcfg = mcfg.with_(input_resolution=(256, 256))
    model = build(mcfg)
    H, W = mcfg.input_resolution
    params, macs = count_params(model), count_macs(model)
    per_stage_macs: dict[str, int] = {}
    for name, v in mac_breakdown(model):
        key = name.split(".")[0]
        per_stage_macs[key] = per_stage_macs.get(key, 0) + v
    print(f"WiGNet-{cfg.variant} at {H}x{W}", file=out)
    print(f"  {'component':<12s} {'params':>12s} {'MACs':>16s}", file=out)
    for key, p in stage_params(model).items():
        print(f"  {key:<12s} {p:>12,d} {per_stage_macs.get(key, 0):>16,d}", file=out)
    print(f"  {'total':<12s} {params:>12,d} {macs:>16,d}", file=out)
    status = EXIT_OK
    if cfg.variant in REFERENCE_SIZES:
        tp, tm = REFERENCE_SIZES[cfg.variant]
        dp = 100 * (params / 1e6 - tp) / tp
        dm = 100 * (macs / 1e9 - tm) / tm
        print(f"  params {params / 1e6:.2f}M vs target {tp}M ({dp:+.1f}%, tolerance 15%)", file=out)
        print(f"  MACs   {macs / 1e9:.3f}B vs target {tm}B ({dm:+.1f}%, tolerance 20%)", file=out)
        if args.check and (abs(dp) > 15 or abs(dm) > 20):
            status = EXIT_FAIL
    if args.breakdown:
        for name, v in mac_breakdown(model):
            print(f"    {name:<36s} {v:>16,d}", file=out)
    return status


def cmd_profile(args, cfg: RunConfig, out) -> int:
    from .profiler import crossover_report, sweep, write_csv

    if args.factor < 2 or args.min_res < 1 or args.max_res < args.min_res:
        raise UsageError("need 1 <= min-res <= max-res and factor >= 2")
    res, r = [], args.min_res
    while r <= args.max_res:
        res.append(r)
        r *= args.factor
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    try:
        rows = sweep(res, cfg.variant, methods, pair_ceiling=args.pair_ceiling, repeats=args.repeats, seed=cfg.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    for row in rows:
        print(
            f"  {row['method']:<11s} {row['image_h']:>5d}x{row['image_w']:<5d} pairs={row['pairs']:<12d}"
            f" macs={row['analytic_macs']:<14d} wall_ms={row['wall_ms'] or '-':<10s} {row['status']}",
            file=out,
        )
    if args.out:
        write_csv(rows, args.out)
        print(f"wrote {args.out}", file=out)
    print(crossover_report(), file=out)
    return EXIT_FAIL if any(r["status"] == "mismatch" for r in rows) else EXIT_OK


def cmd_train(args, cfg: RunConfig, out) -> int:
    from .data import make_dataset
    from .model import build
    from .train import TrainingDiverged, train

    mcfg = cfg.model_config()
    H, W = mcfg.input_resolution
    if H != W:
        raise UsageError("training uses square synthetic images")
    data = make_dataset(cfg.samples, mcfg.num_classes, cfg.seed, size=H, noise=cfg.noise)
    model = build(mcfg)
    out_dir = Path(args.out) if args.out else None
    try:
        result = train(
            model, data, epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
            momentum=cfg.momentum, seed=cfg.seed, out_dir=out_dir, log=lambda s: print(s, file=out),
        )
    except TrainingDiverged as e:
        print(f"error: training diverged: {e}", file=out)
        return EXIT_FAIL
    print(f"best val_acc {result.best_val_acc:.4f} at epoch {result.best_epoch}", file=out)
    if result.checkpoint is not None:
        print(f"checkpoint {result.checkpoint}", file=out)
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig, out) -> int:
    from .io import FormatError, load_wgt1
    from .tensor import DimensionError
    from .train import load_model, predict

    try:
        model = load_model(args.checkpoint)
    except (OSError, FormatError, KeyError, ValueError) as e:
        print(f"error: cannot load checkpoint {args.checkpoint}: {e}", file=out)
        return EXIT_FAIL
    try:
        images = load_wgt1(args.input)
    except FormatError as e:
        print(f"error: {args.input}: {e}", file=out)
        return EXIT_FAIL
    except OSError as e:
        print(f"error: cannot read {args.input}: {e}", file=out)
        return EXIT_FAIL
    if images.ndim == 3:
        images = images[None]
    try:
        ids, scores = predict(model, images.astype(np.float32), top=args.top)
    except DimensionError as e:
        print(f"error: input incompatible with checkpoint: {e}", file=out)
        return EXIT_FAIL
    for i, (row_ids, row_scores) in enumerate(zip(ids, scores)):
        pairs = "  ".join(f"{c}:{s:.4f}" for c, s in zip(row_ids, row_scores))
        print(f"image {i}: {pairs}", file=out)
    return EXIT_OK


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run configuration")
    g.add_argument("--config", help="flat key=value config file; flags override its values")
    g.add_argument("--variant", help="Ti, S, M, toy-narrow or toy-deep")
    g.add_argument("--resolution", help="input resolution, N or HxW")
    g.add_argument("--classes", help="number of classes")
    g.add_argument("--seed", help="random seed")
    g.add_argument("--shift", choices=["on", "off"], help="cyclic window shift in alternate blocks")
    g.add_argument("--adaptive-k", dest="adaptive_k", choices=["on", "off"], help="region-size scaled k")
    g.add_argument("--operator", choices=["max_relative", "graphsage", "edgeconv"], help="graph convolution")
    g.add_argument("--out", help="output path (CSV file or run directory)")

    p = argparse.ArgumentParser(prog="wignet", description="Windowed vision GNN toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    s.add_argument("scope", choices=["ops", "block", "model"])
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("params", parents=[common], help="parameter and MAC report")
    s.add_argument("--breakdown", action="store_true", help="list MACs layer by layer")
    s.add_argument("--check", action="store_true", help="exit 1 when outside the target tolerance")
    s.set_defaults(func=cmd_params, default_variant="Ti")

    s = sub.add_parser("profile", parents=[common], help="k-NN cost sweep over resolutions")
    s.add_argument("--min-res", type=int, default=64)
    s.add_argument("--max-res", type=int, default=512)
    s.add_argument("--factor", type=int, default=2)
    s.add_argument("--methods", default="wignet_knn,global_knn")
    s.add_argument("--pair-ceiling", type=int, default=1 << 26, help="skip global builds above this many pairs")
    s.add_argument("--repeats", type=int, default=3, help="timing runs per row (median reported)")
    s.set_defaults(func=cmd_profile, default_variant="Ti")

    s = sub.add_parser("train", parents=[common], help="train on the synthetic grating dataset")
    s.add_argument("--epochs")
    s.add_argument("--batch-size", dest="batch_size")
    s.add_argument("--lr")
    s.add_argument("--momentum")
    s.add_argument("--samples")
    s.add_argument("--noise")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="top-k classes for a WGT1 image tensor")
    s.add_argument("--checkpoint", required=True, help="checkpoint directory written by train")
    s.add_argument("--input", required=True, help="WGT1 tensor [B,H,W,3] or [H,W,3]")
    s.add_argument("--top", type=int, default=5)
    s.set_defaults(func=cmd_predict)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = resolve_config(args)
        print(cfg.echo(), file=out)
        return args.func(args, cfg, out)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
