"""Command-line pipeline driver.

Subcommands: generate, train, attack, eval, ablate, transfer, manual-label,
usability-serve. Every run writes its resolved configuration next to its
outputs; outputs always go to fresh paths.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, attack_dataset
from .backgrounds import builtin_library
from .data import load_dataset, save_dataset
from .evaluate import (
    EvalReport,
    ablation_run,
    fingerprint,
    manual_label_scenario,
    per_char_rate,
    transfer_matrix,
    write_report,
    _row,
)
from .generate import GenerationConfig, generate_dataset
from .models import PRESETS, AdversarialSpec, TrainConfig, build_model, train, train_adversarial
from .shallow import load_shallow
from .tensor import load_model, save_model

log = logging.getLogger("rtcaptcha")


def _fresh_dir(path: str) -> Path:
    p = Path(path)
    if p.exists() and any(p.iterdir()):
        raise SystemExit(f"output path {p} already exists and is not empty")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _record_config(out_dir: Path, args: argparse.Namespace):
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    resolved["fingerprint"] = fingerprint(resolved)
    with open(out_dir / "run_config.json", "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True, default=str)


def _attack_config(args) -> AttackConfig:
    return AttackConfig(
        eps=args.eps, iters=args.iters, mu=args.mu, sigma=args.sigma,
        scales=args.scales, channel_shift=args.shift, seed=args.seed,
    )


def _add_attack_flags(p: argparse.ArgumentParser):
    p.add_argument("--attack", default="sgtcs", choices=["fgsm", "ifgsm", "mifgsm", "sgtcs"])
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=3.0)
    p.add_argument("--scales", type=int, default=5)
    p.add_argument("--shift", default="symmetric", choices=["off", "as_stated", "symmetric"])


def _load_solver(path: str):
    try:
        return load_model(path)
    except (ValueError, IsADirectoryError):
        return load_shallow(path)


def cmd_generate(args):
    out = _fresh_dir(args.out)
    cfg = GenerationConfig(mode=args.mode, p_t=args.pt, p_f=args.pf)
    ds = generate_dataset(args.count, cfg, seed=args.seed, split=args.split)
    save_dataset(ds, out)
    _record_config(out, args)
    log.info("generated %d tiles into %s", len(ds), out)
    return 0


def cmd_train(args):
    out = _fresh_dir(args.out)
    ds = load_dataset(args.dataset)
    model = build_model(args.arch, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, momentum=args.momentum, seed=args.seed)
    if args.adversarial:
        cfg.adversarial = AdversarialSpec(lam=args.lam, k=args.k)
        model, history = train_adversarial(model, ds, cfg)
    else:
        model, history = train(model, ds, cfg)
    save_model(model, out / "model.rtcm")
    with open(out / "history.json", "w") as f:
        json.dump(history, f, indent=2)
    _record_config(out, args)
    log.info("final train accuracy %.4f", history["train_accuracy"])
    return 0


def cmd_attack(args):
    out = _fresh_dir(args.out)
    ds = load_dataset(args.dataset)
    surrogate = load_model(args.surrogate)
    cfg = _attack_config(args)
    attacked = attack_dataset(args.attack, surrogate, ds, cfg)
    save_dataset(attacked, out, extra={"attack_provenance": attacked.attack_provenance})
    _record_config(out, args)
    log.info("attacked %d tiles with %s", len(ds), args.attack)
    return 0


def cmd_eval(args):
    out_base = Path(args.out)
    if out_base.with_suffix(".json").exists():
        raise SystemExit(f"report {out_base}.json already exists")
    ds = load_dataset(args.dataset)
    solver = _load_solver(args.solver)
    if args.filter:
        from .filters import apply_filter

        images = np.stack([apply_filter(img, args.filter) for img, _ in ds.items])
        ds = ds.replace_images(images, {"filter": args.filter})
    rate = per_char_rate(solver, ds)
    name = getattr(solver, "arch", getattr(solver, "kind", "solver"))
    report = EvalReport("eval", [_row(name, args.filter or "plain", rate)],
                        seed=args.seed, config={"dataset": args.dataset, "solver": args.solver})
    paths = write_report(report, out_base)
    _record_config(out_base.parent, args)
    log.info("per-char rate %.4f -> %s", rate, paths[0])
    return 0


def cmd_transfer(args):
    out_base = Path(args.out)
    ds = load_dataset(args.dataset)
    surrogate = load_model(args.surrogate)
    solvers = {f"solver{i}": _load_solver(p) for i, p in enumerate(args.solver)}
    solvers[f"{surrogate.arch}*"] = surrogate
    cfg = _attack_config(args)
    cfgs = {"clean": None}
    for name in ("fgsm", "ifgsm", "mifgsm", "sgtcs"):
        cfgs[name] = (name, cfg)
    report = transfer_matrix({surrogate.arch: surrogate}, solvers, cfgs, ds, seed=args.seed)
    paths = write_report(report, out_base)
    log.info("transfer matrix -> %s", paths[0])
    return 0


def cmd_ablate(args):
    out_base = Path(args.out)
    surrogate = load_model(args.surrogate)
    solvers = {f"solver{i}": _load_solver(p) for i, p in enumerate(args.solver)}
    report = ablation_run({"count": args.count}, (args.attack, _attack_config(args)),
                          surrogate, solvers, seed=args.seed)
    paths = write_report(report, out_base)
    log.info("ablation -> %s", paths[0])
    return 0


def cmd_manual_label(args):
    out_base = Path(args.out)
    surrogate = load_model(args.surrogate)
    report = manual_label_scenario(
        builtin_library("default"), builtin_library("fresh"),
        args.arch, args.n_train, surrogate, (args.attack, _attack_config(args)),
        TrainConfig(epochs=args.epochs, seed=args.seed), seed=args.seed)
    paths = write_report(report, out_base)
    log.info("manual-label scenario -> %s", paths[0])
    return 0


def cmd_usability_serve(args):
    from .service import ServiceConfig, serve

    config = ServiceConfig.load(args.config)
    if args.host:
        config.host = args.host
    if args.port:
        config.port = args.port
    if args.static:
        config.static_dir = args.static
    if args.surrogate:
        config.surrogate_path = args.surrogate
    server = serve(config)
    log.info("serving on http://%s:%d", config.host, config.port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtcaptcha", description=__doc__)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a labelled tile dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--mode", default="pseudo", choices=["clean", "pseudo"])
    p.add_argument("--pt", type=float, default=0.9)
    p.add_argument("--pf", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a CNN solver")
    p.add_argument("--dataset", required=True)
    p.add_argument("--arch", default="tiny_vgg", choices=list(PRESETS))
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--adversarial", action="store_true")
    p.add_argument("--lam", type=float, default=0.3)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack a dataset with a surrogate model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--surrogate", required=True)
    _add_attack_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="score one solver on one dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--solver", required=True)
    p.add_argument("--filter", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="attack/surrogate/solver rate grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--surrogate", required=True)
    p.add_argument("--solver", action="append", default=[])
    _add_attack_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("ablate", help="four-arm pipeline ablation")
    p.add_argument("--surrogate", required=True)
    p.add_argument("--solver", action="append", default=[])
    p.add_argument("--count", type=int, default=200)
    _add_attack_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("manual-label", help="fresh-background training scenario")
    p.add_argument("--arch", default="tiny_lenet", choices=list(PRESETS))
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--surrogate", required=True)
    _add_attack_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_manual_label)

    p = sub.add_parser("usability-serve", help="run the challenge HTTP service")
    p.add_argument("--config", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--static", default=None)
    p.add_argument("--surrogate", default=None)
    p.set_defaults(func=cmd_usability_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as e:
        causes = []
        err: BaseException | None = e
        while err is not None:
            causes.append(f"{type(err).__name__}: {err}")
            err = err.__cause__
        log.error("pipeline failed: %s", " <- ".join(causes))
        return 1


if __name__ == "__main__":
    sys.exit(main())
