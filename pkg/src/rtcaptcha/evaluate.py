"""Recognition-rate measurement: transfer grids, ablation arms, the
fresh-background (manual labeling) scenario, external solvers, reports."""

from __future__ import annotations

import csv
import hashlib
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, attack_dataset
from .data import Dataset
from .generate import GenerationConfig, generate_dataset
from .glyphs import class_to_char
from .models import Model, TrainConfig, accuracy, build_model, predict, train
from .tensor import forward

STRING_LENGTHS = (1, 4, 6)


def per_char_rate(solver, dataset: Dataset) -> float:
    """Fraction of tiles whose predicted class equals the label."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    labels = dataset.labels()
    if isinstance(solver, Model):
        images = dataset.images()
        correct = 0
        for start in range(0, len(images), 256):
            sl = slice(start, start + 256)
            logits, _ = forward(solver, images[sl].astype(solver.dtype))
            correct += int((logits.argmax(axis=1) == labels[sl]).sum())
        return correct / len(dataset)
    hits = sum(1 for (img, label) in dataset.items if predict(solver, img)[0] == label)
    return hits / len(dataset)


def extrapolate_string_rate(per_char: float, length: int) -> float:
    """Whole-string rate under per-character independence: per_char ** length."""
    if not 0.0 <= per_char <= 1.0:
        raise ValueError(f"per-char rate must be in [0,1], got {per_char}")
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    return per_char**length


def string_rate_direct(solver, strips: list[tuple[np.ndarray, str]], tile: int = 64) -> float:
    """Direct multi-tile evaluation: every tile of the strip must be right."""
    from .glyphs import char_to_class

    if not strips:
        raise ValueError("no strips to evaluate")
    hits = 0
    for img, label in strips:
        ok = True
        for i, ch in enumerate(label):
            pred, _ = predict(solver, img[:, i * tile : (i + 1) * tile, :])
            if pred != char_to_class(ch):
                ok = False
                break
        hits += ok
    return hits / len(strips)


@dataclass
class EvalReport:
    scenario: str
    rows: list[dict]
    seed: int
    config_fingerprint: str = ""
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.config_fingerprint:
            self.config_fingerprint = fingerprint(self.config)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
            "config": self.config,
            "rows": self.rows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["scenario"], d["rows"], d["seed"], d["config_fingerprint"], d.get("config", {}))


def fingerprint(config) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _row(solver_name: str, scenario: str, rate: float, **extra) -> dict:
    row = {
        "solver": solver_name,
        "scenario": scenario,
        "per_char": rate,
        **{f"string_{n}": extrapolate_string_rate(rate, n) for n in STRING_LENGTHS},
    }
    row.update(extra)
    return row


def transfer_matrix(surrogates: dict, solvers: dict, attack_cfgs: dict, dataset: Dataset, seed: int = 0) -> EvalReport:
    """For each (attack, surrogate): craft the attacked set once, score every
    solver. Surrogate cells are flagged. Attack name "clean" (cfg None)
    evaluates the unattacked tiles."""
    rows = []
    for attack_name, cfg in attack_cfgs.items():
        for sur_name, surrogate in surrogates.items():
            if cfg is None:
                attacked, sur_name = dataset, "-"
            else:
                atk, acfg = cfg
                attacked = attack_dataset(atk, surrogate, dataset, acfg)
            for sol_name, solver in solvers.items():
                rate = per_char_rate(solver, attacked)
                rows.append(
                    _row(sol_name, f"{attack_name}@{sur_name}", rate,
                         attack=attack_name, surrogate=sur_name,
                         is_surrogate=(sol_name == sur_name))
                )
            if cfg is None:
                break  # clean column does not depend on the surrogate
    config = {
        "attacks": {k: (v[0], json.loads(v[1].to_json())) if v else None for k, v in attack_cfgs.items()},
        "surrogates": sorted(surrogates),
        "solvers": sorted(solvers),
        "n_tiles": len(dataset),
    }
    return EvalReport("transfer", rows, seed, config=config)


ABLATION_ARMS = ("Both", "SGTCS", "PAEG", "None")  # names say what is SKIPPED; None = full pipeline


def ablation_run(dataset_cfg: dict, attack_cfg: tuple[str, AttackConfig], surrogate: Model,
                 solvers: dict, seed: int = 0) -> EvalReport:
    """Four-arm ablation: skip both stages / skip the attack / skip the
    pseudo foreground / run the full pipeline."""
    count = dataset_cfg.get("count", 200)
    base = {k: v for k, v in dataset_cfg.items() if k != "count"}
    clean_ds = generate_dataset(count, GenerationConfig(mode="clean", **base), seed=seed, split="test")
    pseudo_ds = generate_dataset(count, GenerationConfig(mode="pseudo", **base), seed=seed, split="test")
    atk_name, acfg = attack_cfg
    arm_sets = {
        "Both": clean_ds,
        "SGTCS": pseudo_ds,
        "PAEG": attack_dataset(atk_name, surrogate, clean_ds, acfg),
        "None": attack_dataset(atk_name, surrogate, pseudo_ds, acfg),
    }
    rows = []
    for arm in ABLATION_ARMS:
        ds = arm_sets[arm]
        for sol_name, solver in solvers.items():
            rows.append(_row(sol_name, arm, per_char_rate(solver, ds),
                             is_surrogate=(solver is surrogate)))
    config = {"dataset": {**base_config_json(base), "count": count},
              "attack": [atk_name, json.loads(acfg.to_json())], "surrogate": surrogate.arch}
    return EvalReport("ablation", rows, seed, config=config)


def base_config_json(base: dict) -> dict:
    out = {}
    for k, v in base.items():
        out[k] = getattr(v, "name", v) if not isinstance(v, (int, float, str, list, tuple, type(None))) else v
    return out


def manual_label_scenario(train_library, test_library, solver_arch: str, n_train: int,
                          surrogate: Model, attack_cfg: tuple[str, AttackConfig],
                          train_cfg: TrainConfig, seed: int = 0, n_test: int = 110) -> EvalReport:
    """Train a fresh solver on attacked tiles made with background set A,
    then score it on fresh tiles over each background of disjoint set B."""
    overlap = set(train_library.ids()) & set(test_library.ids())
    if overlap:
        raise ValueError(f"background sets overlap: {sorted(overlap)}")
    atk_name, acfg = attack_cfg

    def rtc_set(library, count, split, stream, ids=None):
        cfg = GenerationConfig(mode="pseudo", library=library,
                               background_ids=tuple(ids) if ids else ())
        ds = generate_dataset(count, cfg, seed=stream, split=split)
        return attack_dataset(atk_name, surrogate, ds, acfg)

    train_ds = rtc_set(train_library, n_train, "train", [seed, 1])
    solver = build_model(solver_arch, seed=seed)
    solver, history = train(solver, train_ds, train_cfg)
    train_acc = history["train_accuracy"]

    rows = [_row(solver_arch, "train", train_acc, background="train-set")]
    control = rtc_set(train_library, n_test, "test", [seed, 2])
    rows.append(_row(solver_arch, "control-train-backgrounds", per_char_rate(solver, control),
                     background="train-library-fresh"))
    rates = []
    for i, bg_id in enumerate(test_library.ids()):
        ds = rtc_set(test_library, n_test, "test", [seed, 3 + i], ids=[bg_id])
        rate = per_char_rate(solver, ds)
        rates.append(rate)
        rows.append(_row(solver_arch, f"bg-{i}", rate, background=bg_id))
    rows.append(_row(solver_arch, "avg-test", float(np.mean(rates)), background="all-fresh"))
    config = {"solver": solver_arch, "n_train": n_train, "n_test": n_test,
              "attack": [atk_name, json.loads(acfg.to_json())],
              "train_backgrounds": train_library.ids(), "test_backgrounds": test_library.ids(),
              "train_cfg": train_cfg.__dict__ | {"adversarial": None}}
    return EvalReport("manual-label", rows, seed, config=config)


def external_solver_eval(command: list[str], dataset_dir, timeout: float = 10.0) -> dict:
    """Score an external program (argv = image path, stdout = predicted string,
    exit 0) with exact-match scoring; per-item timeouts count as misses."""
    dataset_dir = Path(dataset_dir)
    with open(dataset_dir / "manifest.json") as f:
        manifest = json.load(f)
    items = manifest["items"]
    if not items:
        raise ValueError("dataset manifest has no items")
    hits, misses, timeouts = 0, 0, 0
    for row in items:
        truth = row.get("char") or class_to_char(int(row["label"]))
        try:
            proc = subprocess.run(
                [*command, str(dataset_dir / row["file"])],
                capture_output=True, text=True, timeout=timeout,
            )
        except FileNotFoundError as e:
            raise RuntimeError(f"external solver failed to spawn: {e}") from e
        except subprocess.TimeoutExpired:
            timeouts += 1
            misses += 1
            continue
        answer = proc.stdout.strip()
        if proc.returncode == 0 and answer == truth:
            hits += 1
        else:
            misses += 1
    return {"per_char": hits / len(items), "items": len(items), "timeouts": timeouts}


# ---------------------------------------------------------------------------
# report files


def write_report(report: EvalReport, base_path) -> list[Path]:
    """JSON (full fidelity) + CSV (flat rows); returns the written paths."""
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    json_path = base.with_suffix(".json")
    csv_path = base.with_suffix(".csv")
    with open(json_path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
    fieldnames = sorted({k for row in report.rows for k in row})
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in report.rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return [json_path, csv_path]


def read_report(base_path) -> EvalReport:
    with open(Path(base_path).with_suffix(".json")) as f:
        return EvalReport.from_dict(json.load(f))
