"""Config-driven experiment orchestration: single runs, sweeps, and replay checks."""

import concurrent.futures as cf
import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import shutil
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from .datagen import MnarSpec, SyntheticSpec, generate_dataset, write_dataset_csv
from .errors import InvalidParameterError, RunError
from .learner import (AugmentationConfig, LearnerConfig, evaluate,
                      init_state, train_iteration)
from .metrics import csv_header, csv_row
from .tracking import write_matrix_csv

log = logging.getLogger(__name__)

SECTIONS = {
    "synthetic": SyntheticSpec,
    "mnar": MnarSpec,
    "learner": LearnerConfig,
    "augmentation": AugmentationConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    synthetic: SyntheticSpec = SyntheticSpec()
    mnar: MnarSpec = MnarSpec(protocol="cadr", gamma=20.0)
    learner: LearnerConfig = LearnerConfig()
    augmentation: AugmentationConfig = AugmentationConfig()
    out_dir: str = "runs"
    seeds: tuple = (0,)
    tracking_every: int = 0          # 0: dump C at every eval row
    dump_guidance: bool = False      # also write H and H' next to C
    dump_dataset: bool = False
    n_rare: int = 3

    def to_dict(self) -> dict:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}
        out.update(out_dir=self.out_dir, seeds=list(self.seeds), tracking_every=self.tracking_every,
                   dump_guidance=self.dump_guidance, dump_dataset=self.dump_dataset,
                   n_rare=self.n_rare)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        kw = {}
        for name, sec in SECTIONS.items():
            if name in d:
                kw[name] = _build(sec, d.pop(name))
        if "seeds" in d:
            d["seeds"] = tuple(int(s) for s in d["seeds"])
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kw, **d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_params(self, params: dict) -> "ExperimentConfig":
        d = self.to_dict()
        for key, value in params.items():
            section, name = resolve_param(key)
            if section is None:
                d[name] = value
            else:
                d[section][name] = value
        return ExperimentConfig.from_dict(d)


def _build(cls, d):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise InvalidParameterError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def resolve_param(key: str):
    """Map ``alpha`` or ``learner.alpha`` to ``(section, field)``."""
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS or name not in {f.name for f in dataclasses.fields(SECTIONS[section])}:
            raise InvalidParameterError(f"unknown parameter {key!r}")
        return section, name
    hits = [s for s, cls in SECTIONS.items() if key in {f.name for f in dataclasses.fields(cls)}]
    if len(hits) == 1:
        return hits[0], key
    if not hits and key in {f.name for f in dataclasses.fields(ExperimentConfig)}:
        return None, key
    raise InvalidParameterError(f"parameter {key!r} is {'ambiguous' if hits else 'unknown'}")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(config: ExperimentConfig, path):
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def rare_classes(counts, n: int):
    """Indices of the ``n`` smallest labeled classes (later index first on ties)."""
    order = sorted(range(len(counts)), key=lambda i: (counts[i], -i))
    return sorted(order[:n])


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    artifacts: dict
    duration_s: float
    final: dict
    config_file: str = "config.json"

    def to_dict(self):
        return dataclasses.asdict(self)


def run(config: ExperimentConfig, seed: int, out_dir, on_iteration=None) -> RunManifest:
    """Generate the dataset, train for ``max_iterations``, and write all artifacts to ``out_dir``.

    ``on_iteration`` (optional) receives each iteration's log record.
    """
    t0 = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    cfg = config.learner
    save_config(config, os.path.join(out_dir, "config.json"))

    dataset = generate_dataset(config.synthetic, config.mnar, seed)
    if config.dump_dataset:
        write_dataset_csv(dataset, os.path.join(out_dir, "data"))
    state = init_state(dataset, cfg, seed)
    aug = config.augmentation
    track_every = config.tracking_every or cfg.eval_every
    written = ["config.json", "metrics.csv"]

    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w", newline="\n") as fh:
        fh.write(csv_header(dataset.k) + "\n")
        for it in range(1, cfg.max_iterations + 1):
            try:
                rec = train_iteration(state, dataset, cfg, aug)
                if on_iteration is not None:
                    on_iteration(rec)
                if it % cfg.eval_every == 0 or it == cfg.max_iterations:
                    fh.write(csv_row(evaluate(state, dataset, cfg)) + "\n")
                if it % track_every == 0 or it == cfg.max_iterations:
                    written += _dump_tracking(state, cfg, out_dir, it, config.dump_guidance)
            except Exception as exc:
                raise RunError(it, exc) from exc

    final = evaluate(state, dataset, cfg)
    rare = rare_classes(dataset.class_counts_labeled, config.n_rare)
    report = final.to_dict()
    report.update(
        config_hash=config.digest(),
        seed=int(seed),
        class_counts_labeled=list(dataset.class_counts_labeled),
        class_counts_unlabeled=list(dataset.class_counts_unlabeled),
        rare_classes=rare,
        rare_recall=float(np.mean(final.per_class_recall[rare])),
        degenerate_rescales=state.degenerate_count,
    )
    with open(os.path.join(out_dir, "final_report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append("final_report.json")

    manifest = RunManifest(
        config_hash=config.digest(),
        seed=int(seed),
        artifacts={name: _sha256(os.path.join(out_dir, name)) for name in written},
        duration_s=time.perf_counter() - t0,
        final=report,
    )
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _dump_tracking(state, cfg, out_dir, it, with_guidance):
    if len(state.window) == 0:
        return []
    names = [f"tracking_{it}.csv"]
    write_matrix_csv(os.path.join(out_dir, names[0]), state.window.averaged_matrix())
    if with_guidance:
        from .guidance import build_transition_matrix, class_rescale
        H = build_transition_matrix(state.window.averaged_matrix(), cfg.alpha, cfg.renormalize_rows)
        Hp = class_rescale(H, state.window.averaged_counts())
        for name, M in ((f"transition_{it}.csv", H), (f"rescaled_{it}.csv", Hp)):
            write_matrix_csv(os.path.join(out_dir, name), M)
            names.append(name)
    return names


def replay(manifest_path) -> list:
    """Rerun a manifest's config and seed; returns the artifacts whose bytes differ."""
    run_dir = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    config = load_config(os.path.join(run_dir, manifest.get("config_file", "config.json")))
    mismatched = []
    if config.digest() != manifest["config_hash"]:
        mismatched.append("config.json")
    tmp = tempfile.mkdtemp(prefix="prg_replay_")
    try:
        fresh = run(config, manifest["seed"], tmp)
        for name, digest in manifest["artifacts"].items():
            on_disk = os.path.join(run_dir, name)
            if (fresh.artifacts.get(name) != digest
                    or not os.path.exists(on_disk) or _sha256(on_disk) != digest):
                mismatched.append(name)
        for name in set(fresh.artifacts) - set(manifest["artifacts"]):
            mismatched.append(name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return sorted(set(mismatched))


# --- sweeps ----------------------------------------------------------------

def expand_grid(grid: dict) -> list:
    if not grid:
        raise InvalidParameterError("parameter grid is empty")
    for key in grid:
        resolve_param(key)
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _run_cell(args):
    config_dict, seed, out_dir = args
    try:
        m = run(ExperimentConfig.from_dict(config_dict), seed, out_dir)
        return {"seed": seed, "ok": True, "final": m.final, "manifest": os.path.join(out_dir, "manifest.json")}
    except Exception as exc:  # recorded, the sweep carries on
        return {"seed": seed, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _stats(values):
    if not values:
        return None, None
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("PRG_THREADS")
    n = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, n_tasks))


def sweep(config: ExperimentConfig, grid: dict, seeds, out_dir) -> dict:
    """Run every grid point for every seed; report mean and std of the final metrics."""
    cells = expand_grid(grid)
    seeds = [int(s) for s in seeds]
    tasks, owners = [], []
    for ci, params in enumerate(cells):
        cfg = config.with_params(params)
        for s in seeds:
            tasks.append((cfg.to_dict(), s, os.path.join(out_dir, f"cell_{ci:03d}", f"seed_{s}")))
            owners.append(ci)

    workers = worker_count(len(tasks))
    if workers == 1:
        results = [_run_cell(t) for t in tasks]
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, tasks))

    rows = []
    for ci, params in enumerate(cells):
        mine = [r for o, r in zip(owners, results) if o == ci]
        ok = [r for r in mine if r["ok"]]
        acc = _stats([r["final"]["test_accuracy"] for r in ok])
        gm = _stats([r["final"]["gm"] for r in ok])
        rare = _stats([r["final"]["rare_recall"] for r in ok])
        rows.append({
            "cell": ci,
            "params": params,
            "n_ok": len(ok),
            "n_failed": len(mine) - len(ok),
            "accuracy_mean": acc[0], "accuracy_std": acc[1],
            "gm_mean": gm[0], "gm_std": gm[1],
            "rare_recall_mean": rare[0], "rare_recall_std": rare[1],
            "runs": mine,
        })
        if len(ok) < len(mine):
            log.warning("cell %d: %d of %d runs failed", ci, len(mine) - len(ok), len(mine))

    report = {"config_hash": config.digest(), "seeds": seeds, "grid": grid, "rows": rows}
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "aggregate.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cols = ("accuracy_mean", "accuracy_std", "gm_mean", "gm_std", "rare_recall_mean", "rare_recall_std")
    with open(os.path.join(out_dir, "aggregate.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("cell", "params", "n_ok", "n_failed") + cols)
        for r in rows:
            w.writerow([r["cell"], json.dumps(r["params"], sort_keys=True), r["n_ok"], r["n_failed"]]
                       + ["" if r[c] is None else f"{r[c]:.6f}" for c in cols])
    return report
