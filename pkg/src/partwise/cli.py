"""Command-line entry point.

One binary with subcommands covering the whole pipeline: synthesize shapes,
generate part hypotheses, export scorer volumes, score, label, evaluate,
sweep budgets, correspond two shapes, and train the builtin scorer.

Exit codes: 0 success, 2 validation or bad input, 3 external-scorer
transport failure, 4 internal error (with traceback).

Defaults can come from a key=value config file, selected by --config or the
PARTWISE_CONFIG environment variable; explicit flags win over the file.
Recognized keys: seed, budget, lambda, eta_fraction, top_k,
grouping_resolution, eval_resolution, max_sweeps. Lines starting with '#'
are comments.

Output files are written atomically: a command that fails leaves no partial
artifact behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import traceback

import numpy as np

from . import correspond as corr
from . import evaluation as evalmod
from .assembly import (export_labeled_obj, load_assembly, write_manifest,
                       write_obj)
from .errors import ConfigError, ParseError, TransportError, ValidationError
from .hypothesis import (GroundTruthContext, GroupGeometry, build_hierarchies,
                         ground_truth_parts, augment, read_hypotheses,
                         select_hypotheses, write_hypotheses)
from .pipeline import RunConfig, check_hypotheses_against, label_components
from .scoring import (BuiltinTrainConfig, ScorerConfig, extract_features,
                      read_scores, score, train_builtin, write_score_header,
                      write_scores)
from .synth import (FAMILIES, SynthConfig, assign_splits, read_dataset_manifest,
                    synthesize_dataset, write_dataset_manifest)
from .voxel import HYPOTHESIS_RESOLUTION, hypothesis_volumes, write_mcv1

CONFIG_ENV = "PARTWISE_CONFIG"

_CONFIG_KEYS = {
    "seed": int,
    "budget": int,
    "lambda": float,
    "eta_fraction": float,
    "top_k": str,
    "grouping_resolution": int,
    "eval_resolution": int,
    "max_sweeps": int,
}


def read_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"config line {line_no}: expected key = value")
            key, _, raw = text.partition("=")
            key = key.strip()
            raw = raw.strip().strip('"')
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"config line {line_no}: unknown key {key!r}")
            try:
                values[key] = _CONFIG_KEYS[key](raw)
            except ValueError:
                raise ConfigError(f"config line {line_no}: bad value for {key}")
    return values


def _parse_top_k(raw) -> int | str:
    if raw is None or raw == "all":
        return "all"
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"top_k must be an integer or 'all', got {raw!r}")
    if value < 1:
        raise ConfigError("top_k must be positive")
    return value


def _resolve(args, attr: str, file_values: dict, file_key: str, default):
    """Flag > config file > hard default."""
    flag = getattr(args, attr, None)
    if flag is not None:
        return flag
    if file_key in file_values:
        return file_values[file_key]
    return default


def build_run_config(args) -> RunConfig:
    file_values = {}
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        file_values = read_config_file(path)
    base = RunConfig()

    def pick(attr, file_key, default):
        return _resolve(args, attr, file_values, file_key, default)

    return RunConfig(
        seed=pick("seed", "seed", base.seed),
        budget=pick("budget", "budget", base.budget),
        lam=pick("lam", "lambda", base.lam),
        eta_fraction=pick("eta_fraction", "eta_fraction", base.eta_fraction),
        top_k=_parse_top_k(pick("top_k", "top_k", base.top_k)),
        grouping_resolution=pick("grouping_resolution", "grouping_resolution",
                                 base.grouping_resolution),
        eval_resolution=pick("eval_resolution", "eval_resolution",
                             base.eval_resolution),
        max_sweeps=pick("max_sweeps", "max_sweeps", base.max_sweeps),
    )


# ============================================================
# Atomic output helpers
# ============================================================

def atomic_write(path, writer) -> None:
    """Run writer(tmp_path) then move the result over path."""
    path = os.path.abspath(os.fspath(path))
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".partwise-")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_text(path, text: str) -> None:
    def writer(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
    atomic_write(path, writer)


def atomic_json(path, doc) -> None:
    atomic_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def atomic_labeled_obj(assembly, labels, path) -> None:
    """Atomic OBJ+MTL pair; the MTL reference stays the final basename."""
    path = os.path.abspath(os.fspath(path))
    parent = os.path.dirname(path)
    with tempfile.TemporaryDirectory(dir=parent, prefix=".partwise-") as tmp:
        tmp_obj = os.path.join(tmp, os.path.basename(path))
        export_labeled_obj(assembly, labels, tmp_obj)
        stem = os.path.splitext(path)[0]
        tmp_stem = os.path.splitext(tmp_obj)[0]
        os.replace(tmp_stem + ".mtl", stem + ".mtl")
        os.replace(tmp_obj, path)


# ============================================================
# Shared loaders
# ============================================================

def _load_shape(mesh, manifest=None):
    return load_assembly(mesh, manifest)

def _load_dataset(path, split: str):
    base = os.path.dirname(os.path.abspath(os.fspath(path)))
    records = read_dataset_manifest(path)
    if split != "all":
        records = [r for r in records if r["split"] == split]
    if not records:
        raise ValidationError(f"dataset has no shapes in split {split!r}")
    out = []
    for rec in records:
        mesh = os.path.join(base, rec["mesh"])
        manifest = os.path.join(base, rec["manifest"])
        out.append(_load_shape(mesh, manifest))
    return out


# ============================================================
# Subcommands
# ============================================================

def cmd_synth(args) -> int:
    cfg = build_run_config(args)
    families = tuple(f.strip() for f in args.family.split(",") if f.strip())
    synth_cfg = SynthConfig(families=families, count=args.count,
                            min_components_per_part=args.min_pieces,
                            max_components_per_part=args.max_pieces)
    assemblies = synthesize_dataset(synth_cfg, cfg.seed)
    splits = assign_splits(len(assemblies), args.train_fraction)
    os.makedirs(args.out_dir, exist_ok=True)

    records = []
    for assembly, split in zip(assemblies, splits):
        mesh_name = f"{assembly.id}.obj"
        manifest_name = f"{assembly.id}.json"
        atomic_write(os.path.join(args.out_dir, mesh_name),
                     lambda tmp, a=assembly: write_obj(a, tmp))
        names = {c.name: assembly.label_set.name_of(assembly.labels[c.id])
                 for c in assembly.components}
        atomic_write(os.path.join(args.out_dir, manifest_name),
                     lambda tmp, a=assembly, n=names:
                     write_manifest(tmp, a.label_set, n))
        records.append({"mesh": mesh_name, "manifest": manifest_name, "split": split})
    atomic_write(os.path.join(args.out_dir, "dataset.json"),
                 lambda tmp: write_dataset_manifest(tmp, records))
    print(f"wrote {len(records)} shapes to {args.out_dir}")
    return 0


def cmd_hypothesize(args) -> int:
    cfg = build_run_config(args)
    assembly = _load_shape(args.mesh)
    geometry = GroupGeometry(assembly, cfg.grouping_resolution)
    hierarchies = build_hierarchies(geometry)
    hyps = select_hypotheses(hierarchies, cfg.budget, cfg.seed)
    atomic_write(args.out, lambda tmp: write_hypotheses(tmp, hyps))
    print(f"{len(hyps)} hypotheses -> {args.out}")
    return 0


def cmd_volumes(args) -> int:
    cfg = build_run_config(args)
    assembly = _load_shape(args.mesh, args.manifest)
    hyps = read_hypotheses(args.hypotheses)
    check_hypotheses_against(assembly, hyps)
    vols = [hypothesis_volumes(assembly, h.members, args.resolution) for h in hyps]
    atomic_write(args.out_volumes, lambda tmp: write_mcv1(tmp, vols, args.resolution))
    atomic_write(args.out_header,
                 lambda tmp: write_score_header(tmp, assembly.label_set.size,
                                                [h.id for h in hyps]))
    wrote = [args.out_volumes, args.out_header]
    if args.out_truth:
        truth = GroundTruthContext(assembly, cfg.eval_resolution)
        lines = []
        for hyp in hyps:
            label, conf = truth.assign(hyp.members)
            lines.append(json.dumps({"hyp_id": hyp.id, "label": label,
                                     "confidence": conf},
                                    separators=(",", ":")))
        atomic_text(args.out_truth, "\n".join(lines) + "\n" if lines else "")
        wrote.append(args.out_truth)
    print(f"{len(hyps)} hypotheses -> {', '.join(wrote)}")
    return 0


def cmd_score(args) -> int:
    cfg = build_run_config(args)
    assembly = _load_shape(args.mesh, args.manifest)
    hyps = read_hypotheses(args.hypotheses)
    check_hypotheses_against(assembly, hyps)
    scorer = ScorerConfig(backend=args.backend, model_path=args.model,
                          command=args.cmd, resolution=args.resolution,
                          truth_resolution=cfg.eval_resolution)
    geometry = GroupGeometry(assembly, cfg.grouping_resolution)
    records = score(assembly, hyps, scorer, geometry)
    atomic_write(args.out, lambda tmp: write_scores(tmp, records))
    print(f"{len(records)} scores -> {args.out}")
    return 0


def cmd_label(args) -> int:
    cfg = build_run_config(args)
    assembly = _load_shape(args.mesh, args.manifest)
    hyps = read_hypotheses(args.hypotheses)
    records = read_scores(args.scores)
    by_id = {r.hypothesis_id: r for r in records}
    if len(by_id) != len(records):
        raise ValidationError("score file repeats a hypothesis id")
    missing = [h.id for h in hyps if h.id not in by_id]
    if missing:
        raise ValidationError(f"scores missing for hypotheses {missing[:5]}"
                              + ("..." if len(missing) > 5 else ""))
    ordered = [by_id[h.id] for h in hyps]

    result = label_components(assembly, hyps, ordered, cfg)
    doc = {
        "mesh": os.fspath(args.mesh),
        "num_labels": len(ordered[0].probs) - 1 if ordered else 0,
        "labels": {str(c): result.labels[c] for c in sorted(result.labels)},
        "energy": result.energy,
        "uncovered": list(result.uncovered),
    }
    if assembly.label_set is not None:
        doc["label_names"] = list(assembly.label_set.labels)
    atomic_json(args.out, doc)
    outputs = [args.out]
    if args.obj:
        atomic_labeled_obj(assembly, result.labels, args.obj)
        outputs.append(args.obj)
    print(f"energy {result.energy:.6f}, {len(result.uncovered)} uncovered -> "
          + ", ".join(outputs))
    return 0


def cmd_eval(args) -> int:
    cfg = build_run_config(args)
    with open(args.pred, "r", encoding="utf-8") as fh:
        pred_doc = json.load(fh)
    if "labels" not in pred_doc:
        raise ValidationError("prediction file has no 'labels' field")
    mesh = args.mesh or pred_doc.get("mesh")
    if not mesh:
        raise ValidationError("prediction file has no mesh path; pass --mesh")
    if not os.path.isabs(mesh) and not os.path.exists(mesh):
        candidate = os.path.join(os.path.dirname(os.path.abspath(args.pred)), mesh)
        if os.path.exists(candidate):
            mesh = candidate
    assembly = _load_shape(mesh, args.truth)
    assembly.require_labels()
    predicted = {int(k): int(v) for k, v in pred_doc["labels"].items()}
    truth = dict(assembly.labels)
    report = evalmod.labeling_iou(assembly, predicted, truth, cfg.eval_resolution)
    atomic_json(args.out, report.to_dict())
    print(f"avg_iou {report.avg_iou:.6f} -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = build_run_config(args)
    budgets = [int(b) for b in args.budgets.split(",") if b.strip()]
    assemblies = _load_dataset(args.dataset, args.split)
    rows = evalmod.sweep_budgets(assemblies, budgets, cfg)
    atomic_text(args.out, evalmod.sweep_csv(rows))
    print(f"{len(rows)} budgets over {len(assemblies)} shapes -> {args.out}")
    return 0


def cmd_correspond(args) -> int:
    a = _load_shape(args.mesh_a, args.manifest_a)
    b = _load_shape(args.mesh_b, args.manifest_b)
    cmap = corr.match_components(a, b)
    atomic_write(args.out, lambda tmp: corr.write_correspondence(tmp, cmap))
    print(f"{len(cmap.pairs)} pairs, {len(cmap.unmatched_a)}+{len(cmap.unmatched_b)} "
          f"unmatched -> {args.out}")
    return 0


def cmd_train_builtin(args) -> int:
    cfg = build_run_config(args)
    assemblies = _load_dataset(args.dataset, args.split)

    feats = []
    labels = []
    confs = []
    num_labels = None
    for assembly in assemblies:
        k = assembly.label_set.size
        if num_labels is None:
            num_labels = k
        elif num_labels != k:
            raise ValidationError("dataset mixes label sets of different sizes")
        geometry = GroupGeometry(assembly, cfg.grouping_resolution)
        truth = GroundTruthContext(assembly, cfg.eval_resolution, geometry)
        candidates = {tuple(sorted(h.members))
                      for h in select_hypotheses(build_hierarchies(geometry),
                                                 cfg.budget, cfg.seed)}
        parts = ground_truth_parts(assembly, geometry)
        for part in parts:
            candidates.add(tuple(part.members))
            for i in range(args.augment):
                for mode in ("delete", "insert"):
                    try:
                        members = augment(assembly, part.members, mode,
                                          cfg.seed + 31 * i, geometry, parts)
                    except ValidationError:
                        continue
                    if members:
                        candidates.add(tuple(sorted(members)))
        for members in sorted(candidates):
            label, conf = truth.assign(members)
            feats.append(extract_features(geometry, members).vector())
            labels.append(label)
            confs.append(conf)

    model = train_builtin(np.stack(feats), np.array(labels), np.array(confs),
                          num_labels, cfg.seed,
                          BuiltinTrainConfig(iterations=args.iterations))
    atomic_write(args.out, lambda tmp: model.save(tmp))
    acc = float((model.predict(np.stack(feats))[0].argmax(axis=1)
                 == np.array(labels)).mean())
    print(f"trained on {len(feats)} examples, train accuracy {acc:.3f} -> {args.out}")
    return 0


# ============================================================
# Parser
# ============================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partwise",
        description="Part hypothesis generation, scoring, and CRF labeling "
                    "for shape assemblies.")
    parser.add_argument("--config", default=None,
                        help=f"key=value config file (default ${CONFIG_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *names):
        if "seed" in names:
            p.add_argument("--seed", type=int, default=None)
        if "budget" in names:
            p.add_argument("--budget", type=int, default=None)
        if "grid" in names:
            p.add_argument("--grid", dest="grouping_resolution", type=int,
                           default=None, help="grouping grid resolution")
        if "evalres" in names:
            p.add_argument("--eval-resolution", dest="eval_resolution",
                           type=int, default=None)
        if "crf" in names:
            p.add_argument("--lambda", dest="lam", type=float, default=None,
                           help="consistency weight")
            p.add_argument("--eta-frac", dest="eta_fraction", type=float,
                           default=None, help="truncation fraction of clique size")
            p.add_argument("--topk", dest="top_k", default=None,
                           help="hypotheses per component in unaries, or 'all'")
            p.add_argument("--max-sweeps", dest="max_sweeps", type=int,
                           default=None)

    p = sub.add_parser("synth", help="generate synthetic labeled shapes")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--family", default=",".join(FAMILIES),
                   help="comma-separated families: " + ", ".join(FAMILIES))
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--min-pieces", type=int, default=2)
    p.add_argument("--max-pieces", type=int, default=4)
    p.add_argument("--train-fraction", type=float, default=0.3)
    add_common(p, "seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("hypothesize", help="grow and select part hypotheses")
    p.add_argument("mesh")
    p.add_argument("--out", required=True)
    add_common(p, "seed", "budget", "grid")
    p.set_defaults(func=cmd_hypothesize)

    p = sub.add_parser("volumes", help="export MCV1 volumes for external scorers")
    p.add_argument("mesh")
    p.add_argument("hypotheses")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-volumes", required=True)
    p.add_argument("--out-header", required=True)
    p.add_argument("--out-truth", default=None,
                   help="also write ground-truth JSONL for training")
    p.add_argument("--resolution", type=int, default=HYPOTHESIS_RESOLUTION)
    add_common(p, "seed", "evalres")
    p.set_defaults(func=cmd_volumes)

    p = sub.add_parser("score", help="score hypotheses")
    p.add_argument("mesh")
    p.add_argument("hypotheses")
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("oracle", "builtin", "external"),
                   default="builtin")
    p.add_argument("--manifest", default=None,
                   help="ground-truth manifest (oracle backend)")
    p.add_argument("--model", default=None, help="builtin model path")
    p.add_argument("--cmd", default=None,
                   help="external command template with {volumes} {header} {out}")
    p.add_argument("--resolution", type=int, default=HYPOTHESIS_RESOLUTION)
    add_common(p, "seed", "grid", "evalres")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("label", help="infer per-component labels via the CRF")
    p.add_argument("mesh")
    p.add_argument("hypotheses")
    p.add_argument("scores")
    p.add_argument("--out", required=True)
    p.add_argument("--obj", default=None, help="also write a colored OBJ")
    p.add_argument("--manifest", default=None)
    add_common(p, "seed", "grid", "crf")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval", help="score a labeling against ground truth")
    p.add_argument("pred", help="labeling JSON from the label command")
    p.add_argument("truth", help="ground-truth manifest JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--mesh", default=None,
                   help="mesh path override (default: recorded in pred)")
    add_common(p, "evalres")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="hypothesis-budget sweep with oracle scores")
    p.add_argument("--dataset", required=True)
    p.add_argument("--budgets", required=True, help="comma-separated budgets")
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    add_common(p, "seed", "grid", "evalres", "crf")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("correspond", help="match components across two shapes")
    p.add_argument("mesh_a")
    p.add_argument("mesh_b")
    p.add_argument("--manifest-a", required=True)
    p.add_argument("--manifest-b", required=True)
    p.add_argument("--out", required=True)
    add_common(p, "seed")
    p.set_defaults(func=cmd_correspond)

    p = sub.add_parser("train-builtin", help="fit the builtin scorer on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("all", "train", "test"), default="train")
    p.add_argument("--augment", type=int, default=2,
                   help="augmentation rounds per ground-truth part")
    p.add_argument("--iterations", type=int, default=600)
    add_common(p, "seed", "budget", "grid", "evalres")
    p.set_defaults(func=cmd_train_builtin)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ParseError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except IsADirectoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception:
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
