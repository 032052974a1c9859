"""Command-line entry point.

    hierdis generate --dataset chopsticks --variant both --depth 2 --n 10000 --out data/
    hierdis mimosa --data data/ --out mimosa/
    hierdis cofhae --data data/ --structure mimosa/ --restarts 2 --out model/
    hierdis eval --data data/ --model model/ --out scores/
    hierdis report --eval scores/ --out report/
    hierdis traverse --model model/ --input-index 0 --out sweep/

Every output directory gets a ``manifest.json`` recording the command, the
resolved config, seed, inputs, outputs, timings and package version. Exit
codes: 0 success, 2 bad usage or config, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from html import escape

import numpy as np

from . import __version__, nn
from .benchmarks import (
    ChopsticksConfig, SpaceshapesConfig, generate_chopsticks, generate_spaceshapes,
    read_dataset, write_dataset,
)
from .benchmarks.dataset import DatasetFormatError
from .cofhae import (
    CofhaeConfig, CofhaeError, HierarchicalAutoencoder, factor_targets, score_model,
    select_model, train_cofhae,
)
from .hierarchy import UNDEFINED, DimensionHierarchy, HierarchyError
from .metrics import ScoreReport, coverage, h_error, purity
from .mimosa import MimosaConfig, StructureNotFoundError, run_mimosa

log = logging.getLogger("hierdis")

MANIFEST = "manifest.json"
DISCARDED = "DISCARDED"
TRAVERSE_STEPS = 7


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict
    outputs: list
    timings: dict = field(default_factory=dict)
    version: str = __version__

    def save(self, out_dir):
        with open(os.path.join(out_dir, MANIFEST), "w") as f:
            json.dump(asdict(self), f, indent=2)

    @classmethod
    def load(cls, in_dir) -> "RunManifest":
        with open(os.path.join(in_dir, MANIFEST)) as f:
            return cls(**json.load(f))


def threads() -> int:
    try:
        return max(1, int(os.environ.get("HIERDIS_THREADS", "1")))
    except ValueError:
        raise UsageError("HIERDIS_THREADS must be an integer") from None


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _load_data(path):
    try:
        return read_dataset(path)
    except (FileNotFoundError, DatasetFormatError) as e:
        raise UsageError(f"cannot read dataset {path}: {e}") from None


def _is_binary(X) -> bool:
    return bool(np.isin(X[: min(len(X), 2000)], (0, 1)).all())


def _rows(n, max_rows, seed):
    if max_rows is None or max_rows >= n:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, max_rows, replace=False))


# -- generate ------------------------------------------------------------------


def cmd_generate(args):
    if args.dataset == "chopsticks":
        cfg = ChopsticksConfig(args.variant, args.depth, args.n, args.noise, args.seed)
        make = generate_chopsticks
    else:
        cfg = SpaceshapesConfig(args.n, args.seed)
        make = generate_spaceshapes
    t = time.perf_counter()
    ds = make(cfg)
    out = _outdir(args.out)
    write_dataset(ds, out)
    RunManifest("generate", cfg.to_dict(), args.seed, {}, sorted(os.listdir(out)) + [MANIFEST],
                {"total": time.perf_counter() - t}).save(out)
    print(f"wrote {len(ds)} rows of width {ds.X.shape[1]} to {out}")


# -- mimosa --------------------------------------------------------------------


def _mimosa_config(args, ds) -> MimosaConfig:
    base = {}
    if args.config:
        try:
            with open(args.config) as f:
                base = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from None
    if _is_binary(ds.X):
        base = {**asdict(MimosaConfig.for_images()), **base}
    if args.initial_dim is not None:
        base["initial_dim"] = args.initial_dim
    if args.seed is not None:
        base["seed"] = args.seed
    if base.get("initial_dim") is None:
        if not ds.hierarchy.paths:
            raise UsageError("--initial-dim is required")
        # one more than the largest intrinsic dimensionality
        base["initial_dim"] = max(p.n_continuous for p in ds.hierarchy.paths) + 1
    return MimosaConfig.from_dict(base)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def structure_scores(path_ids, learned_h, ds) -> dict:
    return {"purity": purity(path_ids, ds.path_ids),
            "coverage": coverage(path_ids >= 0),
            "h_error": h_error(learned_h, ds.hierarchy)}


def cmd_mimosa(args):
    ds = _load_data(args.data)
    cfg = _mimosa_config(args, ds)
    t = time.perf_counter()
    try:
        res = run_mimosa(ds.X, cfg)
    except StructureNotFoundError as e:
        raise RuntimeFailure(f"no structure found: {e}") from None
    total = time.perf_counter() - t
    out = _outdir(args.out)
    res.hierarchy.save(os.path.join(out, "hierarchy.json"))
    ids = res.path_ids
    _write_csv(os.path.join(out, "assignments.csv"), ["index", "path"],
               ((i, DISCARDED if p < 0 else int(p)) for i, p in enumerate(ids)))
    _write_csv(os.path.join(out, "components.csv"), ["id", "size", "d", "parent"],
               ((i, c.size, c.d, res.parent[i]) for i, c in enumerate(res.components)))
    res.encoder.save(os.path.join(out, "ae_encoder.bin"))
    res.decoder.save(os.path.join(out, "ae_decoder.bin"))
    scores = structure_scores(ids, res.hierarchy, ds)
    with open(os.path.join(out, "scores.json"), "w") as f:
        json.dump(scores, f, indent=2)
    RunManifest("mimosa", cfg.to_dict(), cfg.seed, {"data": os.path.abspath(args.data)},
                sorted(os.listdir(out)) + [MANIFEST], {"total": total, **res.timings}).save(out)
    print(f"{len(res.hierarchy.paths)} paths from {len(res.components)} components")
    print(f"purity={scores['purity']:.4f} coverage={scores['coverage']:.4f} h_error={scores['h_error']}")


def read_structure(path, n):
    """Hierarchy and per-point assignments from a MIMOSA bundle or a dataset dir."""
    if os.path.exists(os.path.join(path, "assignments.csv")):
        h = DimensionHierarchy.load(os.path.join(path, "hierarchy.json"))
        rows = {p: h.assignment_for_path(path_) for p, path_ in enumerate(h.paths)}
        A = np.full((n, len(h.categorical_names)), UNDEFINED, dtype=np.int64)
        with open(os.path.join(path, "assignments.csv"), newline="") as f:
            r = csv.reader(f)
            next(r)
            for idx, p in r:
                if p != DISCARDED:
                    A[int(idx)] = rows[int(p)]
        return h, A, False
    ds = _load_data(path)
    if len(ds) != n:
        raise UsageError("structure dataset and training data differ in size")
    return ds.hierarchy, ds.A, True


# -- cofhae --------------------------------------------------------------------


def _cofhae_config(args, X) -> CofhaeConfig:
    doc = {}
    if args.config:
        try:
            with open(args.config) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from None
    for flag, key in (("tau", "tau"), ("lambda1", "lambda1"), ("lambda2", "lambda2"),
                      ("ablation", "ablation"), ("epochs", "epochs"), ("seed", "seed")):
        v = getattr(args, flag)
        if v is not None:
            doc[key] = v
    if "loss" not in doc and _is_binary(X):
        doc["loss"] = "bernoulli"
    try:
        return CofhaeConfig.from_dict(doc)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad cofhae config: {e}") from None


def cmd_cofhae(args):
    ds = _load_data(args.data)
    base = _cofhae_config(args, ds.X)
    h, A, truth = read_structure(args.structure, len(ds))
    V = None
    if base.ablation == "haz":
        if not truth:
            raise UsageError("the haz ablation needs a ground-truth structure (pass the dataset dir)")
        V = factor_targets(ds.V, ds.hierarchy, h)
    configs = base.grid() if args.grid else [base]
    jobs = [(i, r, replace(c, seed=base.seed + r)) for r in range(args.restarts)
            for i, c in enumerate(configs)]

    def run(job):
        i, r, cfg = job
        t = time.perf_counter()
        try:
            m = train_cofhae(ds.X, h, A, cfg, V=V)
        except nn.TrainingDivergedError as e:
            log.warning("config %d restart %d diverged: %s", i, r, e)
            return None, time.perf_counter() - t
        return m, time.perf_counter() - t

    t0 = time.perf_counter()
    with ThreadPoolExecutor(threads()) as ex:
        results = list(ex.map(run, jobs))
    ok = [k for k, (m, _) in enumerate(results) if m is not None]
    if not ok:
        raise RuntimeFailure("every configuration diverged")
    chosen = ok[select_model([results[k][0].metrics for k in ok])]
    out = _outdir(args.out)
    model = results[chosen][0]
    model.save(out, extra={"chosen": {k: model.config[k] for k in ("tau", "lambda1", "lambda2", "seed")}})
    board = []
    for k, ((i, r, cfg), (m, secs)) in enumerate(zip(jobs, results)):
        met = m.metrics if m else {}
        board.append([k, i, r, cfg.tau, cfg.lambda1, cfg.lambda2, cfg.seed,
                      met.get("recon", "diverged"), met.get("assign", "diverged"),
                      f"{secs:.2f}", int(k == chosen)])
    _write_csv(os.path.join(out, "scoreboard.csv"),
               ["run", "config", "restart", "tau", "lambda1", "lambda2", "seed", "recon", "assign",
                "seconds", "chosen"], board)
    cfg_doc = {**base.to_dict(), "grid": bool(args.grid), "restarts": args.restarts}
    RunManifest("cofhae", cfg_doc, base.seed,
                {"data": os.path.abspath(args.data), "structure": os.path.abspath(args.structure)},
                sorted(os.listdir(out)) + [MANIFEST], {"total": time.perf_counter() - t0}).save(out)
    print(f"trained {len(jobs)} models, {len(ok)} converged; chose run {chosen} "
          f"(tau={model.tau:.3g} recon={model.metrics['recon']:.4f} assign={model.metrics['assign']:.4f})")


# -- eval ----------------------------------------------------------------------


def cmd_eval(args):
    if (args.model is None) == (args.structure is None):
        raise UsageError("pass exactly one of --model and --structure")
    ds = _load_data(args.data)
    rows = _rows(len(ds), args.max_rows, args.seed)
    t = time.perf_counter()
    if args.model:
        model = _load_model(args.model)
        s = score_model(model, ds.X[rows], ds.V[rows], ds.active[rows], seed=args.seed,
                        workers=threads())
        per_dim = [{"factor": f, "r4": a, "r4c": b, "flags": s["flags"].get(j, [])}
                   for j, (f, a, b) in enumerate(zip(ds.hierarchy.continuous_dims, s["r4_per_dim"],
                                                     s["r4c_per_dim"]))]
        rep = ScoreReport(ds.hierarchy.continuous_dims, model.hierarchy.continuous_dims, s["r4"], s["r4c"],
                          per_dim, np.asarray(s["pairwise"]).tolist(),
                          h_error=h_error(model.hierarchy, ds.hierarchy))
        rep.extra = {"kind": "model"}
        inputs = {"data": os.path.abspath(args.data), "model": os.path.abspath(args.model)}
    else:
        h, A, _ = read_structure(args.structure, len(ds))
        ids = h.path_ids(A)[rows]
        sc = structure_scores(ids, h, ds.subset(rows))
        rep = ScoreReport(ds.hierarchy.continuous_dims, h.continuous_dims, **sc)
        rep.extra = {"kind": "structure", "paths": len(h.paths)}
        inputs = {"data": os.path.abspath(args.data), "structure": os.path.abspath(args.structure)}
    rep.extra["dataset"] = ds.config
    out = _outdir(args.out)
    rep.save_json(os.path.join(out, "scores.json"))
    rep.save_csv(os.path.join(out, "scores.csv"))
    RunManifest("eval", {"max_rows": args.max_rows}, args.seed, inputs,
                sorted(os.listdir(out)) + [MANIFEST], {"total": time.perf_counter() - t}).save(out)
    print(rep.summary())


def _load_model(path):
    try:
        return HierarchicalAutoencoder.load(path)
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot load model {path}: {e}") from None


# -- report --------------------------------------------------------------------

COLUMNS = ("purity", "coverage", "h_error", "r4", "r4c")


def _run_name(d, rep):
    cfg = rep.extra.get("dataset", {})
    parts = [cfg.get("dataset", "")]
    if cfg.get("dataset") == "chopsticks":
        parts.append(f"{cfg.get('variant')}-d{cfg.get('depth')}")
    return "/".join(p for p in parts if p) + f" ({os.path.basename(os.path.normpath(d))})"


def bar_chart_svg(labels, series: dict, title: str, width=640, bar_h=14) -> str:
    """Grouped horizontal bars for scores in [0, 1]."""
    names = list(series)
    left, top, gap = 220, 30, 8
    group_h = bar_h * len(names) + gap
    height = top + group_h * len(labels) + 20 + 16 * len(names)
    span = width - left - 20
    colors = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for i, lab in enumerate(labels):
        y0 = top + i * group_h
        out.append(f'<text x="{left - 6}" y="{y0 + group_h / 2}" text-anchor="end">{escape(lab)}</text>')
        for j, name in enumerate(names):
            v = series[name][i]
            if v is None:
                continue
            w = max(0.0, min(1.0, v)) * span
            out.append(f'<rect x="{left}" y="{y0 + j * bar_h}" width="{w:.1f}" height="{bar_h - 2}" '
                       f'fill="{colors[j % len(colors)]}"/>')
            out.append(f'<text x="{left + w + 3:.1f}" y="{y0 + j * bar_h + bar_h - 4}">{v:.3f}</text>')
    y = top + group_h * len(labels) + 10
    for j, name in enumerate(names):
        out.append(f'<rect x="{left}" y="{y + 16 * j}" width="10" height="10" fill="{colors[j % len(colors)]}"/>')
        out.append(f'<text x="{left + 14}" y="{y + 16 * j + 9}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def cmd_report(args):
    reps = []
    for d in args.eval:
        p = os.path.join(d, "scores.json")
        if not os.path.exists(p):
            raise UsageError(f"no scores.json in {d}")
        reps.append((d, ScoreReport.load_json(p)))
    out = _outdir(args.out)
    names = [_run_name(d, r) for d, r in reps]
    _write_csv(os.path.join(out, "summary.csv"), ["run", *COLUMNS],
               ([n, *("" if getattr(r, c) is None else getattr(r, c) for c in COLUMNS)]
                for n, (_, r) in zip(names, reps)))
    written = ["summary.csv"]
    struct = {c: [getattr(r, c) for _, r in reps] for c in ("purity", "coverage")}
    if any(v is not None for vals in struct.values() for v in vals):
        with open(os.path.join(out, "structure.svg"), "w") as f:
            f.write(bar_chart_svg(names, struct, "structure recovery"))
        written.append("structure.svg")
    dis = {c: [getattr(r, c) for _, r in reps] for c in ("r4", "r4c")}
    if any(v is not None for vals in dis.values() for v in vals):
        with open(os.path.join(out, "disentanglement.svg"), "w") as f:
            f.write(bar_chart_svg(names, dis, "disentanglement"))
        written.append("disentanglement.svg")
    RunManifest("report", {}, None, {"eval": [os.path.abspath(d) for d in args.eval]},
                written + [MANIFEST]).save(out)
    for n, (_, r) in zip(names, reps):
        print(f"{n}: {r.summary()}")


# -- traverse ------------------------------------------------------------------


def sweep_values(z_col, active_col, steps=TRAVERSE_STEPS):
    vals = z_col[active_col]
    if len(vals) == 0:
        return None
    lo, hi = np.percentile(vals, [1, 99])
    return np.linspace(lo, hi, steps)


def write_pgm(path, img):
    img = np.clip(np.round(np.asarray(img) * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def traversals(model: HierarchicalAutoencoder, X_train, k):
    """Decoded sweeps of each dim active at point ``k``: {dim name: (values, outputs)}."""
    lay = model.layout
    zp, _, _ = model.encode(X_train)
    act = model.hierarchy.hard_masks(lay.hard_assignments(zp))[:, lay.cont].astype(bool)
    out = {}
    for j, slot in enumerate(lay.cont):
        if not act[k, j]:
            continue
        vals = sweep_values(zp[:, slot], act[:, j])
        z = np.repeat(zp[k:k + 1], len(vals), axis=0)
        z[:, slot] = vals
        masked, _ = lay.forward(z, model.tau)
        out[lay.slots[slot].name] = (vals, model.decode_slots(masked))
    return out


def cmd_traverse(args):
    model = _load_model(args.model)
    data = args.data
    if data is None:
        try:
            data = RunManifest.load(args.model).inputs["data"]
        except (OSError, KeyError):
            raise UsageError("pass --data; the model manifest names no dataset") from None
    ds = _load_data(data)
    if not 0 <= args.input_index < len(ds):
        raise UsageError(f"--input-index must be in [0, {len(ds)})")
    sweeps = traversals(model, ds.X, args.input_index)
    out = _outdir(args.out)
    images = model.config.get("loss") == "bernoulli"
    written = []
    if images:
        side = int(round(np.sqrt(ds.X.shape[1])))
        for name, (_, dec) in sweeps.items():
            strip = np.concatenate(list(nn.sigmoid(dec).reshape(-1, side, side)), axis=1)
            fn = f"sweep_{name}.pgm"
            write_pgm(os.path.join(out, fn), strip)
            written.append(fn)
    else:
        rows = [[name, s, float(v), *map(float, dec[s])]
                for name, (vals, dec) in sweeps.items() for s, v in enumerate(vals)]
        _write_csv(os.path.join(out, "sweeps.csv"),
                   ["dim", "step", "value", *(f"x{i}" for i in range(ds.X.shape[1]))], rows)
        written.append("sweeps.csv")
    RunManifest("traverse", {"steps": TRAVERSE_STEPS, "input_index": args.input_index}, None,
                {"model": os.path.abspath(args.model), "data": os.path.abspath(data)},
                written + [MANIFEST]).save(out)
    print(f"swept {len(sweeps)} active dims: {', '.join(sweeps)}")


# -- entry ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hierdis", description="Hierarchical disentanglement toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a benchmark dataset")
    g.add_argument("--dataset", choices=("chopsticks", "spaceshapes"), required=True)
    g.add_argument("--variant", default="both")
    g.add_argument("--depth", type=int, default=2)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    m = sub.add_parser("mimosa", help="discover a dimension hierarchy")
    m.add_argument("--data", required=True)
    m.add_argument("--config")
    m.add_argument("--initial-dim", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--out", required=True)
    m.set_defaults(fn=cmd_mimosa)

    c = sub.add_parser("cofhae", help="train a hierarchical autoencoder")
    c.add_argument("--data", required=True)
    c.add_argument("--structure", required=True, help="MIMOSA output or a dataset dir for ground truth")
    c.add_argument("--config")
    c.add_argument("--grid", action="store_true")
    c.add_argument("--tau", type=float)
    c.add_argument("--lambda1", type=float)
    c.add_argument("--lambda2", type=float)
    c.add_argument("--ablation")
    c.add_argument("--epochs", type=int)
    c.add_argument("--restarts", type=int, default=1)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_cofhae)

    e = sub.add_parser("eval", help="score a model or a discovered structure")
    e.add_argument("--data", required=True)
    e.add_argument("--model")
    e.add_argument("--structure")
    e.add_argument("--max-rows", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("report", help="charts and tables over eval runs")
    r.add_argument("--eval", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)

    t = sub.add_parser("traverse", help="decode sweeps of each active latent dim")
    t.add_argument("--model", required=True)
    t.add_argument("--input-index", type=int, required=True)
    t.add_argument("--data")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_traverse)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"hierdis: error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except UsageError as e:
        print(f"hierdis: error: {e}", file=sys.stderr)
        return 2
    except (ValueError, HierarchyError, FileNotFoundError) as e:
        print(f"hierdis: error: {e}", file=sys.stderr)
        return 2
    except (RuntimeFailure, CofhaeError, nn.TrainingDivergedError, StructureNotFoundError) as e:
        print(f"hierdis: failed: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
