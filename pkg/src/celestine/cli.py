"""``celestine`` command line: analyze, preprocess, split, synth, train, eval, bench.

Exit codes: 0 success, 1 runtime or per-item failure, 2 usage/config error.
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
from pathlib import Path

import numpy as np

log = logging.getLogger("celestine")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def default_threads() -> int:
    env = os.environ.get("CELESTINE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"CELESTINE_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError("CELESTINE_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=str) + "\n")
    return path


def _figure_path(report: Path, suffix: str) -> Path:
    return report.with_name(f"{report.stem}_{suffix}.png")


def _load_spec(args):
    from .netspec import hr_celestialnet_spec, load_spec, tiny_spec

    if args.spec in (None, "hr-celestialnet"):
        return hr_celestialnet_spec()
    if args.spec == "tiny":
        return tiny_spec()
    return load_spec(args.spec)


# ---------------------------------------------------------------- analyze


def cmd_analyze(args) -> int:
    from .analysis import compare_table2, render_resources, render_table2, resource_summary

    t0 = time.perf_counter()
    spec = _load_spec(args)
    rows = compare_table2(spec)
    resources = resource_summary(spec, args.batch)
    print(f"network: {spec.name}  input {'x'.join(map(str, spec.input_shape))}")
    print(render_table2(rows))
    print()
    print(render_resources(resources))
    mismatches = [r["row"] for r in rows if r["status"] == "mismatch"]
    payload = {"spec": spec.name, "table2": rows, "resources": resources,
               "mismatched_rows": mismatches,
               "errata_rows": [r["row"] for r in rows if r["status"] == "erratum"],
               "elapsed_s": time.perf_counter() - t0}
    if args.report:
        from .plotting import plot_architecture

        report = Path(args.report)
        _write_json(report, payload)
        with open(report.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "type", "shape", "ref_shape", "params", "ref_params", "status"])
            for r in rows:
                w.writerow([r["row"], r["type"], "x".join(map(str, r["shape"])),
                            "x".join(map(str, r["ref_shape"] or [])), r["params"],
                            r["ref_params"] if r["ref_params"] is not None else "", r["status"]])
        plot_architecture(rows, _figure_path(report, "layers"))
    return EXIT_OK


# ---------------------------------------------------------------- preprocess


def cmd_preprocess(args) -> int:
    from .dataset import LABELS, fetch_manifest_files, load_manifest, local_name
    from .pipeline import crop_frame
    from .plotting import plot_image
    from .preprocess import RESIZE_COLS, RESIZE_ROWS, resize_bilinear
    from .store import SampleStore

    manifest = load_manifest(args.manifest)
    out = Path(args.out_dir)
    cache = Path(args.cache) if args.cache else out / "raw"
    fetch = fetch_manifest_files(manifest, cache, workers=args.threads)
    failed_paths = {p for p, _ in fetch.failed}
    store = SampleStore(out / "lcid")
    resized = SampleStore(out / "lcid_resize") if args.resize else None
    failures = [{"path": p, "error": e} for p, e in fetch.failed]

    def work(item):
        i, entry = item
        if entry.path in failed_paths:
            return i, entry, None, "fetch failed"
        try:
            buf = (cache / local_name(entry)).read_bytes()
            return i, entry, crop_frame(buf, entry.hdu_index, entry.instrument), None
        except Exception as exc:  # recorded per file
            return i, entry, None, str(exc)

    counts = {"galaxy": 0, "nsc": 0}
    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        for i, entry, ccd, err in pool.map(work, enumerate(manifest)):
            if err is not None:
                log.error("%s [HDU %d]: %s", entry.path, entry.hdu_index, err)
                failures.append({"path": entry.path, "hdu_index": entry.hdu_index, "error": err})
                continue
            sid = f"{i:05d}_{entry.body_id}_{entry.obsid}_{entry.hdu_index}"
            meta = dict(body_id=entry.body_id, category=entry.category,
                        label=LABELS[entry.category], obsid=entry.obsid, filter=entry.filter,
                        hdu_index=entry.hdu_index)
            store.add(ccd, sid, **meta)
            if resized is not None:
                resized.add(resize_bilinear(ccd, RESIZE_ROWS, RESIZE_COLS), sid, **meta)
            counts[entry.category] += 1
    store.write_index()
    if resized is not None:
        resized.write_index()
    summary = {"samples": {**counts, "total": sum(counts.values())},
               "sample_shape": [2048, 4096],
               "resize_shape": [RESIZE_ROWS, RESIZE_COLS] if args.resize else None,
               "fetch": fetch.as_dict(), "failures": failures,
               "index": str(store.index_path)}
    print(f"preprocessed {summary['samples']['total']} samples "
          f"(galaxy {counts['galaxy']}, nsc {counts['nsc']}); {len(failures)} failures")
    if args.resize:
        print(f"resized copies ({RESIZE_ROWS}x{RESIZE_COLS}) in {resized.root}")
    report = Path(args.report) if args.report else out / "preprocess_report.json"
    _write_json(report, summary)
    if store.entries:
        plot_image(store.load(store.entries[0]), _figure_path(report, "first_sample"),
                   store.entries[0].sample_id)
    return EXIT_FAILURE if failures else EXIT_OK


# ---------------------------------------------------------------- split


def cmd_split(args) -> int:
    from .dataset import format_split_summary, load_manifest, save_split, split_by_body

    manifest = load_manifest(args.manifest)
    result = split_by_body(manifest, args.ratio, args.seed)
    summary = save_split(result, args.out_dir)
    print(format_split_summary(summary))
    if args.report:
        _write_json(Path(args.report), summary)
    return EXIT_OK


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    from .dataset import CATEGORIES, synthetic_set, write_manifest
    from .pipeline import manifest_entries_for, write_synth_frame
    from .plotting import plot_image
    from .store import SampleStore

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.size:
        h, w = args.size
        images, labels, bodies = synthetic_set(args.per_class, h, w, seed=args.seed)
        store = SampleStore(out)
        for i, (img, lab, body) in enumerate(zip(images, labels, bodies)):
            store.add(img, f"{i:05d}_{body}", body, CATEGORIES[lab], int(lab), obsid="synthetic")
        index = store.write_index()
        print(f"wrote {len(images)} samples of {h}x{w} to {index}")
        summary = {"mode": "samples", "index": str(index), "count": len(images), "shape": [h, w]}
        preview = images[0]
    else:
        rng = np.random.default_rng(args.seed)
        entries = []
        jobs = []
        for c, category in enumerate(CATEGORIES):
            for b in range(args.bodies):
                body = f"SYN-{category.upper()}-{b:03d}"
                for f in range(args.frames_per_body):
                    instrument = ("ACS_WFC", "WFC3_UVIS")[(b + f) % 2]
                    obsid = f"syn{c}{b:03d}{f:02d}q"
                    path = out / f"{obsid}_raw.fits"
                    jobs.append((path, instrument, category, int(rng.integers(2**31))))
                    entries += manifest_entries_for(str(path), body, category, instrument, obsid)
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            list(pool.map(lambda j: write_synth_frame(*j), jobs))
        manifest = out / "manifest.csv"
        write_manifest(entries, manifest)
        print(f"wrote {len(jobs)} raw frames ({len(entries)} science extensions) and {manifest}")
        summary = {"mode": "raw", "manifest": str(manifest), "frames": len(jobs),
                   "entries": len(entries)}
        preview = None
    report = Path(args.report) if args.report else out / "synth_report.json"
    _write_json(report, summary)
    if preview is not None:
        plot_image(preview, _figure_path(report, "preview"), "synthetic sample")
    return EXIT_OK


# ---------------------------------------------------------------- train / eval


def _load_data(spec, path):
    from .pipeline import network_input
    from .store import SampleStore

    store = SampleStore.open(path)
    images, labels = store.arrays()
    if len(images) == 0:
        raise UsageError(f"no samples in {path}")
    if images.shape[1:] != tuple(spec.input_shape[1:]):
        raise UsageError(f"samples are {images.shape[1]}x{images.shape[2]} but the network "
                         f"expects {spec.input_shape[1]}x{spec.input_shape[2]}")
    x = np.concatenate([network_input(img, spec.input_shape) for img in images])
    return x, labels


def cmd_train(args) -> int:
    from .netspec import init_params
    from .plotting import plot_training
    from .runtime import TrainConfig, save_checkpoint, train

    spec = _load_spec(args)
    config = TrainConfig(batch_size=args.batch_size, lr=args.lr, epochs=args.epochs,
                         seed=args.seed, shuffle=not args.no_shuffle)
    x, y = _load_data(spec, args.data)
    states = init_params(spec, seed=args.seed)
    out_log = Path(args.log) if args.log else Path(args.checkpoint).with_suffix(".log")
    out_log.parent.mkdir(parents=True, exist_ok=True)

    def progress(e):
        print(f"epoch {e.epoch:3d}  loss {e.loss:.6f}  train_acc {e.train_acc:.4f}", flush=True)

    result = train(spec, states, x, y, config, on_epoch=progress)
    out_log.write_text(result.to_text())
    save_checkpoint(states, spec, args.checkpoint)
    payload = {"config": vars(config), "epochs": [vars(e) for e in result.epochs],
               "checkpoint": str(args.checkpoint), "log": str(out_log)}
    report = Path(args.report) if args.report else out_log.with_suffix(".json")
    _write_json(report, payload)
    plot_training(result.epochs, _figure_path(report, "curve"))
    return EXIT_OK


def _read_predictions(path):
    preds, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"label", "prediction"} <= set(reader.fieldnames):
            raise UsageError("predictions file needs 'label' and 'prediction' columns")
        for row in reader:
            labels.append(int(row["label"]))
            preds.append(int(row["prediction"]))
    return np.array(preds), np.array(labels)


def cmd_eval(args) -> int:
    from .metrics import confusion_matrix, metrics_report
    from .plotting import plot_confusion
    from .reference import REFERENCE_ONLY_NOTE, TABLE4_HR
    from .runtime import evaluate, load_checkpoint

    if args.predictions:
        preds, labels = _read_predictions(args.predictions)
        cm = confusion_matrix(preds, labels)
    else:
        if not (args.checkpoint and args.data):
            raise UsageError("eval needs --predictions, or --checkpoint with --data")
        spec = _load_spec(args)
        states = load_checkpoint(args.checkpoint, spec)
        x, labels = _load_data(spec, args.data)
        result = evaluate(states, spec, x, labels)
        preds = result.predictions
        cm = result.confusion
    rep = metrics_report(cm)
    d = rep.as_dict()

    def pct(v):
        return "undefined" if v is None else f"{100 * v:.2f}%"

    print(f"samples {cm.total}  TP {cm.tp}  FP {cm.fp}  FN {cm.fn}  TN {cm.tn}  (galaxy positive)")
    print(f"accuracy {pct(d['accuracy'])}  F1(galaxy) {pct(d['f1_galaxy'])}  F1(NSC) {pct(d['f1_nsc'])}")
    if d["flags"]:
        print("flags: " + ", ".join(d["flags"]))
    print(f"published HR-CelestialNet on LCID: accuracy {TABLE4_HR['accuracy']:.2%}, "
          f"F1(galaxy) {TABLE4_HR['f1_galaxy']:.2%}, F1(NSC) {TABLE4_HR['f1_nsc']:.2%}")
    print(f"  ({REFERENCE_ONLY_NOTE})")
    payload = {**d, "samples": cm.total,
               "reference": {"label": "reference-only", "note": REFERENCE_ONLY_NOTE,
                             **{k: TABLE4_HR[k] for k in ("accuracy", "f1_galaxy", "f1_nsc")}}}
    if args.report:
        report = Path(args.report)
        _write_json(report, payload)
        with open(report.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "label", "prediction"])
            for i, (lab, p) in enumerate(zip(labels, preds)):
                w.writerow([i, int(lab), int(p)])
        plot_confusion(cm, _figure_path(report, "confusion"),
                       f"accuracy {pct(d['accuracy'])}")
    return EXIT_OK


# ---------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    from .dataset import load_manifest
    from .netspec import init_params
    from .pipeline import crop_frame, network_input, synth_raw_file
    from .fits_io import write_fits
    from .plotting import plot_timing
    from .reference import TABLE4_HR
    from .runtime import bench_timing, forward_pass, load_checkpoint

    spec = _load_spec(args)
    states = load_checkpoint(args.checkpoint, spec) if args.checkpoint else init_params(spec, args.seed)
    if args.manifest:
        entries = load_manifest(args.manifest)[: args.samples]
        samples = [(Path(e.path).read_bytes(), e.hdu_index, e.instrument.value) for e in entries]
    else:
        samples = []
        for i in range(args.samples):
            instrument = ("ACS_WFC", "WFC3_UVIS")[i % 2]
            fits, _ = synth_raw_file(instrument, ("galaxy", "nsc")[i % 2], args.seed + i)
            samples.append((write_fits(fits), 4, instrument))
    if not samples:
        raise UsageError("no samples to benchmark")

    def prep(sample):
        buf, hdu, instrument = sample
        return network_input(crop_frame(buf, hdu, instrument), spec.input_shape)

    def classify(x):
        return forward_pass(states, spec, x)

    report = bench_timing(prep, classify, samples, repetitions=args.repetitions,
                          warmup=args.warmup)
    print(report.render())
    if args.report:
        path = Path(args.report)
        _write_json(path, {"spec": spec.name, **report.as_dict()})
        plot_timing(report, _figure_path(path, "timing"), TABLE4_HR)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker/BLAS threads (default: $CELESTINE_THREADS or CPU count)")
    common.add_argument("--report", default=None, help="path of the JSON report to write")
    common.add_argument("--spec", default=None,
                        help="network spec file, or 'hr-celestialnet' (default) / 'tiny'")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="celestine", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="shape, parameter and memory tables")
    a.add_argument("--batch", type=int, default=4)
    a.set_defaults(func=cmd_analyze)

    pp = sub.add_parser("preprocess", parents=[common], help="crop raw frames from a manifest")
    pp.add_argument("manifest")
    pp.add_argument("out_dir")
    pp.add_argument("--resize", action="store_true", help="also emit 224x448 copies")
    pp.add_argument("--cache", default=None, help="directory for fetched raw files")
    pp.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("split", parents=[common], help="body-level train/test split")
    s.add_argument("manifest")
    s.add_argument("out_dir")
    s.add_argument("--ratio", type=float, default=0.8)
    s.set_defaults(func=cmd_split)

    sy = sub.add_parser("synth", parents=[common], help="generate synthetic frames or samples")
    sy.add_argument("out_dir")
    sy.add_argument("--size", type=int, nargs=2, metavar=("H", "W"),
                    help="write a sample store at HxW instead of raw FITS frames")
    sy.add_argument("--per-class", type=int, default=4, help="samples per class (with --size)")
    sy.add_argument("--bodies", type=int, default=2, help="bodies per class (raw mode)")
    sy.add_argument("--frames-per-body", type=int, default=1)
    sy.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", parents=[common], help="train a network on a sample store")
    t.add_argument("--data", required=True, help="sample store directory or index.csv")
    t.add_argument("--checkpoint", required=True, help="output checkpoint path")
    t.add_argument("--log", default=None, help="training log path (epoch,loss,train_acc)")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--no-shuffle", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="confusion matrix and metrics")
    e.add_argument("--predictions", default=None, help="CSV with label,prediction columns")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--data", default=None)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="per-sample timing")
    b.add_argument("--checkpoint", default=None)
    b.add_argument("--manifest", default=None, help="raw frames to time (default: synthetic)")
    b.add_argument("--samples", type=int, default=2)
    b.add_argument("--repetitions", type=int, default=1)
    b.add_argument("--warmup", type=int, default=1)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    from threadpoolctl import threadpool_limits

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .dataset import ManifestError
    from .fits_io import FitsError
    from .netspec import SpecError
    from .runtime import CheckpointError

    try:
        if args.threads is None:
            args.threads = default_threads()
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, SpecError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, FitsError, CheckpointError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
