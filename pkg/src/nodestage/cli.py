"""Command-line entry point: one subcommand per pipeline stage plus ``pipeline``.

Every stage writes its artifacts into ``--out-dir`` together with a
``manifest.csv`` (``kind,key,path`` rows, paths relative to the directory)
and a human-readable ``report.txt``. Usage errors exit with 2, stage
failures with 1 and the originating error text on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import FormatError, InputError, PipelineError
from .evaluate import ConfusionMatrix, score_patients
from .heatmap_post import extract_lesions, overlay
from .labels import PNStage, SlideLabel
from .roi import tissue_mask
from .sampler import (PatchSample, SlideSource, downsample_mask, downsample_pixels, extract,
                      plan_from_windows, slide_windows)
from .segnet.infer import infer_slide
from .segnet.train import train as train_net
from .segnet.unet import load_checkpoint, save_checkpoint
from .slide_classify import (SLIDE_CLASS_NAMES, confusion, extract_features, load_model, predict,
                             save_model, train_forest)
from .slide_store import (BinaryMask, ManifestRow, ProbabilityMap, SlideRaster, read_heatmap,
                          read_manifest, read_mask, read_raster, write_heatmap, write_manifest,
                          write_mask, write_raster)
from .staging import stage_patient
from .synth import generate_patient

log = logging.getLogger("nodestage")


# --- small file helpers -----------------------------------------------------

class StageOutput:
    """Collects manifest rows and report lines for one stage directory."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.rows: list[tuple[str, str, str]] = []
        self.lines: list[str] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, kind: str, key: str, name: str) -> Path:
        self.rows.append((kind, key, name))
        return self.path(name)

    def say(self, line: str = "") -> None:
        self.lines.append(line)

    def close(self) -> None:
        with open(self.dir / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "key", "path"])
            w.writerows(self.rows)
        (self.dir / "report.txt").write_text("\n".join(self.lines) + "\n", encoding="utf-8")


def read_stage_manifest(stage_dir, kind: str) -> dict[str, Path]:
    stage_dir = Path(stage_dir)
    path = stage_dir / "manifest.csv"
    if not path.exists():
        raise InputError(f"{stage_dir} has no manifest.csv")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {r["key"]: stage_dir / r["path"] for r in rows if r["kind"] == kind}


def _read_csv(path, fields) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(fields) - set(reader.fieldnames or [])
        if missing:
            raise FormatError(f"{path} lacks columns {sorted(missing)}")
        return list(reader)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def split_slide_id(slide_id: str) -> tuple[str, int]:
    patient, _, index = slide_id.rpartition("_node")
    if not patient or not index.isdigit():
        raise InputError(f"slide id {slide_id!r} is not '<patient>_node<index>'")
    return patient, int(index)


def read_stages(path) -> dict[str, PNStage]:
    out = {}
    for rec in _read_csv(path, ("patient_id", "stage")):
        try:
            out[rec["patient_id"]] = PNStage.parse(rec["stage"])
        except ValueError as exc:
            raise InputError(str(exc)) from None
    return out


def read_slide_labels(path) -> dict[str, SlideLabel]:
    """Slide labels keyed by slide id, from any CSV with a ``label`` column and
    either ``slide_id`` or ``patient_id`` + ``slide_index``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or [])
        rows = list(reader)
    if "label" not in fields:
        raise FormatError(f"{path} has no label column")
    out = {}
    for rec in rows:
        if "slide_id" in fields:
            sid = rec["slide_id"]
        elif {"patient_id", "slide_index"} <= fields:
            sid = f"{rec['patient_id']}_node{int(rec['slide_index'])}"
        else:
            raise FormatError(f"{path} needs slide_id or patient_id,slide_index columns")
        try:
            out[sid] = SlideLabel.parse(rec["label"])
        except ValueError as exc:
            raise InputError(str(exc)) from None
    return out


def _pmap(threads: int, fn, items):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# --- stages -----------------------------------------------------------------

def _patient_seed(seed: int, split: int, index: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, split, index]).generate_state(1, np.uint64)[0])


def run_gen_data(cfg, out_dir, n_train: int, n_test: int, threads: int = 1) -> StageOutput:
    """Synthetic train/test patients: rasters, tumor masks, manifests and truth."""
    out = StageOutput(out_dir)
    out.say(f"synthetic patients: {n_train} train, {n_test} test, seed {cfg.seed}")
    for split, (name, count) in enumerate((("train", n_train), ("test", n_test))):
        if count == 0:
            continue

        def make(i, split=split, name=name):
            pid = f"{name}{i:03d}"
            p = generate_patient(_patient_seed(cfg.seed, split, i), cfg.synth, pid)
            rows = []
            for k, ((raster, tumor), label) in enumerate(zip(p.slides, p.true_slide_labels)):
                sid = f"{pid}_node{k}"
                write_raster(raster, out.path(f"{name}/{sid}.ppm"))
                write_mask(tumor, out.path(f"{name}/{sid}_tumor.pgm"))
                rows.append(ManifestRow(pid, k, f"{name}/{sid}.ppm", f"{name}/{sid}_tumor.pgm", label.text))
            return pid, p.true_stage, rows

        results = _pmap(threads, make, range(count))
        rows = [r for _, _, rs in results for r in rs]
        write_manifest(rows, out.add("patients", name, f"{name}_manifest.csv"))
        _write_csv(out.add("truth", name, f"{name}_stages.csv"), ["patient_id", "stage"],
                   [(pid, st.text) for pid, st, _ in results])
        _write_csv(out.add("slide_labels", name, f"{name}_slide_labels.csv"),
                   ["patient_id", "slide_index", "label"], [(r.patient_id, r.slide_index, r.label) for r in rows])
        stages = [st.text for _, st, _ in results]
        labels = [r.label for r in rows]
        out.say(f"{name}: stages " + ", ".join(f"{s}={stages.count(s)}" for s in dict.fromkeys(sorted(stages, key=PNStage.parse))))
        out.say(f"{name}: slides " + ", ".join(f"{n}={labels.count(n)}" for n in SLIDE_CLASS_NAMES))
    out.close()
    return out


def run_roi(cfg, manifest, out_dir, threads: int = 1) -> StageOutput:
    out = StageOutput(out_dir)
    rows = read_manifest(manifest)

    def one(row):
        res = tissue_mask(read_raster(row.raster_path), cfg.run.channel)
        write_mask(res.tissue, out.path(f"{row.slide_id}_tissue.pgm"))
        out.path(f"{row.slide_id}_roi.txt").write_text(f"otsu_level={res.otsu_level}\n", encoding="utf-8")
        return row.slide_id, res

    for sid, res in _pmap(threads, one, rows):
        out.add("tissue", sid, f"{sid}_tissue.pgm")
        out.add("roi_report", sid, f"{sid}_roi.txt")
        frac = res.tissue.bits.mean()
        out.say(f"{sid} otsu_level={res.otsu_level} channel={res.channel} tissue_fraction={frac:.4f}"
                + (" blank" if res.blank else ""))
    out.close()
    return out


def run_sample(cfg, manifest, roi_dir, out_dir) -> StageOutput:
    """Epoch patch set: every tumor-touching window (oversampled) plus normals."""
    out = StageOutput(out_dir)
    rows = {r.slide_id: r for r in read_manifest(manifest)}
    tissue = read_stage_manifest(roi_dir, "tissue")
    windows = {}
    for sid, row in rows.items():
        if sid not in tissue:
            raise InputError(f"no tissue mask for slide {sid} in {roi_dir}")
        tumor = read_mask(row.mask_path) if row.mask_path else None
        src = SlideSource(sid, None, read_mask(tissue[sid]), tumor)
        windows[sid] = slide_windows(src, cfg.sampler)
    plan = plan_from_windows(windows, cfg.sampler)
    # Extract slide by slide so only one raster is in memory at a time.
    by_slide: dict[str, set] = {}
    for sid, x, y, _ in plan:
        by_slide.setdefault(sid, set()).add((x, y))
    names = {}
    for sid in sorted(by_slide):
        row = rows[sid]
        src = SlideSource(sid, read_raster(row.raster_path), BinaryMask.empty(1, 1),
                          read_mask(row.mask_path) if row.mask_path else None)
        for x, y in sorted(by_slide[sid]):
            p = extract(src, x, y, cfg.sampler)
            stem = f"patches/{sid}_x{x}_y{y}"
            write_raster(p.image, out.path(stem + ".ppm"))
            write_mask(p.mask, out.path(stem + ".pgm"))
            names[(sid, x, y)] = (stem, p.is_tumor)
    index = []
    for i, (sid, x, y, _) in enumerate(plan):
        stem, is_tumor = names[(sid, x, y)]
        index.append((f"p{i:06d}", sid, x, y, int(is_tumor), stem + ".ppm", stem + ".pgm"))
    _write_csv(out.add("index", "patches", "index.csv"),
               ["patch_id", "slide_id", "x", "y", "is_tumor", "image_path", "mask_path"], index)
    pos = sum(r[4] for r in index)
    out.say(f"patches: {len(index)} ({pos} tumor, {len(index) - pos} normal), {len(names)} unique windows")
    out.say(f"window {cfg.sampler.patch_px} px -> {cfg.sampler.out_px} px, "
            f"oversample {cfg.sampler.oversample_factor}, normal ratio {cfg.sampler.neg_pos_ratio}")
    out.close()
    return out


def load_patches(sample_dir) -> list[PatchSample]:
    sample_dir = Path(sample_dir)
    index = read_stage_manifest(sample_dir, "index").get("patches")
    if index is None:
        raise InputError(f"{sample_dir} has no patch index")
    cache: dict[str, PatchSample] = {}
    out = []
    for rec in _read_csv(index, ("patch_id", "slide_id", "x", "y", "is_tumor", "image_path", "mask_path")):
        key = rec["image_path"]
        if key not in cache:
            cache[key] = PatchSample(read_raster(sample_dir / rec["image_path"]),
                                     read_mask(sample_dir / rec["mask_path"]),
                                     (rec["slide_id"], int(rec["x"]), int(rec["y"])), rec["is_tumor"] == "1")
        out.append(cache[key])
    return out


def run_train(cfg, sample_dir, out_dir) -> StageOutput:
    out = StageOutput(out_dir)
    data = load_patches(sample_dir)

    def progress(epoch, lr, loss):
        out.say(f"epoch {epoch} lr={lr:g} loss={loss:.6f}")

    res = train_net(data, cfg.net, cfg.train, progress=progress)
    save_checkpoint(res.params, out.add("checkpoint", "unet", "model.unet"))
    out.say(f"samples={len(data)} weights={res.params.n_weights()}")
    out.close()
    return out


def shrink_slide(raster: SlideRaster, roi: BinaryMask, factor: int) -> tuple[SlideRaster, BinaryMask]:
    """Slide and ROI at the network's working resolution."""
    if factor == 1:
        return raster, roi
    h = raster.height // factor * factor
    w = raster.width // factor * factor
    small = SlideRaster(downsample_pixels(raster.pixels[:h, :w], factor), raster.mpp * factor,
                        raster.magnification_tag)
    return small, BinaryMask(downsample_mask(roi.bits[:h, :w], factor))


def run_segment(cfg, manifest, roi_dir, model_path, out_dir, threads: int = 1) -> StageOutput:
    out = StageOutput(out_dir)
    params = load_checkpoint(model_path).astype(cfg.train.dtype)
    tissue = read_stage_manifest(roi_dir, "tissue")
    rows = read_manifest(manifest)
    out.say(f"model {Path(model_path).name}, working scale 1/{cfg.scale}, overlap {cfg.segment.tile_overlap}")
    for row in rows:
        if row.slide_id not in tissue:
            raise InputError(f"no tissue mask for slide {row.slide_id} in {roi_dir}")
        raster, roi = shrink_slide(read_raster(row.raster_path), read_mask(tissue[row.slide_id]), cfg.scale)
        m = infer_slide(params, raster, roi, cfg.segment.tile_overlap, cfg.segment.batch, threads)
        write_heatmap(m, out.add("heatmap", row.slide_id, f"{row.slide_id}.hmap"))
        out.say(f"{row.slide_id} {m.width}x{m.height} mpp={m.mpp:g} max={float(m.values.max()):.4f}")
    out.close()
    return out


def run_postprocess(cfg, heatmap_dir, out_dir, manifest=None) -> StageOutput:
    out = StageOutput(out_dir)
    heatmaps = read_stage_manifest(heatmap_dir, "heatmap")
    rasters = {r.slide_id: r.raster_path for r in read_manifest(manifest)} if manifest else {}
    rows = []
    for sid in sorted(heatmaps):
        m = read_heatmap(heatmaps[sid])
        lesions = extract_lesions(m, cfg.post)
        for i, l in enumerate(lesions):
            rows.append((sid, i, l.pixel_count, f"{l.diameter_mm:.6f}", f"{l.area_mm2:.6f}",
                         f"{l.mean_prob:.6f}", l.grade.value))
        worst = max((l.grade.value for l in lesions), key=("itc", "micro", "macro").index, default="none")
        out.say(f"{sid} lesions={len(lesions)} worst={worst}")
        if sid in rasters:
            raster = read_raster(rasters[sid])
            factor = max(1, raster.width // m.width)
            small, _ = shrink_slide(raster, BinaryMask.empty(raster.height, raster.width), factor)
            img = overlay(small.pixels[:m.height, :m.width], m, cfg.post)
            write_raster(SlideRaster(img, m.mpp, small.magnification_tag),
                         out.add("overlay", sid, f"overlays/{sid}.ppm"))
    _write_csv(out.add("lesions", "all", "lesions.csv"),
               ["slide_id", "lesion_idx", "pixels", "diameter_mm", "area_mm2", "mean_prob", "grade"], rows)
    out.close()
    return out


def _features(heatmap_dir, schema):
    maps = read_stage_manifest(heatmap_dir, "heatmap")
    return {sid: extract_features(read_heatmap(maps[sid]), schema) for sid in sorted(maps)}


def run_classify(cfg, heatmap_dir, out_dir, labels=None, model_path=None, train_dir=None,
                 train_labels=None) -> StageOutput:
    """Predict slide labels; fit the forest first when ``train_dir`` is given."""
    out = StageOutput(out_dir)
    schema = cfg.run.schema
    if train_dir is not None:
        if train_labels is None:
            raise InputError("fitting the slide classifier needs --train-labels")
        feats = _features(train_dir, schema)
        truth = read_slide_labels(train_labels)
        missing = sorted(set(feats) - set(truth))
        if missing:
            raise InputError(f"no training label for slides {missing[:5]}")
        ids = sorted(feats)
        model = train_forest([feats[s] for s in ids], [truth[s] for s in ids], cfg.forest, schema)
        save_model(model, out.add("model", "forest", "model.rfor"))
        fit = confusion(model, [feats[s] for s in ids], [truth[s] for s in ids])
        out.say(f"forest: {len(model.trees)} trees on {len(ids)} slides, schema {schema}")
        out.say("training confusion (slide labels):")
        out.say(fit.to_text())
        out.say()
    elif model_path is not None:
        model = load_model(model_path)
    else:
        raise InputError("classify-slide needs --model or --train")
    feats = _features(heatmap_dir, model.schema_id)
    truth = read_slide_labels(labels) if labels else None
    header = ["slide_id", "predicted_label"] + (["true_label"] if truth else [])
    pred_rows, label_rows, pairs = [], [], []
    for sid in sorted(feats):
        label, _ = predict(model, feats[sid])
        row = [sid, label.text]
        if truth is not None:
            if sid not in truth:
                raise InputError(f"no true label for slide {sid}")
            row.append(truth[sid].text)
            pairs.append((int(truth[sid]), int(label)))
        pred_rows.append(row)
        pid, idx = split_slide_id(sid)
        label_rows.append((pid, idx, label.text))
    _write_csv(out.add("predictions", "slides", "slide_predictions.csv"), header, pred_rows)
    _write_csv(out.add("slide_labels", "slides", "slide_labels.csv"),
               ["patient_id", "slide_index", "label"], label_rows)
    if pairs:
        cm = ConfusionMatrix.from_pairs([a for a, _ in pairs], [b for _, b in pairs], SLIDE_CLASS_NAMES)
        text = cm.to_text()
        out.path("confusion.txt").write_text(text + "\n", encoding="utf-8")
        out.add("confusion", "slides", "confusion.txt")
        rec = cm.recall()
        out.say("slide confusion (rows truth, columns prediction):")
        out.say(text)
        out.say("recall: " + " ".join(f"{n}={r:.4f}" for n, r in zip(SLIDE_CLASS_NAMES, rec) if not np.isnan(r)))
    out.close()
    return out


def run_stage_patient(slide_labels_csv, out_dir) -> StageOutput:
    out = StageOutput(out_dir)
    by_patient: dict[str, dict[int, SlideLabel]] = {}
    for rec in _read_csv(slide_labels_csv, ("patient_id", "slide_index", "label")):
        try:
            label = SlideLabel.parse(rec["label"])
        except ValueError as exc:
            raise InputError(str(exc)) from None
        slides = by_patient.setdefault(rec["patient_id"], {})
        idx = int(rec["slide_index"])
        if idx in slides:
            raise InputError(f"duplicate slide {idx} for patient {rec['patient_id']}")
        slides[idx] = label
    rows = []
    for pid in sorted(by_patient):
        stage = stage_patient([by_patient[pid][i] for i in sorted(by_patient[pid])])
        rows.append((pid, stage.text))
        out.say(f"{pid} {stage.text}")
    _write_csv(out.add("stages", "patients", "stages.csv"), ["patient_id", "stage"], rows)
    out.close()
    return out


def evaluate_text(pred_csv, truth_csv) -> str:
    kappa, cm = score_patients(read_stages(pred_csv), read_stages(truth_csv))
    return f"kappa={kappa:.4f}\n{cm.to_text()}\n"


def run_evaluate(pred_csv, truth_csv, out_dir=None) -> str:
    text = evaluate_text(pred_csv, truth_csv)
    if out_dir is not None:
        out = StageOutput(out_dir)
        out.lines = text.rstrip("\n").split("\n")
        out.add("report", "kappa", "report.txt")
        out.close()
    return text


def run_pipeline(cfg, out_dir, n_train: int, n_test: int, threads: int = 1) -> str:
    """Every stage on synthetic data; returns the evaluation text."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    timings = []

    def timed(name, fn, *args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        timings.append((name, time.perf_counter() - t0))
        log.info("%s done in %.1f s", name, timings[-1][1])
        return res

    (root / "config.txt").write_text(config_mod.dump_config(cfg), encoding="utf-8")
    data = root / "data"
    timed("gen-data", run_gen_data, cfg, data, n_train, n_test, threads)
    manifests = {s: data / f"{s}_manifest.csv" for s in ("train", "test")}
    for split in ("train", "test"):
        timed(f"roi-{split}", run_roi, cfg, manifests[split], root / "roi" / split, threads)
    timed("sample", run_sample, cfg, manifests["train"], root / "roi" / "train", root / "sample")
    timed("train", run_train, cfg, root / "sample", root / "train")
    for split in ("train", "test"):
        timed(f"segment-{split}", run_segment, cfg, manifests[split], root / "roi" / split,
              root / "train" / "model.unet", root / "segment" / split, threads)
    timed("postprocess", run_postprocess, cfg, root / "segment" / "test", root / "postprocess")
    timed("classify-slide", run_classify, cfg, root / "segment" / "test", root / "classify",
          labels=data / "test_slide_labels.csv", train_dir=root / "segment" / "train",
          train_labels=data / "train_slide_labels.csv")
    timed("stage-patient", run_stage_patient, root / "classify" / "slide_labels.csv", root / "stage")
    (root / "stages.csv").write_bytes((root / "stage" / "stages.csv").read_bytes())
    text = timed("evaluate", run_evaluate, root / "stages.csv", data / "test_stages.csv", root / "evaluate")
    (root / "kappa.txt").write_text(text, encoding="utf-8")
    # Wall-clock times vary run to run, so they live outside the compared outputs.
    (root / "timings.txt").write_text(
        "".join(f"{n} {t:.1f}\n" for n, t in timings) + f"total {sum(t for _, t in timings):.1f}\n",
        encoding="utf-8")
    return text


# --- argument parsing -------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads within a stage")
    common.add_argument("--out-dir", default="out", help="directory for stage artifacts")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, e.g. train.epochs=3 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nodestage", description="Lymph-node metastasis staging pipeline.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gen-data", parents=[common], help="render synthetic patients")
    g.add_argument("--patients", type=int, help="training patients")
    g.add_argument("--test-patients", type=int, help="test patients (default: same as --patients)")

    r = sub.add_parser("roi", parents=[common], help="tissue masks by Otsu thresholding")
    r.add_argument("manifest")

    s = sub.add_parser("sample", parents=[common], help="extract training patches")
    s.add_argument("manifest")
    s.add_argument("--roi-dir", required=True)

    t = sub.add_parser("train", parents=[common], help="train the segmentation network")
    t.add_argument("sample_dir")

    sg = sub.add_parser("segment", parents=[common], help="whole-slide tumor heatmaps")
    sg.add_argument("manifest")
    sg.add_argument("--roi-dir", required=True)
    sg.add_argument("--model", required=True)

    pp = sub.add_parser("postprocess", parents=[common], help="lesions from heatmaps")
    pp.add_argument("heatmap_dir")
    pp.add_argument("--overlay", metavar="MANIFEST", help="patient manifest; writes tinted overlays")

    c = sub.add_parser("classify-slide", parents=[common], help="slide labels from heatmaps")
    c.add_argument("heatmap_dir")
    c.add_argument("--labels", help="CSV of true slide labels for a confusion matrix")
    c.add_argument("--model", help="trained forest (.rfor)")
    c.add_argument("--train", metavar="HEATMAP_DIR", help="fit a forest on these heatmaps first")
    c.add_argument("--train-labels", help="CSV of slide labels for --train")

    sp = sub.add_parser("stage-patient", parents=[common], help="pN stage from slide labels")
    sp.add_argument("slide_labels")

    e = sub.add_parser("evaluate", parents=[common], help="quadratic weighted kappa of stages")
    e.add_argument("pred")
    e.add_argument("truth")

    pl = sub.add_parser("pipeline", parents=[common], help="run every stage on synthetic data")
    pl.add_argument("--patients", type=int, help="training patients (and test patients by default)")
    pl.add_argument("--test-patients", type=int)
    return p


def _overrides(args, parser) -> dict[str, str]:
    values = {}
    for item in args.set:
        if "=" not in item:
            parser.error(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "patients", None) is not None:
        values["run.patients"] = str(args.patients)
    if getattr(args, "test_patients", None) is not None:
        values["run.test_patients"] = str(args.test_patients)
    return values


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        cfg = config_mod.load_config(args.config, _overrides(args, parser))
    except (PipelineError, ValueError, OSError) as exc:
        print(f"nodestage: config error: {exc}", file=sys.stderr)
        return 2
    out = args.out_dir
    n_train = cfg.run.patients
    n_test = cfg.run.test_patients if cfg.run.test_patients is not None else n_train
    try:
        cmd = args.command
        if cmd == "gen-data":
            run_gen_data(cfg, out, n_train, n_test, args.threads)
        elif cmd == "roi":
            run_roi(cfg, args.manifest, out, args.threads)
        elif cmd == "sample":
            run_sample(cfg, args.manifest, args.roi_dir, out)
        elif cmd == "train":
            run_train(cfg, args.sample_dir, out)
        elif cmd == "segment":
            run_segment(cfg, args.manifest, args.roi_dir, args.model, out, args.threads)
        elif cmd == "postprocess":
            run_postprocess(cfg, args.heatmap_dir, out, args.overlay)
        elif cmd == "classify-slide":
            run_classify(cfg, args.heatmap_dir, out, args.labels, args.model, args.train, args.train_labels)
        elif cmd == "stage-patient":
            res = run_stage_patient(args.slide_labels, out)
            sys.stdout.write((res.dir / "stages.csv").read_text(encoding="utf-8"))
        elif cmd == "evaluate":
            sys.stdout.write(run_evaluate(args.pred, args.truth, out))
        elif cmd == "pipeline":
            sys.stdout.write(run_pipeline(cfg, out, n_train, n_test, args.threads))
    except (PipelineError, OSError) as exc:
        print(f"nodestage {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
