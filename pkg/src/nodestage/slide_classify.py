"""Slide-level classification: multi-threshold lesion features and a random forest.

Model file layout (all little-endian)::

    "RFOR"  u32 version
    u32 n_features  u32 n_classes  u32 schema (0 = base16, 1 = ext20)
    u32 n_trees  u32 max_features  u32 min_samples_leaf  u8 bootstrap  u64 seed
    per tree: u32 node_count, then nodes in preorder:
        u8 0 (leaf)  + n_classes x f64 class counts
        u8 1 (split) + u32 feature + f64 threshold, followed by left then right subtree
"""

from __future__ import annotations

import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, SchemaError, TrainingError
from .evaluate import ConfusionMatrix
from .heatmap_post import PostConfig, extract_lesions
from .labels import SlideLabel
from .slide_store import ProbabilityMap

THRESHOLDS = (0.3, 0.5, 0.7, 0.9)
N_CLASSES = 4
SCHEMAS = {"base16": 16, "ext20": 20}
SLIDE_CLASS_NAMES = tuple(l.text for l in SlideLabel)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema_id: str = "ext20"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if self.schema_id not in SCHEMAS:
            raise SchemaError(f"unknown schema {self.schema_id!r}")
        if v.shape != (SCHEMAS[self.schema_id],):
            raise SchemaError(f"{self.schema_id} needs {SCHEMAS[self.schema_id]} values, got {v.shape}")
        if not np.isfinite(v).all():
            raise SchemaError("feature values must be finite")
        object.__setattr__(self, "values", v)


def feature_names(schema_id: str = "ext20") -> list[str]:
    names = [f"t{t}_{f}" for t in THRESHOLDS
             for f in ("max_diameter_mm", "max_area_mm2", "lesion_count", "total_area_mm2")]
    if schema_id == "ext20":
        names += [f"t{t}_negative_density" for t in THRESHOLDS]
    return names


def extract_features(m: ProbabilityMap, schema_id: str = "ext20") -> FeatureVector:
    """Four size statistics at each of four thresholds, plus (ext20) the
    below-threshold fraction inside the largest lesion's bounding box."""
    base, density = [], []
    for t in THRESHOLDS:
        lesions = extract_lesions(m, PostConfig(threshold=t))
        if lesions:
            big = lesions[0]
            base += [max(l.diameter_mm for l in lesions), big.area_mm2, float(len(lesions)),
                     sum(l.area_mm2 for l in lesions)]
            x0, y0, x1, y1 = big.bbox
            box = m.values[y0:y1 + 1, x0:x1 + 1]
            density.append(float((box < np.float32(t)).mean()))
        else:
            base += [0.0, 0.0, 0.0, 0.0]
            density.append(0.0)
    values = base + density if schema_id == "ext20" else base
    return FeatureVector(np.asarray(values), schema_id)


# --- CART -----------------------------------------------------------------

@dataclass
class Node:
    counts: np.ndarray | None = None  # leaf class counts
    feature: int = -1
    threshold: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def majority(self) -> int:
        # argmax returns the first maximum, i.e. the less severe class on ties.
        return int(np.argmax(self.counts))

    def size(self) -> int:
        return 1 if self.is_leaf else 1 + self.left.size() + self.right.size()


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_features: int | None = None  # None -> floor(sqrt(F))
    min_samples_leaf: int = 2
    bootstrap: bool = True
    seed: int = 0


def _gini_children(y: np.ndarray, order: np.ndarray, n_classes: int) -> np.ndarray:
    """Weighted child impurity for every split position of a sorted column."""
    onehot = np.zeros((len(y), n_classes))
    onehot[np.arange(len(y)), y[order]] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    right = left[-1] + onehot[-1] - left
    nl = np.arange(1, len(y), dtype=np.float64)
    nr = len(y) - nl
    gl = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
    gr = 1.0 - ((right / nr[:, None]) ** 2).sum(axis=1)
    return (nl * gl + nr * gr) / len(y)


def best_split(X: np.ndarray, y: np.ndarray, features: Sequence[int], min_leaf: int, n_classes: int):
    """Lowest weighted Gini over candidate features; ties -> lowest feature, then threshold."""
    best = None
    for f in sorted(features):
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        sc = col[order]
        imp = _gini_children(y, order, n_classes)
        pos = np.arange(1, len(y))
        valid = (sc[1:] != sc[:-1]) & (pos >= min_leaf) & (len(y) - pos >= min_leaf)
        if not valid.any():
            continue
        cand = np.flatnonzero(valid)
        # Rounding noise must not break ties between equal impurities.
        vals = np.round(imp[cand], 12)
        i = cand[np.argmin(vals)]  # first = lowest threshold
        score = float(np.round(imp[i], 12))
        thr = float((sc[i] + sc[i + 1]) / 2.0)
        if best is None or score < best[0]:
            best = (score, f, thr)
    return best


def grow_tree(X, y, rng: np.random.Generator | None, max_features: int, min_leaf: int,
              n_classes: int = N_CLASSES) -> Node:
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    if np.count_nonzero(counts) <= 1 or len(y) < 2 * min_leaf:
        return Node(counts=counts)
    n_feat = X.shape[1]
    if rng is None or max_features >= n_feat:
        feats = list(range(n_feat))
    else:
        feats = rng.choice(n_feat, size=max_features, replace=False).tolist()
    split = best_split(X, y, feats, min_leaf, n_classes)
    if split is None:
        return Node(counts=counts)
    _, f, thr = split
    go_left = X[:, f] <= thr
    return Node(
        counts=counts, feature=f, threshold=thr,
        left=grow_tree(X[go_left], y[go_left], rng, max_features, min_leaf, n_classes),
        right=grow_tree(X[~go_left], y[~go_left], rng, max_features, min_leaf, n_classes),
    )


def tree_predict(node: Node, x: np.ndarray) -> int:
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.majority()


@dataclass
class ForestModel:
    trees: list[Node]
    n_features: int
    schema_id: str
    hp: ForestParams = field(default_factory=ForestParams)


def train_forest(X, y, hp: ForestParams = ForestParams(), schema_id: str | None = None) -> ForestModel:
    X = np.asarray([fv.values if isinstance(fv, FeatureVector) else fv for fv in X], dtype=np.float64)
    y = np.asarray([int(v) for v in y], dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y) or len(y) < 2:
        raise TrainingError("need at least two feature vectors with one label each")
    if len(np.unique(y)) < 2:
        raise TrainingError("need at least two distinct labels")
    if y.min() < 0 or y.max() >= N_CLASSES:
        raise TrainingError("labels must be slide classes 0..3")
    n, f = X.shape
    if schema_id is None:
        schema_id = {v: k for k, v in SCHEMAS.items()}.get(f, "custom")
    max_features = hp.max_features or max(1, int(math.isqrt(f)))
    trees = []
    for t in range(hp.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([hp.seed, t]))
        idx = rng.integers(0, n, size=n) if hp.bootstrap else np.arange(n)
        trees.append(grow_tree(X[idx], y[idx], rng if max_features < f else None,
                               max_features, hp.min_samples_leaf))
    return ForestModel(trees, f, schema_id, hp)


def predict(model: ForestModel, fv) -> tuple[SlideLabel, np.ndarray]:
    """Majority vote over trees; vote ties go to the less severe class."""
    if isinstance(fv, FeatureVector):
        if fv.schema_id != model.schema_id:
            raise SchemaError(f"model expects {model.schema_id}, got {fv.schema_id}")
        x = fv.values
    else:
        x = np.asarray(fv, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise SchemaError(f"model expects {model.n_features} features, got {x.shape}")
    votes = np.zeros(N_CLASSES, dtype=np.int64)
    for tree in model.trees:
        votes[tree_predict(tree, x)] += 1
    return SlideLabel(int(np.argmax(votes))), votes / len(model.trees)


def confusion(model: ForestModel, X, y) -> ConfusionMatrix:
    preds = [int(predict(model, fv)[0]) for fv in X]
    return ConfusionMatrix.from_pairs([int(v) for v in y], preds, SLIDE_CLASS_NAMES)


# --- serialisation --------------------------------------------------------

MODEL_MAGIC = b"RFOR"
MODEL_VERSION = 1
_SCHEMA_CODE = {"base16": 0, "ext20": 1, "custom": 2}
_HEAD = struct.Struct("<4sIIIIIIIBQ")


def _write_node(node: Node, out: list):
    if node.is_leaf:
        out.append(struct.pack("<B", 0) + np.asarray(node.counts, dtype="<f8").tobytes())
    else:
        out.append(struct.pack("<BId", 1, node.feature, node.threshold))
        _write_node(node.left, out)
        _write_node(node.right, out)


def model_bytes(model: ForestModel) -> bytes:
    hp = model.hp
    chunks = [_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, model.n_features, N_CLASSES,
                         _SCHEMA_CODE[model.schema_id], len(model.trees),
                         hp.max_features or 0, hp.min_samples_leaf, int(hp.bootstrap),
                         int(hp.seed) & 0xFFFFFFFFFFFFFFFF)]
    for tree in model.trees:
        nodes = []
        _write_node(tree, nodes)
        chunks.append(struct.pack("<I", len(nodes)))
        chunks.extend(nodes)
    return b"".join(chunks)


def save_model(model: ForestModel, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path) -> ForestModel:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise FormatError("model file shorter than its header")
    (magic, version, n_features, n_classes, schema, n_trees, max_features,
     min_leaf, bootstrap, seed) = _HEAD.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad model magic {magic!r}")
    if version != MODEL_VERSION or n_classes != N_CLASSES:
        raise FormatError("unsupported model version or class count")
    pos = _HEAD.size

    def read_node():
        nonlocal pos
        kind = data[pos]
        pos += 1
        if kind == 0:
            counts = np.frombuffer(data, dtype="<f8", count=n_classes, offset=pos).copy()
            pos += 8 * n_classes
            return Node(counts=counts)
        if kind != 1:
            raise FormatError(f"bad node tag {kind}")
        feature, threshold = struct.unpack_from("<Id", data, pos)
        pos += 12
        if feature >= n_features:
            raise FormatError("split feature index out of range")
        left = read_node()
        right = read_node()
        return Node(feature=feature, threshold=threshold, left=left, right=right)

    trees = []
    try:
        for _ in range(n_trees):
            (count,) = struct.unpack_from("<I", data, pos)
            pos += 4
            tree = read_node()
            if tree.size() != count:
                raise FormatError("tree node count mismatch")
            trees.append(tree)
    except (struct.error, IndexError, ValueError) as exc:
        raise FormatError(f"truncated model file: {exc}") from None
    if pos != len(data):
        raise FormatError("trailing bytes after model payload")
    schema_id = {v: k for k, v in _SCHEMA_CODE.items()}[schema]
    hp = ForestParams(n_trees, max_features or None, min_leaf, bool(bootstrap), seed)
    return ForestModel(trees, n_features, schema_id, hp)
