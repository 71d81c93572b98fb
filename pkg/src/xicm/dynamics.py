"""Dynamics-aware demonstration selection.

Retrieval ranks seen demonstrations by cosine similarity between feature
vectors built from up to three segments, concatenated in this fixed order:

* ``vis_in``  - 8x8x3 mean-pooled RGB of the initial frame, flattened, in [0, 1]
* ``vis_out`` - the dynamics predictor's estimate of the final frame's pooled
  features given the initial frame and the language
* ``lang``    - hashed bag of lowercase word unigrams+bigrams, L2-normalized

The predictor is a two-layer tanh perceptron trained with plain mini-batch
gradient descent to regress final-frame pooled features; it is a deliberately
small stand-in for a heavyweight video model, and externally computed
features can be swapped in through the feature-file import path.
"""

from __future__ import annotations

import enum
import json
import re
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .demo_store import Dataset, Demonstration, Observation
from .errors import DimensionMismatch, FeatureFileError, TrainingDiverged, TrainingFailed, XicmError

D_VIS = 192  # 8*8*3
D_LANG = 256
POOL_GRID = 8

_WORD_RE = re.compile(r"[a-z0-9]+")


# ---------------------------------------------------------------------------
# base features


def baseline_vis_feature(obs: Observation) -> np.ndarray:
    """Mean-pool the RGB buffer onto an 8x8 grid, flatten, scale to [0, 1].

    Cell (i, j) covers rows [floor(i*h/8), floor((i+1)*h/8)) and the analogous
    column range, so any image of at least 8x8 pixels partitions exactly.
    """
    h, w = obs.height, obs.width
    if h < POOL_GRID or w < POOL_GRID:
        raise DimensionMismatch(f"image {w}x{h} too small to pool onto {POOL_GRID}x{POOL_GRID}")
    img = np.frombuffer(obs.rgb, dtype=np.uint8).reshape(h, w, 3).astype(np.float64)
    row_edges = [(i * h) // POOL_GRID for i in range(POOL_GRID + 1)]
    col_edges = [(j * w) // POOL_GRID for j in range(POOL_GRID + 1)]
    pooled = np.empty((POOL_GRID, POOL_GRID, 3), dtype=np.float64)
    for i in range(POOL_GRID):
        for j in range(POOL_GRID):
            cell = img[row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1], :]
            pooled[i, j, :] = cell.mean(axis=(0, 1))
    return (pooled.reshape(-1) / 255.0).astype(np.float32)


def lang_feature(text: str) -> np.ndarray:
    """Hash word unigrams and bigrams into D_LANG buckets; L2-normalize.

    Empty text maps to the zero vector (not normalized).
    """
    tokens = _WORD_RE.findall(text.lower())
    grams = list(tokens)
    grams.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    vec = np.zeros(D_LANG, dtype=np.float64)
    for gram in grams:
        vec[zlib.crc32(gram.encode("utf-8")) % D_LANG] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec.astype(np.float32)


@dataclass
class DemoEmbedding:
    """Per-demonstration base features; vis_last is absent for queries."""

    demo_id: str
    vis_first: np.ndarray
    lang: np.ndarray
    vis_last: np.ndarray | None = None


def embed_demo(demo: Demonstration) -> DemoEmbedding:
    return DemoEmbedding(
        demo_id=demo.id,
        vis_first=baseline_vis_feature(demo.observations[0]),
        lang=lang_feature(demo.language),
        vis_last=baseline_vis_feature(demo.observations[-1]),
    )


def embed_dataset(dataset: Dataset) -> list[DemoEmbedding]:
    """Base features for every demo, aligned with dataset.demos (id-sorted)."""
    return [embed_demo(d) for d in dataset.demos]


def embed_query(obs: Observation, language: str, query_id: str = "query") -> DemoEmbedding:
    return DemoEmbedding(
        demo_id=query_id,
        vis_first=baseline_vis_feature(obs),
        lang=lang_feature(language),
    )


# ---------------------------------------------------------------------------
# predictor


@dataclass
class TrainConfig:
    # lr looks large because the loss is averaged over all output entries,
    # which shrinks per-dimension gradients by d_vis
    hidden: int = 64
    learning_rate: float = 4.0
    epochs: int = 2000
    batch_size: int = 32
    seed: int = 0
    check_beats_baseline: bool = True


class DynamicsPredictor:
    """Two-layer tanh MLP: concat(vis_in, lang) -> predicted final vis.

    All math is float64 and single-threaded; training with a fixed seed is
    bit-reproducible.
    """

    def __init__(self, d_vis: int = D_VIS, d_lang: int = D_LANG, hidden: int = 64, seed: int = 0):
        self.d_vis = int(d_vis)
        self.d_lang = int(d_lang)
        self.hidden = int(hidden)
        d_in = self.d_vis + self.d_lang
        rng = np.random.default_rng(seed)
        a1 = np.sqrt(6.0 / (d_in + hidden))
        a2 = np.sqrt(6.0 / (hidden + self.d_vis))
        self.w1 = rng.uniform(-a1, a1, size=(hidden, d_in))
        self.b1 = np.zeros(hidden, dtype=np.float64)
        self.w2 = rng.uniform(-a2, a2, size=(self.d_vis, hidden))
        self.b2 = np.zeros(self.d_vis, dtype=np.float64)
        self.final_loss: float | None = None
        self.baseline_loss: float | None = None
        self.train_config: TrainConfig | None = None

    # -- forward / backward

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        hidden = np.tanh(x @ self.w1.T + self.b1)
        return hidden @ self.w2.T + self.b2

    def predict(self, vis_in: np.ndarray, lang: np.ndarray) -> np.ndarray:
        if vis_in.shape[-1] != self.d_vis or lang.shape[-1] != self.d_lang:
            raise DimensionMismatch(
                f"predictor expects vis {self.d_vis} + lang {self.d_lang}, "
                f"got {vis_in.shape[-1]} + {lang.shape[-1]}"
            )
        x = np.concatenate([np.asarray(vis_in, dtype=np.float64), np.asarray(lang, dtype=np.float64)])
        return self.forward(x)[0]

    def loss(self, x: np.ndarray, targets: np.ndarray) -> float:
        diff = self.forward(x) - np.atleast_2d(np.asarray(targets, dtype=np.float64))
        return float(np.mean(diff * diff))

    def loss_and_grads(self, x: np.ndarray, targets: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """MSE loss and its analytic gradients w.r.t. every parameter."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        z1 = x @ self.w1.T + self.b1
        h = np.tanh(z1)
        y = h @ self.w2.T + self.b2
        diff = y - t
        n = diff.size
        loss = float(np.sum(diff * diff) / n)
        dy = 2.0 * diff / n
        g_w2 = dy.T @ h
        g_b2 = dy.sum(axis=0)
        dh = dy @ self.w2
        dz1 = dh * (1.0 - h * h)
        g_w1 = dz1.T @ x
        g_b1 = dz1.sum(axis=0)
        return loss, {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2}

    # -- persistence

    def save(self, path: str | Path) -> None:
        meta = {
            "d_vis": self.d_vis,
            "d_lang": self.d_lang,
            "hidden": self.hidden,
            "final_loss": self.final_loss,
            "baseline_loss": self.baseline_loss,
        }
        np.savez(
            path,
            w1=self.w1, b1=self.b1, w2=self.w2, b2=self.b2,
            meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        )

    @classmethod
    def load(cls, path: str | Path) -> "DynamicsPredictor":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            pred = cls(d_vis=meta["d_vis"], d_lang=meta["d_lang"], hidden=meta["hidden"])
            pred.w1 = data["w1"].astype(np.float64)
            pred.b1 = data["b1"].astype(np.float64)
            pred.w2 = data["w2"].astype(np.float64)
            pred.b2 = data["b2"].astype(np.float64)
            pred.final_loss = meta.get("final_loss")
            pred.baseline_loss = meta.get("baseline_loss")
        return pred


def constant_mean_loss(targets: np.ndarray) -> float:
    """MSE of the predictor that always outputs the target mean."""
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    diff = t - t.mean(axis=0)
    return float(np.mean(diff * diff))


def training_matrices(embeddings: list[DemoEmbedding]) -> tuple[np.ndarray, np.ndarray]:
    """(inputs, targets) for predictor training; requires final frames."""
    xs, ts = [], []
    for emb in embeddings:
        if emb.vis_last is None:
            raise XicmError(f"embedding {emb.demo_id} has no final-frame features")
        xs.append(np.concatenate([emb.vis_first, emb.lang]).astype(np.float64))
        ts.append(np.asarray(emb.vis_last, dtype=np.float64))
    return np.stack(xs), np.stack(ts)


def train_dynamics_predictor(
    embeddings: list[DemoEmbedding], config: TrainConfig | None = None
) -> tuple[DynamicsPredictor, list[float]]:
    """Train the predictor; returns it plus the per-epoch full-set loss curve.

    Deterministic given the config seed.  Raises TrainingDiverged when the
    loss goes non-finite, and TrainingFailed when the trained model fails to
    beat the constant-mean baseline (disable via config.check_beats_baseline
    for degenerate fixtures).
    """
    cfg = config or TrainConfig()
    x, t = training_matrices(embeddings)
    d_in = x.shape[1]
    pred = DynamicsPredictor(d_vis=t.shape[1], d_lang=d_in - t.shape[1], hidden=cfg.hidden, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    n = x.shape[0]
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = pred.loss_and_grads(x[idx], t[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            pred.w1 -= cfg.learning_rate * grads["w1"]
            pred.b1 -= cfg.learning_rate * grads["b1"]
            pred.w2 -= cfg.learning_rate * grads["w2"]
            pred.b2 -= cfg.learning_rate * grads["b2"]
        epoch_loss = pred.loss(x, t)
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, epoch_loss)
        history.append(epoch_loss)
    pred.final_loss = history[-1] if history else pred.loss(x, t)
    pred.baseline_loss = constant_mean_loss(t)
    pred.train_config = cfg
    if cfg.check_beats_baseline and pred.baseline_loss > 0.0 and pred.final_loss >= pred.baseline_loss:
        raise TrainingFailed(
            f"trained predictor (loss {pred.final_loss:.6g}) failed to beat "
            f"the constant-mean baseline ({pred.baseline_loss:.6g})"
        )
    return pred, history


def gradient_check(
    pred: DynamicsPredictor,
    x: np.ndarray,
    targets: np.ndarray,
    coords: list[tuple[str, int]],
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central finite-difference
    gradients at the given flat (param_name, index) coordinates."""
    _, grads = pred.loss_and_grads(x, targets)
    worst = 0.0
    for name, flat_idx in coords:
        param = getattr(pred, name)
        flat = param.reshape(-1)
        orig = flat[flat_idx]
        flat[flat_idx] = orig + step
        loss_plus = pred.loss(x, targets)
        flat[flat_idx] = orig - step
        loss_minus = pred.loss(x, targets)
        flat[flat_idx] = orig
        fd = (loss_plus - loss_minus) / (2.0 * step)
        an = grads[name].reshape(-1)[flat_idx]
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-12)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# selection features


class FeatureMode(enum.Enum):
    VIS_IN = "vis_in"
    VIS_OUT = "vis_out"
    LANG = "lang"
    VIS_OUT_LANG = "vis_out+lang"
    VIS_IN_LANG = "vis_in+lang"
    VIS_IN_VIS_OUT = "vis_in+vis_out"
    ALL = "all"

    @property
    def has_vis_in(self) -> bool:
        return self in (FeatureMode.VIS_IN, FeatureMode.VIS_IN_LANG, FeatureMode.VIS_IN_VIS_OUT, FeatureMode.ALL)

    @property
    def has_vis_out(self) -> bool:
        return self in (FeatureMode.VIS_OUT, FeatureMode.VIS_OUT_LANG, FeatureMode.VIS_IN_VIS_OUT, FeatureMode.ALL)

    @property
    def has_lang(self) -> bool:
        return self in (FeatureMode.LANG, FeatureMode.VIS_OUT_LANG, FeatureMode.VIS_IN_LANG, FeatureMode.ALL)

    @property
    def vis_segments(self) -> int:
        return int(self.has_vis_in) + int(self.has_vis_out)

    @classmethod
    def parse(cls, tag: str) -> "FeatureMode":
        for mode in cls:
            if mode.value == tag:
                return mode
        raise XicmError(f"unknown feature mode {tag!r}; valid: {[m.value for m in cls]}")


DEFAULT_MODE = FeatureMode.VIS_OUT_LANG


@dataclass
class DynamicsFeature:
    """Selection feature for one demo or query; segments are float32."""

    demo_id: str
    mode: FeatureMode
    vis: np.ndarray
    lang: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.vis, self.lang]).astype(np.float32)

    @property
    def dim(self) -> int:
        return len(self.vis) + len(self.lang)


def dynamics_feature(
    emb: DemoEmbedding, predictor: DynamicsPredictor | None, mode: FeatureMode = DEFAULT_MODE
) -> DynamicsFeature:
    """Assemble the selection feature for one embedding under a mode.

    Segment order is fixed: vis_in, then vis_out, then lang; excluded parts
    have zero length.  vis_out always comes from the predictor (never the
    recorded final frame), so pool and query features live in the same space.
    """
    vis_parts = []
    if mode.has_vis_in:
        vis_parts.append(np.asarray(emb.vis_first, dtype=np.float32))
    if mode.has_vis_out:
        if predictor is None:
            raise XicmError(f"mode {mode.value} needs a trained dynamics predictor")
        vis_parts.append(predictor.predict(emb.vis_first, emb.lang).astype(np.float32))
    vis = np.concatenate(vis_parts) if vis_parts else np.zeros(0, dtype=np.float32)
    lang = np.asarray(emb.lang, dtype=np.float32) if mode.has_lang else np.zeros(0, dtype=np.float32)
    return DynamicsFeature(demo_id=emb.demo_id, mode=mode, vis=vis, lang=lang)


def pool_features(
    embeddings: list[DemoEmbedding], predictor: DynamicsPredictor | None, mode: FeatureMode = DEFAULT_MODE
) -> list[DynamicsFeature]:
    return [dynamics_feature(e, predictor, mode) for e in embeddings]


# ---------------------------------------------------------------------------
# similarity and top-k


def cosine_similarity(a: DynamicsFeature, b: DynamicsFeature) -> float:
    """Cosine over the concatenated vector; zero-norm inputs score 0.0."""
    if a.mode != b.mode or a.dim != b.dim:
        raise DimensionMismatch(
            f"features incompatible: {a.mode.value}/{a.dim} vs {b.mode.value}/{b.dim}"
        )
    va = a.vector().astype(np.float64)
    vb = b.vector().astype(np.float64)
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(va, vb) / (na * nb))


@dataclass(frozen=True)
class SelectionResult:
    """Top-K pool indices with scores, descending; ties broke by index."""

    indices: tuple[int, ...]
    scores: tuple[float, ...]


def select_top_k(query: DynamicsFeature, pool: list[DynamicsFeature], k: int) -> SelectionResult:
    """Exact top-K by cosine similarity (descending, ties by ascending index)."""
    if k < 1:
        raise XicmError(f"k must be >= 1, got {k}")
    if k > len(pool):
        raise XicmError(f"k={k} exceeds pool size {len(pool)}")
    scores = [cosine_similarity(query, p) for p in pool]
    order = sorted(range(len(pool)), key=lambda i: (-scores[i], i))[:k]
    return SelectionResult(indices=tuple(order), scores=tuple(scores[i] for i in order))


# ---------------------------------------------------------------------------
# feature files

_MAGIC = b"XICMFEAT"
_VERSION = 1
BASE_MODE_TAG = "base"


@dataclass
class FeatureTable:
    """Raw contents of a feature file."""

    mode_tag: str
    source: str
    d_vis: int
    d_lang: int
    entries: list[tuple[str, np.ndarray]] = field(default_factory=list)


def _vector_length(mode_tag: str, d_vis: int, d_lang: int) -> int:
    if mode_tag == BASE_MODE_TAG:
        return 2 * d_vis + d_lang
    mode = FeatureMode.parse(mode_tag)
    return mode.vis_segments * d_vis + (d_lang if mode.has_lang else 0)


def write_feature_file(
    path: str | Path,
    mode_tag: str,
    d_vis: int,
    d_lang: int,
    entries: list[tuple[str, np.ndarray]],
    source: str = "xicm",
) -> None:
    """Write the self-describing binary feature file (little-endian f32)."""
    expected = _vector_length(mode_tag, d_vis, d_lang)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        for text in (mode_tag, source):
            raw = text.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(struct.pack("<III", d_vis, d_lang, len(entries)))
        for demo_id, vec in entries:
            vec = np.asarray(vec, dtype=np.float32)
            if vec.ndim != 1 or len(vec) != expected:
                raise FeatureFileError(
                    f"entry {demo_id!r} has length {vec.size}, expected {expected}"
                )
            if not np.all(np.isfinite(vec)):
                raise FeatureFileError(f"entry {demo_id!r} contains non-finite values")
            raw_id = demo_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw_id)))
            fh.write(raw_id)
            fh.write(vec.astype("<f4").tobytes())


def read_feature_file(path: str | Path) -> FeatureTable:
    """Parse a feature file; malformed input raises FeatureFileError with the
    offending byte offset."""
    data = Path(path).read_bytes()
    pos = 0

    def need(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FeatureFileError(f"truncated while reading {what}", offset=pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if need(len(_MAGIC), "magic") != _MAGIC:
        raise FeatureFileError("bad magic bytes", offset=0)
    (version,) = struct.unpack("<I", need(4, "version"))
    if version != _VERSION:
        raise FeatureFileError(f"unsupported version {version}", offset=pos - 4)

    def read_str(what: str) -> str:
        (length,) = struct.unpack("<H", need(2, f"{what} length"))
        return need(length, what).decode("utf-8")

    mode_tag = read_str("mode tag")
    source = read_str("source tag")
    d_vis, d_lang, count = struct.unpack("<III", need(12, "dims/count"))
    try:
        expected = _vector_length(mode_tag, d_vis, d_lang)
    except XicmError as exc:
        raise FeatureFileError(str(exc), offset=len(_MAGIC) + 4) from exc
    table = FeatureTable(mode_tag=mode_tag, source=source, d_vis=d_vis, d_lang=d_lang)
    for i in range(count):
        demo_id = read_str(f"id of record {i}")
        vec_offset = pos
        raw = need(4 * expected, f"vector of record {i}")
        vec = np.frombuffer(raw, dtype="<f4").copy()
        if not np.all(np.isfinite(vec)):
            raise FeatureFileError(f"record {demo_id!r} contains NaN/Inf", offset=vec_offset)
        table.entries.append((demo_id, vec))
    if pos != len(data):
        raise FeatureFileError(f"{len(data) - pos} trailing bytes after last record", offset=pos)
    return table


def export_features(features: list[DynamicsFeature], path: str | Path, source: str = "xicm") -> None:
    """Write selection features; all entries must share one mode."""
    if not features:
        raise FeatureFileError("nothing to export")
    mode = features[0].mode
    if any(f.mode != mode for f in features):
        raise FeatureFileError("mixed feature modes in one export")
    n_vis = mode.vis_segments
    vis_len = len(features[0].vis)
    if n_vis:
        if vis_len % n_vis:
            raise FeatureFileError(f"vis length {vis_len} not divisible by {n_vis} segments")
        d_vis = vis_len // n_vis
    else:
        d_vis = 0
    d_lang = len(features[0].lang)
    entries = [(f.demo_id, f.vector()) for f in features]
    write_feature_file(path, mode.value, d_vis, d_lang, entries, source=source)


def import_features(path: str | Path) -> list[DynamicsFeature]:
    """Read selection features (possibly produced elsewhere, e.g. latents of
    a large video model with d_vis=1024)."""
    table = read_feature_file(path)
    if table.mode_tag == BASE_MODE_TAG:
        raise FeatureFileError("file holds base embeddings, not selection features")
    mode = FeatureMode.parse(table.mode_tag)
    vis_len = mode.vis_segments * table.d_vis
    out = []
    for demo_id, vec in table.entries:
        out.append(
            DynamicsFeature(demo_id=demo_id, mode=mode, vis=vec[:vis_len], lang=vec[vis_len:])
        )
    return out


def save_embeddings(embeddings: list[DemoEmbedding], path: str | Path, source: str = "xicm") -> None:
    """Persist base embeddings (vis_first, vis_last, lang) as mode 'base'."""
    entries = []
    for emb in embeddings:
        if emb.vis_last is None:
            raise FeatureFileError(f"embedding {emb.demo_id} has no final-frame features")
        entries.append((emb.demo_id, np.concatenate([emb.vis_first, emb.vis_last, emb.lang])))
    d_vis = len(embeddings[0].vis_first)
    d_lang = len(embeddings[0].lang)
    write_feature_file(path, BASE_MODE_TAG, d_vis, d_lang, entries, source=source)


def load_embeddings(path: str | Path) -> list[DemoEmbedding]:
    table = read_feature_file(path)
    if table.mode_tag != BASE_MODE_TAG:
        raise FeatureFileError(f"expected base embeddings, found mode {table.mode_tag!r}")
    out = []
    for demo_id, vec in table.entries:
        dv = table.d_vis
        out.append(
            DemoEmbedding(
                demo_id=demo_id,
                vis_first=vec[:dv],
                vis_last=vec[dv:2 * dv],
                lang=vec[2 * dv:],
            )
        )
    return out
