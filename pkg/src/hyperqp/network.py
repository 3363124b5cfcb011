"""Two-phase hypergraph convolution network with a per-variable head.

The forward pass embeds raw vertex/hyperedge features into a shared width,
then alternates for L layers:

    edge phase:   h_e <- f_e([h_e, SUM of member vertex states])
    vertex phase: h_v <- f_v([h_v, MEAN of incident (updated) edge states])

and finally applies a small MLP head to the variable-vertex states, producing
one logit per decision variable.  Sigmoid(logit) is read as the probability
that the variable takes value 1 in a good solution.

Everything is plain numpy with hand-written reverse-mode gradients (verified
against central differences, see :func:`finite_diff_check`); training uses
adaptive moments with decoupled weight decay.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .hypergraph import EDGE_FEATURE_DIM, VERTEX_FEATURE_DIM, TermHypergraph

WEIGHTS_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class NetConfig:
    in_dim_v: int = VERTEX_FEATURE_DIM
    in_dim_e: int = EDGE_FEATURE_DIM
    dim: int = 16           # embedding width, also each convolution's output
    hidden: int = 64        # interior width of the combiner MLPs
    layers: int = 6
    head_hidden: int = 64
    negative_slope: float = 0.1
    vertex_agg: str = "mean"  # "mean" (default) or "sum" (for contrast tests)

    def validate(self):
        if min(self.in_dim_v, self.in_dim_e, self.dim, self.hidden,
               self.layers, self.head_hidden) < 1:
            raise ValueError("all network dimensions must be >= 1")
        if self.vertex_agg not in ("mean", "sum"):
            raise ValueError("vertex_agg must be 'mean' or 'sum'")


@dataclass
class Affine:
    W: np.ndarray
    b: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.W.T + self.b


@dataclass
class ConvLayer:
    edge_mlp: tuple[Affine, Affine]
    vertex_mlp: tuple[Affine, Affine]


@dataclass
class ModelWeights:
    config: NetConfig
    embed_v: Affine
    embed_e: Affine
    convs: list[ConvLayer]
    head: list[Affine]

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        out = [
            ("embed_v.W", self.embed_v.W), ("embed_v.b", self.embed_v.b),
            ("embed_e.W", self.embed_e.W), ("embed_e.b", self.embed_e.b),
        ]
        for t, layer in enumerate(self.convs):
            for part, mlp in (("edge", layer.edge_mlp), ("vertex", layer.vertex_mlp)):
                for k, aff in enumerate(mlp):
                    out.append((f"conv{t}.{part}.{k}.W", aff.W))
                    out.append((f"conv{t}.{part}.{k}.b", aff.b))
        for k, aff in enumerate(self.head):
            out.append((f"head.{k}.W", aff.W))
            out.append((f"head.{k}.b", aff.b))
        return out

    def n_params(self) -> int:
        return sum(a.size for _, a in self.named_params())


@dataclass
class ForwardTrace:
    """Per-layer states (index 0 is the embedding output)."""

    hv_layers: list[np.ndarray]
    he_layers: list[np.ndarray]
    cache: dict = field(default_factory=dict, repr=False)


@dataclass
class PredictionResult:
    logits: np.ndarray
    probs: np.ndarray
    confidence_loss: np.ndarray  # min(p, 1 - p)
    rounded: np.ndarray          # {0.0, 1.0}


def init_weights(seed: int, config: Optional[NetConfig] = None) -> ModelWeights:
    """Fan-in-scaled uniform init, zero biases, deterministic in the seed.

    The uniform bound is sqrt(3 / fan_in), i.e. weight standard deviation
    exactly 1 / sqrt(fan_in).  Together with the rectifier damping this
    roughly cancels the gain of the SUM aggregation, keeping the logits at
    order one through six layers (a bound of 1 / sqrt(fan_in) shrinks them
    ~6x per layer; the rectifier-gain-corrected bound blows them up ~3x).
    """
    config = config or NetConfig()
    config.validate()
    rng = np.random.default_rng(seed)

    def affine(n_out, n_in):
        s = math.sqrt(3.0 / n_in)
        return Affine(W=rng.uniform(-s, s, size=(n_out, n_in)), b=np.zeros(n_out))

    d, h = config.dim, config.hidden
    convs = [
        ConvLayer(
            edge_mlp=(affine(h, 2 * d), affine(d, h)),
            vertex_mlp=(affine(h, 2 * d), affine(d, h)),
        )
        for _ in range(config.layers)
    ]
    head = [affine(config.head_hidden, d),
            affine(config.head_hidden, config.head_hidden),
            affine(1, config.head_hidden)]
    return ModelWeights(
        config=config,
        embed_v=affine(d, config.in_dim_v),
        embed_e=affine(d, config.in_dim_e),
        convs=convs,
        head=head,
    )


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0.0, x, slope * x)


def _dleaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0.0, 1.0, slope)


def forward(weights: ModelWeights, graph: TermHypergraph) -> tuple[PredictionResult, ForwardTrace]:
    """Run the network; the trace carries everything backward() needs."""
    cfg = weights.config
    slope = cfg.negative_slope
    Xv = graph.vertex_features
    Xe = graph.edge_features
    if Xv.shape[1] != cfg.in_dim_v or Xe.shape[1] != cfg.in_dim_e:
        raise ValueError(
            f"feature widths ({Xv.shape[1]}, {Xe.shape[1]}) do not match the "
            f"configured input dims ({cfg.in_dim_v}, {cfg.in_dim_e})"
        )
    members = graph.edge_members
    flat_v, flat_e = graph.incidence()
    deg = graph.vertex_degrees()
    deg_safe = np.where(deg > 0, deg, 1.0)

    hv = weights.embed_v(Xv)
    he = weights.embed_e(Xe)
    hv_layers = [hv]
    he_layers = [he]
    layer_caches = []
    for layer in weights.convs:
        # Edge phase: sum the three member vertex states.
        agg_e = hv[members].sum(axis=1)
        ze = np.concatenate([he, agg_e], axis=1)
        a_e, b_e = layer.edge_mlp
        pre_e = a_e(ze)
        act_e = _leaky(pre_e, slope)
        he_new = b_e(act_e)

        # Vertex phase: average the updated incident edge states.
        sums = np.zeros_like(hv)
        np.add.at(sums, flat_v, he_new[flat_e])
        agg_v = sums if cfg.vertex_agg == "sum" else sums / deg_safe[:, None]
        zv = np.concatenate([hv, agg_v], axis=1)
        a_v, b_v = layer.vertex_mlp
        pre_v = a_v(zv)
        act_v = _leaky(pre_v, slope)
        hv_new = b_v(act_v)

        layer_caches.append(dict(ze=ze, pre_e=pre_e, act_e=act_e,
                                 zv=zv, pre_v=pre_v, act_v=act_v))
        hv, he = hv_new, he_new
        hv_layers.append(hv)
        he_layers.append(he)

    # Head over the variable vertices only.
    head_in = hv[: graph.n_vars]
    head_pre = []
    head_act = [head_in]
    h = head_in
    for k, aff in enumerate(weights.head):
        pre = aff(h)
        head_pre.append(pre)
        if k < len(weights.head) - 1:
            h = _leaky(pre, slope)
            head_act.append(h)
        else:
            h = pre
    logits = h[:, 0]
    probs = np.clip(1.0 / (1.0 + np.exp(-logits)), 1e-12, 1.0 - 1e-12)
    pred = PredictionResult(
        logits=logits,
        probs=probs,
        confidence_loss=np.minimum(probs, 1.0 - probs),
        rounded=(probs >= 0.5).astype(float),
    )
    trace = ForwardTrace(
        hv_layers=hv_layers,
        he_layers=he_layers,
        cache=dict(layers=layer_caches, head_pre=head_pre, head_act=head_act,
                   deg_safe=deg_safe, flat_v=flat_v, flat_e=flat_e,
                   members=members),
    )
    return pred, trace


def backward(weights: ModelWeights, graph: TermHypergraph, trace: ForwardTrace,
             dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse accumulation through the stored forward trace."""
    cfg = weights.config
    slope = cfg.negative_slope
    cache = trace.cache
    flat_v, flat_e = cache["flat_v"], cache["flat_e"]
    deg_safe = cache["deg_safe"]
    d = cfg.dim
    grads = {name: np.zeros_like(arr) for name, arr in weights.named_params()}

    # Head.
    dh = dlogits[:, None]
    for k in range(len(weights.head) - 1, -1, -1):
        aff = weights.head[k]
        if k < len(weights.head) - 1:
            dh = dh * _dleaky(cache["head_pre"][k], slope)
        grads[f"head.{k}.W"] += dh.T @ cache["head_act"][k]
        grads[f"head.{k}.b"] += dh.sum(axis=0)
        dh = dh @ aff.W
    n_vertices = graph.n_vertices
    d_hv = np.zeros((n_vertices, d))
    d_hv[: graph.n_vars] = dh
    d_he = np.zeros((graph.n_edges, d))

    for t in range(len(weights.convs) - 1, -1, -1):
        layer = weights.convs[t]
        lc = cache["layers"][t]
        a_v, b_v = layer.vertex_mlp
        a_e, b_e = layer.edge_mlp

        # Vertex phase backward.
        grads[f"conv{t}.vertex.1.W"] += d_hv.T @ lc["act_v"]
        grads[f"conv{t}.vertex.1.b"] += d_hv.sum(axis=0)
        d_act_v = d_hv @ b_v.W
        d_pre_v = d_act_v * _dleaky(lc["pre_v"], slope)
        grads[f"conv{t}.vertex.0.W"] += d_pre_v.T @ lc["zv"]
        grads[f"conv{t}.vertex.0.b"] += d_pre_v.sum(axis=0)
        d_zv = d_pre_v @ a_v.W
        d_hv_own = d_zv[:, :d]
        d_agg_v = d_zv[:, d:]
        if cfg.vertex_agg == "mean":
            d_agg_v = d_agg_v / deg_safe[:, None]
        d_he_total = d_he.copy()
        np.add.at(d_he_total, flat_e, d_agg_v[flat_v])

        # Edge phase backward.
        grads[f"conv{t}.edge.1.W"] += d_he_total.T @ lc["act_e"]
        grads[f"conv{t}.edge.1.b"] += d_he_total.sum(axis=0)
        d_act_e = d_he_total @ b_e.W
        d_pre_e = d_act_e * _dleaky(lc["pre_e"], slope)
        grads[f"conv{t}.edge.0.W"] += d_pre_e.T @ lc["ze"]
        grads[f"conv{t}.edge.0.b"] += d_pre_e.sum(axis=0)
        d_ze = d_pre_e @ a_e.W
        d_he = d_ze[:, :d]
        d_agg_e = d_ze[:, d:]
        d_hv_new = d_hv_own.copy()
        np.add.at(d_hv_new, flat_v, d_agg_e[flat_e])
        d_hv = d_hv_new

    grads["embed_v.W"] += d_hv.T @ graph.vertex_features
    grads["embed_v.b"] += d_hv.sum(axis=0)
    grads["embed_e.W"] += d_he.T @ graph.edge_features
    grads["embed_e.b"] += d_he.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Loss and training
# ---------------------------------------------------------------------------

def bce_loss(logits, labels) -> float:
    """Mean binary cross-entropy on logits, in overflow-safe form."""
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    if z.shape != y.shape:
        raise ValueError("logits and labels must have equal length")
    if z.size == 0:
        raise ValueError("bce_loss() needs at least one entry")
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def bce_grad(logits, labels) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    return (1.0 / (1.0 + np.exp(-z)) - y) / z.size


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, lr=1e-4, weight_decay=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def update(self, weights: ModelWeights, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, param in weights.named_params():
            g = grads[name]
            m = self._m.setdefault(name, np.zeros_like(param))
            v = self._v.setdefault(name, np.zeros_like(param))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                param *= 1.0 - self.lr * self.weight_decay
            step = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            param -= self.lr * step


def instance_loss_and_grads(weights, graph, labels):
    pred, trace = forward(weights, graph)
    loss = bce_loss(pred.logits, labels)
    grads = backward(weights, graph, trace, bce_grad(pred.logits, labels))
    return loss, grads


def train_step(weights: ModelWeights, batch: Sequence[tuple[TermHypergraph, np.ndarray]],
               optimizer: AdamW) -> float:
    """One optimizer update on the mean loss over the batch."""
    if not batch:
        raise ValueError("train_step() needs a non-empty batch")
    total = None
    loss_sum = 0.0
    scale = 1.0 / len(batch)
    for graph, labels in batch:
        loss, grads = instance_loss_and_grads(weights, graph, labels)
        loss_sum += loss
        if total is None:
            total = {k: v * scale for k, v in grads.items()}
        else:
            for k, v in grads.items():
                total[k] += v * scale
    loss_mean = loss_sum * scale
    if not math.isfinite(loss_mean):
        raise TrainingError(f"non-finite training loss {loss_mean}")
    optimizer.update(weights, total)
    return loss_mean


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 1
    seed: int = 0
    shuffle: bool = True
    patience: Optional[int] = None  # stop after this many epochs without improvement
    min_improvement: float = 1e-5


def train(dataset: Sequence[tuple[TermHypergraph, np.ndarray]],
          config: TrainConfig,
          weights: Optional[ModelWeights] = None) -> tuple[ModelWeights, list[float]]:
    """Epoch loop over (graph, labels) pairs; returns the loss curve."""
    if not dataset:
        raise ValueError("train() needs a non-empty dataset")
    if weights is None:
        weights = init_weights(config.seed)
    optimizer = AdamW(lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    curve: list[float] = []
    best = math.inf
    stale = 0
    for _epoch in range(config.epochs):
        order = np.arange(len(dataset))
        if config.shuffle:
            rng.shuffle(order)
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            losses.append(train_step(weights, batch, optimizer))
        epoch_loss = float(np.mean(losses))
        curve.append(epoch_loss)
        if epoch_loss < best - config.min_improvement:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break
    return weights, curve


def finite_diff_check(weights: ModelWeights, graph: TermHypergraph, labels,
                      eps: float = 1e-4, n_coords: int = 50, seed: int = 0,
                      name_filter: Optional[str] = None,
                      corrupt: Optional[str] = None,
                      floor: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients
    on a random subsample of parameter coordinates.

    ``floor`` is the denominator floor: coordinates whose gradients sit near
    zero are judged against it rather than against their own magnitude
    (central differences carry O(eps^2) truncation noise that would
    otherwise dominate the ratio).  ``name_filter`` restricts the sample to
    parameters whose name starts with the prefix; ``corrupt`` scales the
    analytic gradient of matching parameters, for negative-control tests.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    if n_coords < 1:
        raise ValueError("n_coords must be >= 1")
    _, grads = instance_loss_and_grads(weights, graph, labels)
    if corrupt is not None:
        for name in grads:
            if name.startswith(corrupt):
                grads[name] = 3.0 * grads[name] + 0.01
    params = [(n, a) for n, a in weights.named_params()
              if name_filter is None or n.startswith(name_filter)]
    if not params:
        raise ValueError(f"no parameters match filter {name_filter!r}")
    sizes = np.array([arr.size for _, arr in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def loss_fn():
        pred, _ = forward(weights, graph)
        return bce_loss(pred.logits, labels)

    worst = 0.0
    for flat_idx in picks:
        p = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name, arr = params[p]
        local = int(flat_idx - offsets[p])
        view = arr.reshape(-1)
        orig = view[local]
        view[local] = orig + eps
        f_plus = loss_fn()
        view[local] = orig - eps
        f_minus = loss_fn()
        view[local] = orig
        fd = (f_plus - f_minus) / (2.0 * eps)
        an = grads[name].reshape(-1)[local]
        rel = abs(fd - an) / max(abs(fd), abs(an), floor)
        worst = max(worst, rel)
    return worst


def confidence_order(pred: PredictionResult) -> np.ndarray:
    """Variable indices sorted by ascending min(p, 1-p), ties by index."""
    n = len(pred.confidence_loss)
    return np.lexsort((np.arange(n), pred.confidence_loss))


def prediction_from_probs(probs) -> PredictionResult:
    """Wrap externally produced probabilities (e.g. a relaxation rounding)."""
    p = np.clip(np.asarray(probs, dtype=float), 1e-9, 1.0 - 1e-9)
    return PredictionResult(
        logits=np.log(p / (1.0 - p)),
        probs=p,
        confidence_loss=np.minimum(p, 1.0 - p),
        rounded=(p >= 0.5).astype(float),
    )


# ---------------------------------------------------------------------------
# Weight serialization
# ---------------------------------------------------------------------------

def save_weights(weights: ModelWeights, path=None) -> str:
    cfg = weights.config
    doc = {
        "version": WEIGHTS_FORMAT_VERSION,
        "dims": {
            "in_dim_v": cfg.in_dim_v, "in_dim_e": cfg.in_dim_e,
            "dim": cfg.dim, "hidden": cfg.hidden, "layers": cfg.layers,
            "head_hidden": cfg.head_hidden,
        },
        "activation": {"kind": "leaky_relu", "negative_slope": cfg.negative_slope},
        "vertex_agg": cfg.vertex_agg,
        "layers": [
            {"name": name, "shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
            for name, arr in weights.named_params()
        ],
    }
    text = json.dumps(doc, indent=1) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def load_weights(data) -> ModelWeights:
    if isinstance(data, (bytes, bytearray)):
        text = data.decode("utf-8")
    elif isinstance(data, str) and data.lstrip().startswith("{"):
        text = data
    else:
        with open(data, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"weights file is not valid JSON: {exc}") from None
    if doc.get("version") != WEIGHTS_FORMAT_VERSION:
        raise ValueError(f"unsupported weights version {doc.get('version')!r}")
    dims = doc["dims"]
    cfg = NetConfig(
        in_dim_v=dims["in_dim_v"], in_dim_e=dims["in_dim_e"], dim=dims["dim"],
        hidden=dims["hidden"], layers=dims["layers"], head_hidden=dims["head_hidden"],
        negative_slope=doc["activation"]["negative_slope"],
        vertex_agg=doc.get("vertex_agg", "mean"),
    )
    weights = init_weights(0, cfg)
    stored = {entry["name"]: entry for entry in doc["layers"]}
    for name, arr in weights.named_params():
        if name not in stored:
            raise ValueError(f"weights file is missing layer {name!r}")
        entry = stored[name]
        if tuple(entry["shape"]) != arr.shape:
            raise ValueError(
                f"layer {name!r} has shape {tuple(entry['shape'])}, expected {arr.shape}"
            )
        arr[...] = np.array(entry["values"], dtype=float).reshape(arr.shape)
    return weights
