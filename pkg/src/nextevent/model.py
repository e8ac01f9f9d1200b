"""The full network: cross-scale attention over a time hierarchy plus a
decoder that predicts the next event's type and a Weibull gap distribution.

Forward pass per history window:

1. embed every event (type column + positional encoding),
2. for each scale s = 1..S: multi-head attention among the frontier nodes
   of scale s (each query's keys are that frontier, optionally causally
   restricted), carried-over nodes pass through untouched; then average-pool
   along the merge tree to the next scale's active set and re-inject each
   node's positional context through a concat + projection,
3. a final attention pass at the top scale with the temporally last node as
   the sole query, then a dense layer, gives the sequence summary ``H_L``,
4. ``H_L`` feeds a softmax type head and a positive (scale, shape) time head.

``attention="dense"`` collapses the hierarchy to a single scale, which makes
the encoder one all-pair attention pass; a cross-scale run configured with
``num_scales=1`` takes literally the same code path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .encoding import FcpeParams, fcpe_matrix, init_fcpe_params, initial_frequencies, onehot_matrix
from .errors import ConfigError, DataError, HierarchyError, NumericsError
from .events import EventSequence, PredictionExample
from .hierarchy import ScaleHierarchy, build_hierarchy, default_merge_counts
from .tensor import DiffNode

__all__ = [
    "ModelConfig",
    "ModelParams",
    "FlopCounter",
    "init_model_params",
    "hierarchy_for",
    "cross_scale_attention",
    "hierarchical_pool",
    "encode",
    "summarize",
    "type_logits",
    "predict_type",
    "predict_time_params",
    "time_nll",
    "point_estimate_time",
    "loss",
    "forward",
    "ForwardResult",
    "count_attention_flops",
    "hierarchy_key_set_sizes",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

DISTRIBUTIONS = ("weibull", "exponential")
ATTENTION_MODES = ("cross_scale", "dense")
PE_MODES = ("fcpe", "base")
POSITIVE_FLOOR = 1e-6


@dataclass
class ModelConfig:
    """Architecture and loss switches; every field is checkpointed."""

    d_model: int = 16
    num_heads: int = 2
    num_scales: int = 4
    num_types: int = 2
    alpha: float = 0.5
    distribution: str = "weibull"
    attention: str = "cross_scale"
    pe: str = "fcpe"
    nonneg: bool = False
    causal: bool = False
    layer_norm: bool = False

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be positive and even, got {self.d_model}")
        if self.num_heads <= 0 or self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"num_heads must divide d_model ({self.d_model}), got {self.num_heads}"
            )
        if self.num_scales < 1:
            raise ConfigError(f"num_scales must be >= 1, got {self.num_scales}")
        if self.num_types < 1:
            raise ConfigError(f"num_types must be >= 1, got {self.num_types}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"distribution must be one of {DISTRIBUTIONS}")
        if self.attention not in ATTENTION_MODES:
            raise ConfigError(f"attention must be one of {ATTENTION_MODES}")
        if self.pe not in PE_MODES:
            raise ConfigError(f"pe must be one of {PE_MODES}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @property
    def effective_scales(self) -> int:
        return 1 if self.attention == "dense" else self.num_scales

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ScaleAttentionParams:
    """Per-scale projections: one (W_Q, W_K, W_V) triple per head plus W_O."""

    heads: list[tuple[DiffNode, DiffNode, DiffNode]]
    w_out: DiffNode


class ModelParams:
    """All learnable leaves, addressable by name for the optimizer and I/O."""

    def __init__(self, config: ModelConfig, fcpe: FcpeParams,
                 attn: list[ScaleAttentionParams], pool_proj: list[DiffNode],
                 w_summary: DiffNode, w_type: DiffNode, w_time: DiffNode):
        self.config = config
        self.fcpe = fcpe
        self.attn = attn
        self.pool_proj = pool_proj
        self.w_summary = w_summary
        self.w_type = w_type
        self.w_time = w_time

    def all_named(self) -> dict[str, DiffNode]:
        out = dict(self.fcpe.named())
        for s, sp in enumerate(self.attn, start=1):
            for h, (wq, wk, wv) in enumerate(sp.heads):
                out[f"attn{s}.h{h}.wq"] = wq
                out[f"attn{s}.h{h}.wk"] = wk
                out[f"attn{s}.h{h}.wv"] = wv
            out[f"attn{s}.wo"] = sp.w_out
        for s, wc in enumerate(self.pool_proj, start=1):
            out[f"pool{s}.wc"] = wc
        out["dec.summary"] = self.w_summary
        out["dec.type"] = self.w_type
        out["dec.time"] = self.w_time
        return out

    def named_parameters(self) -> dict[str, DiffNode]:
        """Trainable leaves only: base positional encoding freezes the
        frequencies and amplitude map."""
        out = self.all_named()
        if self.config.pe == "base":
            out.pop("fcpe.freqs")
            out.pop("fcpe.density_map")
        return out

    def zero_grad(self) -> None:
        for node in self.all_named().values():
            node.zero_grad()

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.all_named().items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        named = self.all_named()
        for k, v in values.items():
            if k not in named:
                raise ConfigError(f"unknown parameter {k!r} in state")
            if named[k].value.shape != v.shape:
                raise ConfigError(
                    f"parameter {k!r}: shape {v.shape} does not match {named[k].value.shape}"
                )
            named[k].value[...] = v


def init_model_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded initialization; identical (config, seed) gives identical values."""
    rng = np.random.default_rng(seed)
    d, dk = config.d_model, config.head_dim
    sigma = 1.0 / math.sqrt(d)
    fcpe = init_fcpe_params(d, config.num_types, rng)
    if config.pe == "base":
        # Fixed sinusoidal encoding: unit amplitudes, frozen frequency grid.
        fcpe.density_map.value[...] = 0.0
        fcpe.freqs.value[...] = initial_frequencies(d)
    attn = []
    for _ in range(config.effective_scales):
        heads = [
            tuple(T.parameter(rng.normal(0.0, sigma, size=(d, dk))) for _ in range(3))
            for _ in range(config.num_heads)
        ]
        attn.append(ScaleAttentionParams(heads, T.parameter(rng.normal(0.0, sigma, size=(d, d)))))
    pool_proj = [
        T.parameter(rng.normal(0.0, 1.0 / math.sqrt(2 * d), size=(2 * d, d)))
        for _ in range(config.effective_scales - 1)
    ]
    w_summary = T.parameter(rng.normal(0.0, sigma, size=(d, d)))
    w_type = T.parameter(rng.normal(0.0, sigma, size=(d, config.num_types)))
    w_time = T.parameter(rng.normal(0.0, sigma, size=(d, 2)))
    return ModelParams(config, fcpe, attn, pool_proj, w_summary, w_type, w_time)


class FlopCounter:
    """Counts query-key score multiplications actually executed."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def hierarchy_for(config: ModelConfig, times) -> ScaleHierarchy:
    """Build the per-window hierarchy the encoder walks."""
    n = len(times)
    S = config.effective_scales
    if S > n - 1:
        raise ConfigError(
            f"num_scales={S} needs at most {n - 1} for a history of {n} events"
        )
    return build_hierarchy(times, merge_counts=default_merge_counts(n, S))


def _positional(params: ModelParams, times, type_weights) -> DiffNode:
    """Positional context rows honoring the configured encoding mode."""
    cfg = params.config
    if cfg.pe == "fcpe":
        return fcpe_matrix(params.fcpe, times, type_weights, nonneg=cfg.nonneg)
    # Fixed sinusoidal variant: unit amplitudes on the frozen frequency grid.
    t = np.asarray(times, dtype=np.float64).reshape(-1, 1)
    w = params.fcpe.freqs.value.reshape(1, -1)
    phases = t @ w
    pos = np.empty((len(t), cfg.d_model))
    pos[:, 0::2] = np.cos(phases)
    pos[:, 1::2] = np.sin(phases)
    return T.constant(pos)


def _embed(params: ModelParams, times, type_weights) -> DiffNode:
    weights = T.constant(np.asarray(type_weights, dtype=np.float64))
    type_part = T.matmul(weights, T.transpose(params.fcpe.type_embed))
    return T.add(type_part, _positional(params, times, type_weights))


def _layer_norm(x: DiffNode, eps: float = 1e-5) -> DiffNode:
    """Row-wise normalization (no learned gain/bias), built from primitives."""
    n, d = x.shape
    ones_col = T.constant(np.ones((d, 1)))
    ones_row = T.constant(np.ones((1, d)))
    m = T.scale(T.matmul(x, ones_col), 1.0 / d)
    centered = T.sub(x, T.matmul(m, ones_row))
    var = T.scale(T.matmul(T.mul(centered, centered), ones_col), 1.0 / d)
    inv = T.pow_const(T.add(var, T.constant(np.full((n, 1), eps))), -0.5)
    return T.mul(centered, inv)


def cross_scale_attention(
    H: DiffNode,
    key_sets: list[list[int]],
    params: ModelParams,
    s: int,
    counter: FlopCounter | None = None,
    trace: list | None = None,
) -> DiffNode:
    """Multi-head attention where query row j may only look at ``key_sets[j]``.

    ``key_sets`` holds row positions into ``H`` and must include j itself.
    When every key set is the full row range the scores reduce to one dense
    matmul per head; otherwise each query gathers just its keys, so the
    executed score multiplications match the accounted ones either way.
    Output = concat(heads) @ W_O + residual.
    """
    n = H.shape[0]
    cfg = params.config
    sp = params.attn[s - 1]
    dk = cfg.head_dim
    inv_sqrt = 1.0 / math.sqrt(dk)
    full = all(len(ks) == n for ks in key_sets)
    head_outputs = []
    for h, (wq, wk, wv) in enumerate(sp.heads):
        Q = T.matmul(H, wq)
        K = T.matmul(H, wk)
        V = T.matmul(H, wv)
        if full:
            scores = T.scale(T.matmul(Q, T.transpose(K)), inv_sqrt)
            probs = T.softmax(scores, axis=1)
            if counter is not None:
                counter.add(n * n * dk)
            if trace is not None:
                trace.append((s, h, probs.value.copy()))
            head_outputs.append(T.matmul(probs, V))
        else:
            rows = []
            for j, ks in enumerate(key_sets):
                if j not in ks:
                    raise HierarchyError(f"key set of query {j} must include itself")
                q = T.gather_rows(Q, [j])
                Kj = T.gather_rows(K, ks)
                Vj = T.gather_rows(V, ks)
                scores = T.scale(T.matmul(q, T.transpose(Kj)), inv_sqrt)
                probs = T.softmax(scores, axis=1)
                if counter is not None:
                    counter.add(len(ks) * dk)
                if trace is not None:
                    trace.append((s, h, j, probs.value.copy()))
                rows.append(T.matmul(probs, Vj))
            head_outputs.append(T.concat_rows(rows))
    out = T.add(T.matmul(T.concat_cols(head_outputs), sp.w_out), H)
    if cfg.layer_norm:
        out = _layer_norm(out)
    return out


def hierarchical_pool(
    H_active: DiffNode, hierarchy: ScaleHierarchy, s: int, params: ModelParams,
    types: np.ndarray,
) -> DiffNode:
    """Ascend one scale: tree-mean the merged clusters, carry the rest, then
    concat each row with its positional context and project back to d_model."""
    cfg = params.config
    nxt_ids, groups = hierarchy.pool_groups(s)
    if H_active.shape[0] != len(hierarchy.active_nodes(s)):
        raise HierarchyError(
            f"pooling at scale {s}: got {H_active.shape[0]} rows for"
            f" {len(hierarchy.active_nodes(s))} active nodes"
        )
    pooled = T.mean_pool(H_active, groups)
    rep_times = [hierarchy.nodes[i].representative_time for i in nxt_ids]
    mixtures = np.stack(
        [hierarchy.type_mixture(i, types, cfg.num_types) for i in nxt_ids]
    )
    context = _positional(params, rep_times, mixtures)
    return T.matmul(T.concat_cols(pooled, context), params.pool_proj[s - 1])


def encode(
    params: ModelParams,
    seq: EventSequence,
    hierarchy: ScaleHierarchy | None = None,
    counter: FlopCounter | None = None,
    trace: list | None = None,
) -> tuple[DiffNode, ScaleHierarchy]:
    """Run the iterative cross-scale encoder over one history window.

    Returns the top-scale active-node representations (rows in time order)
    and the hierarchy used.
    """
    cfg = params.config
    if seq.num_types != cfg.num_types:
        raise ConfigError(
            f"sequence has {seq.num_types} types but model expects {cfg.num_types}"
        )
    if hierarchy is None:
        hierarchy = hierarchy_for(cfg, seq.times)
    S = hierarchy.num_scales
    H = _embed(params, seq.times, onehot_matrix(seq.types, cfg.num_types))
    for s in range(1, S + 1):
        active = hierarchy.active_nodes(s)
        frontier = hierarchy.frontier(s)
        pos_of = {node_id: i for i, node_id in enumerate(active)}
        fpos = [pos_of[i] for i in frontier]
        fpos_of = {node_id: i for i, node_id in enumerate(frontier)}
        key_sets = [
            [fpos_of[k] for k in hierarchy.key_set(s, node_id, causal=cfg.causal)]
            for node_id in frontier
        ]
        if len(fpos) == len(active):
            H = cross_scale_attention(H, key_sets, params, s, counter, trace)
        else:
            Hf = T.gather_rows(H, fpos)
            Hf = cross_scale_attention(Hf, key_sets, params, s, counter, trace)
            H = T.scatter_rows(H, fpos, Hf)
        if s < S:
            H = hierarchical_pool(H, hierarchy, s, params, seq.types)
    return H, hierarchy


def summarize(params: ModelParams, H_top: DiffNode,
              counter: FlopCounter | None = None) -> DiffNode:
    """Decoder attention at the top scale: the temporally last node queries
    every top node, then a dense layer produces the sequence summary H_L."""
    cfg = params.config
    n = H_top.shape[0]
    sp = params.attn[-1]
    dk = cfg.head_dim
    inv_sqrt = 1.0 / math.sqrt(dk)
    last = T.gather_rows(H_top, [n - 1])
    head_outputs = []
    for wq, wk, wv in sp.heads:
        q = T.matmul(last, wq)
        K = T.matmul(H_top, wk)
        V = T.matmul(H_top, wv)
        scores = T.scale(T.matmul(q, T.transpose(K)), inv_sqrt)
        probs = T.softmax(scores, axis=1)
        if counter is not None:
            counter.add(n * dk)
        head_outputs.append(T.matmul(probs, V))
    attended = T.add(T.matmul(T.concat_cols(head_outputs), sp.w_out), last)
    return T.matmul(attended, params.w_summary)


def type_logits(params: ModelParams, H_L: DiffNode) -> DiffNode:
    return T.matmul(H_L, params.w_type)


def predict_type(params: ModelParams, H_L: DiffNode) -> DiffNode:
    """Next-type probability row (sums to one)."""
    return T.softmax(type_logits(params, H_L), axis=1)


def predict_time_params(params: ModelParams, H_L: DiffNode) -> tuple[DiffNode, DiffNode]:
    """Positive Weibull (scale, shape); exponential mode pins shape to 1."""
    pre = T.matmul(H_L, params.w_time)  # (1, 2)
    floor = T.constant([[POSITIVE_FLOOR]])
    lam = T.add(T.softplus(T.gather_cols(pre, [0])), floor)
    if params.config.distribution == "exponential":
        gamma = T.constant([[1.0]])
    else:
        gamma = T.add(T.softplus(T.gather_cols(pre, [1])), floor)
    return lam, gamma


def time_nll(lam: DiffNode, gamma: DiffNode, gap: float) -> DiffNode:
    """Negative log Weibull density of the inter-event gap, in log space:

        -[ log g - log l + (g - 1)(log t - log l) - (t / l)^g ]
    """
    gap = float(gap)
    if gap <= 0.0:
        raise DataError(f"inter-event gap must be positive, got {gap}")
    log_t = T.constant([[math.log(gap)]])
    u = T.sub(log_t, T.log(lam))  # log(t / lambda)
    z = T.exp(T.mul(gamma, u))  # (t / lambda)^gamma
    term = T.sub(T.add(T.sub(T.log(gamma), T.log(lam)), T.mul(T.sub(gamma, T.constant([[1.0]])), u)), z)
    return T.neg(term)


def point_estimate_time(lam: float, gamma: float) -> float:
    """Weibull mean lambda * Gamma(1 + 1/gamma) as the point prediction."""
    if lam <= 0 or gamma <= 0:
        raise ConfigError("Weibull parameters must be positive")
    return lam * math.gamma(1.0 + 1.0 / gamma)


@dataclass
class ForwardResult:
    """Everything the harness needs from one example's forward pass."""

    total: DiffNode
    time_nll: float
    type_ce: float
    type_probs: np.ndarray
    lam: float
    gamma: float

    @property
    def predicted_type(self) -> int:
        return int(np.argmax(self.type_probs))

    @property
    def predicted_gap(self) -> float:
        return point_estimate_time(self.lam, self.gamma)


def forward(
    params: ModelParams,
    example: PredictionExample,
    hierarchy: ScaleHierarchy | None = None,
    counter: FlopCounter | None = None,
) -> ForwardResult:
    """Forward pass producing the combined loss node plus decoded readouts."""
    cfg = params.config
    H_top, _ = encode(params, example.history, hierarchy, counter)
    H_L = summarize(params, H_top, counter)
    logits = type_logits(params, H_L)
    target = int(example.target_type)
    if not 0 <= target < cfg.num_types:
        raise DataError(f"target type {target} outside [0, {cfg.num_types})")
    ce = T.sub(T.logsumexp(logits, axis=1), T.gather_cols(logits, [target]))
    lam, gamma = predict_time_params(params, H_L)
    lt = time_nll(lam, gamma, example.target_gap)
    total = T.add(T.scale(lt, 1.0 - cfg.alpha), T.scale(ce, cfg.alpha))
    probs = T.softmax(logits, axis=1).value[0].copy()
    if not np.isfinite(total.value).all():
        raise NumericsError("non-finite loss value")
    return ForwardResult(
        total=total,
        time_nll=lt.value.item(),
        type_ce=ce.value.item(),
        type_probs=probs,
        lam=lam.value.item(),
        gamma=gamma.value.item(),
    )


def loss(params: ModelParams, example: PredictionExample,
         hierarchy: ScaleHierarchy | None = None) -> DiffNode:
    """Combined objective (1 - alpha) * time NLL + alpha * type cross-entropy."""
    return forward(params, example, hierarchy).total


# ---------------------------------------------------------------------------
# Attention cost accounting
# ---------------------------------------------------------------------------


def count_attention_flops(seq_len: int, batch: int, heads: int, head_dim: int,
                          key_set_sizes) -> tuple[int, int]:
    """Score-multiplication counts for restricted vs all-pair attention.

    ``key_set_sizes`` holds one entry per executed query (nested per scale or
    flat): restricted attention costs batch * heads * head_dim * sum(sizes),
    the all-pair reference costs batch * heads * seq_len^2 * head_dim. These
    are accounting figures for the score computation, not hardware FLOPs.
    """
    if seq_len <= 0 or batch <= 0 or heads <= 0 or head_dim <= 0:
        raise ConfigError("count_attention_flops requires positive dimensions")
    flat: list[int] = []
    for entry in key_set_sizes:
        if isinstance(entry, (list, tuple, np.ndarray)):
            flat.extend(int(x) for x in entry)
        else:
            flat.append(int(entry))
    cross = batch * heads * head_dim * sum(flat)
    dense = batch * heads * seq_len * seq_len * head_dim
    return cross, dense


def hierarchy_key_set_sizes(hierarchy: ScaleHierarchy, causal: bool = False) -> list[list[int]]:
    """Key-set size per query per scale, as the encoder executes them."""
    sizes = []
    for s in range(1, hierarchy.num_scales + 1):
        frontier = hierarchy.frontier(s)
        sizes.append(
            [len(hierarchy.key_set(s, node_id, causal=causal)) for node_id in frontier]
        )
    return sizes


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, norm_stats=None, extra: dict | None = None) -> None:
    """Single JSON file: config + named parameter tensors (shape + row-major
    data) + optional normalization stats. Floats round-trip exactly."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "params": {
            name: {"shape": list(node.value.shape), "data": node.value.reshape(-1).tolist()}
            for name, node in sorted(params.all_named().items())
        },
        "norm": norm_stats.to_dict() if norm_stats is not None else None,
    }
    if extra:
        payload["extra"] = extra
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns (params, norm_stats_or_None)."""
    from .events import NormStats

    path = Path(path)
    if not path.exists():
        raise DataError(f"no such checkpoint: {path}")
    payload = json.loads(path.read_text())
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r}")
    config = ModelConfig.from_dict(payload["config"])
    params = init_model_params(config, seed=0)
    named = params.all_named()
    saved = payload["params"]
    if set(saved) != set(named):
        missing = set(named) ^ set(saved)
        raise ConfigError(f"checkpoint parameter names mismatch: {sorted(missing)}")
    for name, entry in saved.items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != named[name].value.shape:
            raise ConfigError(
                f"checkpoint {name!r}: shape {arr.shape} vs expected {named[name].value.shape}"
            )
        named[name].value[...] = arr
    norm = payload.get("norm")
    stats = NormStats.from_dict(norm) if norm else None
    return params, stats
