"""Hybrid graph-attention link predictor.

Node features pass through a transformer-style graph convolution and a GATv2
layer; link channel features pass through a LayerNorm MLP; a decoder scores
a candidate pair from the two node embeddings and the pair's processed edge
features. Pairs without a physical link (negatives, held-out candidates) get
the mean processed feature vector of the message-passing links.

Everything runs on float64 torch tensors. Parameters live in
:class:`ModelParams`, an immutable mapping of name -> numpy array, so they can
be checkpointed and compared bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from ._validation import check_positive_int, check_real

CHECKPOINT_VERSION = 1
DTYPE = torch.float64


@dataclass(frozen=True)
class ModelConfig:
    d_in: int = 4
    d_e: int = 5
    hidden: int = 64
    heads: int = 4
    dropout: float = 0.2
    leaky_relu_slope: float = 0.2
    layernorm_epsilon: float = 1e-5
    symmetric_decoder: bool = False
    # one keep/drop draw per row instead of per element
    dropout_per_row: bool = True

    def __post_init__(self):
        for name in ("d_in", "d_e", "hidden", "heads"):
            check_positive_int(getattr(self, name), name)
        if self.hidden % self.heads:
            raise ValueError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        check_real(self.dropout, "dropout", low=0, high=1, high_inclusive=False)
        check_real(self.leaky_relu_slope, "leaky_relu_slope", low=0)
        check_real(self.layernorm_epsilon, "layernorm_epsilon", low=0, low_inclusive=False)

    @property
    def head_dim(self):
        return self.hidden // self.heads


def param_shapes(cfg: ModelConfig):
    h, c = cfg.hidden, cfg.head_dim
    return {
        "transformer.W_Q": (cfg.d_in, h), "transformer.b_Q": (h,),
        "transformer.W_K": (cfg.d_in, h), "transformer.b_K": (h,),
        "transformer.W_V": (cfg.d_in, h), "transformer.b_V": (h,),
        "gatv2.W_src": (h, h), "gatv2.W_dst": (h, h),
        "gatv2.a": (cfg.heads, c), "gatv2.bias": (h,),
        "edge_mlp.W_1": (cfg.d_e, h), "edge_mlp.b_1": (h,),
        "edge_mlp.gamma": (h,), "edge_mlp.beta": (h,),
        "edge_mlp.W_2": (h, h), "edge_mlp.b_2": (h,),
        "decoder.W_3": (3 * h, h), "decoder.b_3": (h,),
        "decoder.gamma": (h,), "decoder.beta": (h,),
        "decoder.W_4": (h, 1), "decoder.b_4": (1,),
    }


class ModelParams:
    """Named float64 weight arrays; treated as an immutable value."""

    def __init__(self, arrays, config: ModelConfig):
        self.config = config
        shapes = param_shapes(config)
        if set(arrays) != set(shapes):
            missing = set(shapes) - set(arrays)
            extra = set(arrays) - set(shapes)
            raise ValueError(f"parameter names mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
        self._arrays = {}
        for name in shapes:
            arr = np.array(arrays[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise ValueError(f"{name}: expected shape {shapes[name]}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            self._arrays[name] = arr

    def __getitem__(self, name):
        return self._arrays[name]

    def __iter__(self):
        return iter(self._arrays)

    def items(self):
        return self._arrays.items()

    def with_arrays(self, arrays):
        merged = dict(self._arrays)
        merged.update(arrays)
        return ModelParams(merged, self.config)

    def to_torch(self, requires_grad=False):
        return {k: torch.tensor(v, dtype=DTYPE, requires_grad=requires_grad) for k, v in self._arrays.items()}

    @classmethod
    def from_torch(cls, tensors, config):
        return cls({k: t.detach().cpu().numpy().copy() for k, t in tensors.items()}, config)

    def __eq__(self, other):
        if not isinstance(other, ModelParams) or other.config != self.config:
            return NotImplemented
        return all(np.array_equal(self[k], other[k]) for k in self)

    def num_parameters(self):
        return sum(a.size for a in self._arrays.values())


def init_params(cfg: ModelConfig, seed) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit LayerNorm gains."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.split(".")[1]
        if leaf.startswith("W_"):
            bound = 1.0 / math.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        elif leaf == "a":
            bound = 1.0 / math.sqrt(shape[1])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        elif leaf == "gamma":
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = np.zeros(shape)
    return ModelParams(arrays, cfg)


# -- building blocks -------------------------------------------------------


def _with_self_loops(edge_index, n):
    loops = torch.arange(n, dtype=torch.long)
    src = torch.cat([edge_index[0], loops])
    dst = torch.cat([edge_index[1], loops])
    return src, dst


def segment_softmax(logits, index, num_segments):
    """Softmax of ``logits`` (E, H) within groups sharing ``index`` (E,)."""
    heads = logits.shape[1]
    seg_max = torch.full((num_segments, heads), -math.inf, dtype=logits.dtype)
    seg_max = seg_max.scatter_reduce(0, index[:, None].expand(-1, heads), logits, reduce="amax", include_self=True)
    ex = torch.exp(logits - seg_max[index])
    denom = torch.zeros((num_segments, heads), dtype=logits.dtype).index_add(0, index, ex)
    return ex / denom[index]


def _check_finite(t, name):
    if not bool(torch.isfinite(t).all()):
        raise ValueError(f"{name} contains non-finite values")


def _as_index(edge_index):
    if isinstance(edge_index, torch.Tensor):
        return edge_index.long().reshape(2, -1)
    return torch.as_tensor(np.asarray(edge_index, dtype=np.int64).reshape(2, -1))


def transformer_conv(X, edge_index, params, cfg: ModelConfig, return_attention=False):
    """Multi-head scaled dot-product attention over in-neighbours plus self, then ReLU."""
    _check_finite(X, "X")
    n = X.shape[0]
    H, C = cfg.heads, cfg.head_dim
    src, dst = _with_self_loops(_as_index(edge_index), n)
    q = (X @ params["transformer.W_Q"] + params["transformer.b_Q"]).view(n, H, C)
    k = (X @ params["transformer.W_K"] + params["transformer.b_K"]).view(n, H, C)
    v = (X @ params["transformer.W_V"] + params["transformer.b_V"]).view(n, H, C)
    scores = (q[dst] * k[src]).sum(-1) / math.sqrt(C)
    alpha = segment_softmax(scores, dst, n)
    out = torch.zeros((n, H, C), dtype=X.dtype).index_add(0, dst, alpha[..., None] * v[src])
    H1 = torch.relu(out.reshape(n, H * C))
    if return_attention:
        return H1, (src, dst, alpha)
    return H1


def gatv2_conv(H1, edge_index, params, cfg: ModelConfig, return_attention=False):
    """GATv2 attention ``a^T LeakyReLU(W_dst h_i + W_src h_j)`` with K concatenated heads and ELU."""
    _check_finite(H1, "H1")
    n = H1.shape[0]
    H, C = cfg.heads, cfg.head_dim
    src, dst = _with_self_loops(_as_index(edge_index), n)
    xl = (H1 @ params["gatv2.W_src"]).view(n, H, C)
    xr = (H1 @ params["gatv2.W_dst"]).view(n, H, C)
    e = torch.nn.functional.leaky_relu(xr[dst] + xl[src], negative_slope=cfg.leaky_relu_slope)
    logits = (e * params["gatv2.a"]).sum(-1)
    alpha = segment_softmax(logits, dst, n)
    out = torch.zeros((n, H, C), dtype=H1.dtype).index_add(0, dst, alpha[..., None] * xl[src])
    H2 = torch.nn.functional.elu(out.reshape(n, H * C) + params["gatv2.bias"])
    if return_attention:
        return H2, (src, dst, alpha)
    return H2


def layer_norm(x, gamma, beta, eps):
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return gamma * (x - mu) / torch.sqrt(var + eps) + beta


def dropout(x, rate, training, generator=None, per_row=False):
    if not training or rate == 0:
        return x
    shape = (x.shape[0], 1) if per_row else x.shape
    keep = torch.rand(shape, generator=generator, dtype=x.dtype) >= rate
    return x * keep / (1.0 - rate)


def edge_mlp(E, params, cfg: ModelConfig, training=False, generator=None):
    h = E @ params["edge_mlp.W_1"] + params["edge_mlp.b_1"]
    h = layer_norm(h, params["edge_mlp.gamma"], params["edge_mlp.beta"], cfg.layernorm_epsilon)
    h = dropout(torch.relu(h), cfg.dropout, training, generator, cfg.dropout_per_row)
    return h @ params["edge_mlp.W_2"] + params["edge_mlp.b_2"]


def impute_negative_edge_features(E_pos):
    """Mean processed feature row of the existing links."""
    if E_pos.shape[0] == 0:
        raise ValueError("mean edge imputation needs at least one positive edge")
    return E_pos.mean(dim=0)


def decode(z_u, z_v, e_uv, params, cfg: ModelConfig, training=False, generator=None):
    """Logit for each pair from ``[z_u || z_v || e_uv]`` (order matters)."""
    if z_u.shape != z_v.shape or z_u.shape[-1] + z_v.shape[-1] + e_uv.shape[-1] != params["decoder.W_3"].shape[0]:
        raise ValueError(
            f"decoder input dims {tuple(z_u.shape)}, {tuple(z_v.shape)}, {tuple(e_uv.shape)} "
            f"do not match W_3 {tuple(params['decoder.W_3'].shape)}"
        )
    h = torch.cat([z_u, z_v, e_uv], dim=-1) @ params["decoder.W_3"] + params["decoder.b_3"]
    h = layer_norm(h, params["decoder.gamma"], params["decoder.beta"], cfg.layernorm_epsilon)
    h = dropout(torch.relu(h), cfg.dropout, training, generator, cfg.dropout_per_row)
    return (h @ params["decoder.W_4"] + params["decoder.b_4"]).squeeze(-1)


def bce_loss(logits, labels):
    """Mean binary cross-entropy on logits in the overflow-safe form."""
    as_numpy = not isinstance(logits, torch.Tensor)
    s = torch.as_tensor(np.asarray(logits, dtype=np.float64) if as_numpy else logits, dtype=DTYPE)
    y = torch.as_tensor(np.asarray(labels, dtype=np.float64) if not isinstance(labels, torch.Tensor) else labels, dtype=DTYPE)
    if s.numel() == 0:
        raise ValueError("bce_loss on an empty batch")
    if s.shape != y.shape:
        raise ValueError(f"logits shape {tuple(s.shape)} != labels shape {tuple(y.shape)}")
    loss = torch.nn.functional.binary_cross_entropy_with_logits(s, y)
    return float(loss) if as_numpy else loss


# -- full model ------------------------------------------------------------


@dataclass
class Batch:
    """Inputs for one forward pass.

    ``message_pairs``/``message_features`` are the links used for message
    passing (undirected, one row each); ``query_pairs`` are scored.
    ``query_features`` rows are used where ``query_has_edge`` is set, the
    imputed mean everywhere else.
    """

    node_features: np.ndarray
    message_pairs: np.ndarray
    message_features: np.ndarray
    query_pairs: np.ndarray
    query_features: np.ndarray
    query_has_edge: np.ndarray
    labels: np.ndarray | None = None

    def tensors(self):
        from .dataset import directed_edge_index

        return dict(
            X=torch.as_tensor(self.node_features, dtype=DTYPE),
            edge_index=torch.as_tensor(directed_edge_index(self.message_pairs), dtype=torch.long),
            E_msg=torch.as_tensor(np.asarray(self.message_features, dtype=np.float64), dtype=DTYPE),
            pairs=torch.as_tensor(np.asarray(self.query_pairs, dtype=np.int64).reshape(-1, 2), dtype=torch.long),
            E_query=torch.as_tensor(np.asarray(self.query_features, dtype=np.float64), dtype=DTYPE),
            has_edge=torch.as_tensor(np.asarray(self.query_has_edge, dtype=bool)),
        )


def embed(params, tensors, cfg):
    H1 = transformer_conv(tensors["X"], tensors["edge_index"], params, cfg)
    return gatv2_conv(H1, tensors["edge_index"], params, cfg)


def forward(params, batch: Batch, cfg: ModelConfig, training=False, generator=None):
    """Logits for ``batch.query_pairs``; ``params`` is a dict of torch tensors."""
    t = batch.tensors()
    Z = embed(params, t, cfg)
    pairs = t["pairs"]
    if pairs.shape[0] == 0:
        return torch.zeros(0, dtype=DTYPE)
    E_msg = edge_mlp(t["E_msg"], params, cfg, training, generator)
    e_neg = impute_negative_edge_features(E_msg)
    has_edge = t["has_edge"]
    E_q = e_neg.expand(pairs.shape[0], -1)
    if bool(has_edge.any()):
        E_real = edge_mlp(t["E_query"][has_edge], params, cfg, training, generator)
        E_q = E_q.clone()
        E_q[has_edge] = E_real
    z_u, z_v = Z[pairs[:, 0]], Z[pairs[:, 1]]
    logits = decode(z_u, z_v, E_q, params, cfg, training, generator)
    if cfg.symmetric_decoder:
        logits = 0.5 * (logits + decode(z_v, z_u, E_q, params, cfg, training, generator))
    return logits


def loss_fn(params, batch: Batch, cfg: ModelConfig, training=False, generator=None):
    return bce_loss(forward(params, batch, cfg, training, generator), torch.as_tensor(batch.labels, dtype=DTYPE))


def gradients(params: ModelParams, batch: Batch, training=False, seed=None):
    """Exact gradient of the BCE loss w.r.t. every parameter, as numpy arrays.

    With ``training=True`` the dropout masks are drawn from a generator seeded
    by ``seed``, so repeated calls see the same masks.
    """
    cfg = params.config
    tensors = params.to_torch(requires_grad=True)
    gen = None
    if training:
        gen = torch.Generator().manual_seed(int(seed or 0))
    loss = loss_fn(tensors, batch, cfg, training, gen)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {float(loss.detach())}")
    loss.backward()
    return float(loss.detach()), {k: t.grad.detach().numpy().copy() for k, t in tensors.items()}


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, params: ModelParams, extra=None):
    meta = {
        "format": "qkdnet-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "extra": extra or {},
    }
    arrays = {f"param/{k}": np.ascontiguousarray(v) for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path):
    """Return ``(params, extra)`` from a file written by :func:`save_checkpoint`."""
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != "qkdnet-checkpoint":
            raise ValueError(f"{path} is not a qkdnet checkpoint")
        if meta["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {meta['version']} is newer than supported")
        cfg = ModelConfig(**meta["config"])
        arrays = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    return ModelParams(arrays, cfg), meta.get("extra", {})
