"""Shared LSTM network with a rare-event head and a GPSR head.

All five architectures share one recurrent trunk and one linear+ReLU
embedding; they differ in which heads and branch layers exist:

    Spv            trunk -> emb -> target head
    EvtGpsr        trunk -> emb -> {target head, GPSR head}
    EvtLLGpsrMTLL  trunk -> emb -> {LL -> target head, shared LL -> GPSR head}
    Embedding      trunk -> emb -> {target head, GPSR head}, trained in two phases
    Residual       Embedding + linear path from x_t added to emb output

Parameters live in a flat ``dict[str, ndarray]`` keyed by block name.
Mini-batches are packed time-major, ``(T, B, ...)``. Masked steps neither
contribute loss nor advance the recurrent state, so padding a sequence (or
inserting a masked step) leaves its loss and gradients unchanged.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from .data_types import EncodedSequence, TaskLayout
from .numkernel import RngStream, relu, sigmoid

KINDS = ("Spv", "EvtGpsr", "EvtLLGpsrMTLL", "Embedding", "Residual")
GPSR_MODES = ("sigmoid", "softmax")
PROB_FLOOR = 1e-12

LSTM_BLOCKS = ("lstm.W", "lstm.U", "lstm.b")
EMB_BLOCKS = ("emb.W", "emb.b")
TARGET_BLOCKS = ("target.a", "target.b")
GPSR_BLOCKS = ("gpsr.A", "gpsr.b")
TARGET_LL_BLOCKS = ("target_ll.W", "target_ll.b")
GPSR_LL_BLOCKS = ("gpsr_ll.W", "gpsr_ll.b")
RESIDUAL_BLOCKS = ("residual.W", "residual.b")
BIAS_BLOCKS = frozenset(
    ("lstm.b", "emb.b", "target.b", "gpsr.b", "target_ll.b", "gpsr_ll.b", "residual.b")
)


@dataclass
class ArchitectureConfig:
    kind: str = "EvtGpsr"
    d_in: int = 60
    hidden: int = 32
    embed: int = 16
    target_branch: int | None = None
    gpsr_branch: int | None = None
    dropout: dict = field(default_factory=dict)
    gpsr_output: str = "sigmoid"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind: unknown architecture {self.kind!r}; expected one of {KINDS}")
        if self.gpsr_output not in GPSR_MODES:
            raise ValueError(f"gpsr_output: expected one of {GPSR_MODES}, got {self.gpsr_output!r}")
        for name in ("d_in", "hidden", "embed"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name}: must be >= 1")
        if self.target_branch is None:
            self.target_branch = self.embed
        if self.gpsr_branch is None:
            self.gpsr_branch = self.embed
        if self.target_branch < 1 or self.gpsr_branch < 1:
            raise ValueError("branch widths must be >= 1")
        self.dropout = {k: float(v) for k, v in dict(self.dropout).items()}
        for layer, rate in self.dropout.items():
            if layer not in ("emb", "target_ll", "gpsr_ll"):
                raise ValueError(f"dropout: unknown layer {layer!r}")
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout.{layer}: rate must lie in [0, 1), got {rate}")

    @property
    def has_gpsr(self) -> bool:
        return self.kind != "Spv"

    @property
    def has_branches(self) -> bool:
        return self.kind == "EvtLLGpsrMTLL"

    @property
    def has_residual(self) -> bool:
        return self.kind == "Residual"

    def rate(self, layer: str) -> float:
        return self.dropout.get(layer, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Network:
    config: ArchitectureConfig
    layout: TaskLayout
    params: dict
    seed: int = 0

    def copy(self) -> "Network":
        return Network(self.config, self.layout, {k: v.copy() for k, v in self.params.items()}, self.seed)

    def block_names(self):
        return list(self.params)


def block_shapes(config: ArchitectureConfig, layout: TaskLayout) -> dict:
    d, h, e = config.d_in, config.hidden, config.embed
    shapes = {
        "lstm.W": (4 * h, d),
        "lstm.U": (4 * h, h),
        "lstm.b": (4 * h,),
        "emb.W": (e, h),
        "emb.b": (e,),
    }
    target_in = e
    gpsr_in = e
    if config.has_branches:
        shapes["target_ll.W"] = (config.target_branch, e)
        shapes["target_ll.b"] = (config.target_branch,)
        shapes["gpsr_ll.W"] = (config.gpsr_branch, e)
        shapes["gpsr_ll.b"] = (config.gpsr_branch,)
        target_in = config.target_branch
        gpsr_in = config.gpsr_branch
    if config.has_residual:
        shapes["residual.W"] = (e, d)
        shapes["residual.b"] = (e,)
    shapes["target.a"] = (1, target_in)
    shapes["target.b"] = (1,)
    if config.has_gpsr:
        shapes["gpsr.A"] = (gpsr_in, layout.total)
        shapes["gpsr.b"] = (layout.total,)
    return shapes


def _fan_in(name: str, shape) -> int:
    # gpsr.A is stored (in, out); every other matrix is (out, in)
    return shape[0] if name == "gpsr.A" else shape[1]


def build_architecture(config: ArchitectureConfig, layout: TaskLayout, seed: int = 0) -> Network:
    """Allocate the parameter blocks for ``config.kind``.

    Matrices are uniform in +-1/sqrt(fan_in), biases start at zero. Each
    block draws from its own stream, so blocks shared between kinds get
    identical values under the same seed.
    """
    if config.kind != "Spv" and layout.n_tasks < 1:
        raise ValueError("GPSR architectures need at least one task")
    root = RngStream(int(seed)).child("init")
    params = {}
    for name, shape in block_shapes(config, layout).items():
        if name in BIAS_BLOCKS:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(_fan_in(name, shape))
            params[name] = root.child(name).generator().uniform(-bound, bound, size=shape)
    return Network(config, layout, params, int(seed))


# --- single-step primitives -------------------------------------------------


def lstm_step(x_t, state, params: dict):
    """One LSTM step on column vectors; returns ``(h_t, c_t)``.

    Gate rows of the stacked weights are ordered input, forget, output, cell.
    """
    W, U, b = params["lstm.W"], params["lstm.U"], params["lstm.b"]
    x_t = np.asarray(x_t, dtype=np.float64).reshape(-1)
    h_prev, c_prev = (np.asarray(s, dtype=np.float64).reshape(-1) for s in state)
    h = U.shape[1]
    if x_t.shape[0] != W.shape[1] or h_prev.shape[0] != h or c_prev.shape[0] != h:
        raise ValueError(
            f"lstm_step shape mismatch: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}, W {W.shape}"
        )
    a = W @ x_t + U @ h_prev + b
    i, f, o = sigmoid(a[:h]), sigmoid(a[h:2 * h]), sigmoid(a[2 * h:3 * h])
    g = np.tanh(a[3 * h:])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t.reshape(-1, 1), c_t.reshape(-1, 1)


def dropout_mask(shape, rate: float, stream: RngStream | None):
    if rate <= 0.0:
        return None
    if not rate < 1.0:
        raise ValueError(f"dropout rate must be < 1, got {rate}")
    if stream is None:
        raise ValueError("train-mode dropout needs a random stream")
    keep = stream.generator().random(shape) >= rate
    return keep / (1.0 - rate)


def embed_state(h_t, params: dict, rate: float = 0.0, mode: str = "eval", rng: RngStream | None = None):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    h_t = np.asarray(h_t, dtype=np.float64).reshape(-1)
    e = relu(params["emb.W"] @ h_t + params["emb.b"])
    if mode == "train":
        if rng is None:
            raise ValueError("train mode requires rng")
        m = dropout_mask(e.shape, rate, rng)
        if m is not None:
            e = e * m
    return e.reshape(-1, 1)


def predict_target(e_t, params: dict) -> float:
    e_t = np.asarray(e_t, dtype=np.float64).reshape(-1)
    z = params["target.a"].reshape(-1) @ e_t + params["target.b"][0]
    return float(sigmoid(np.array([z]))[0])


def gpsr_probabilities(logits, layout: TaskLayout, mode: str) -> np.ndarray:
    """Map GPSR logits (..., C) to per-class probabilities."""
    z = np.asarray(logits, dtype=np.float64)
    if mode == "sigmoid":
        return sigmoid(z)
    if mode != "softmax":
        raise ValueError(f"unknown GPSR output mode {mode!r}")
    out = np.empty_like(z)
    for off, m in zip(layout.offsets, layout.counts):
        block = z[..., off:off + m]
        ex = np.exp(block - block.max(axis=-1, keepdims=True))
        out[..., off:off + m] = ex / ex.sum(axis=-1, keepdims=True)
    return out


def predict_gpsr(e_t, params: dict, layout: TaskLayout, mode: str = "sigmoid") -> np.ndarray:
    e_t = np.asarray(e_t, dtype=np.float64).reshape(-1)
    z = params["gpsr.A"].T @ e_t + params["gpsr.b"]
    return gpsr_probabilities(z, layout, mode)


def target_loss(y_hat: float, y: int) -> float:
    """Binary cross-entropy with the probability clamped to [1e-12, 1 - 1e-12]."""
    q = min(max(float(y_hat), PROB_FLOOR), 1.0 - PROB_FLOOR)
    return float(-(y * np.log(q) + (1 - y) * np.log(1.0 - q)))


def gpsr_loss(probs, targets, layout: TaskLayout) -> float:
    """Mean over tasks of the true-class cross-entropy.

    ``targets`` holds one class index per task; only the true-class term of
    the categorical cross-entropy is nonzero for one-hot targets.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if probs.shape[0] != layout.total or targets.shape[0] != layout.n_tasks:
        raise ValueError(
            f"layout mismatch: {probs.shape[0]} probabilities / {targets.shape[0]} targets "
            f"for {layout.n_tasks} tasks over {layout.total} columns"
        )
    if np.any(targets < 0) or np.any(targets >= layout.counts):
        raise ValueError("class index outside its task's class range")
    p_true = probs[layout.offsets + targets]
    return float(np.sum(-np.log(np.maximum(p_true, PROB_FLOOR))) / layout.n_tasks)


def combined_loss(p: float, err_y, err_x_mean):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"loss weight p must lie in [0, 1], got {p}")
    if p == 1.0:
        return err_y
    if p == 0.0:
        return err_x_mean
    return p * err_y + (1.0 - p) * err_x_mean


# --- batched forward / backward --------------------------------------------


@dataclass
class Batch:
    x: np.ndarray      # (T, B, d_in)
    y: np.ndarray      # (T, B)
    gpsr: np.ndarray   # (T, B, R)
    mask: np.ndarray   # (T, B) bool
    lengths: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        """Per-step loss weights: mean over valid steps, then over sequences."""
        n_valid = self.mask.sum(axis=0)
        if np.any(n_valid == 0):
            raise ValueError("sequence with all steps masked carries no trainable signal")
        return self.mask / (n_valid[None, :] * self.mask.shape[1])


def pack_batch(seqs) -> Batch:
    seqs = list(seqs)
    if not seqs:
        raise ValueError("empty batch")
    T = max(len(s) for s in seqs)
    B = len(seqs)
    d = seqs[0].inputs.shape[1]
    R = seqs[0].gpsr.shape[1]
    x = np.zeros((T, B, d))
    y = np.zeros((T, B))
    g = np.zeros((T, B, R), dtype=np.int64)
    mask = np.zeros((T, B), dtype=bool)
    for b, s in enumerate(seqs):
        n = len(s)
        x[:n, b] = s.inputs
        y[:n, b] = s.labels
        g[:n, b] = s.gpsr
        mask[:n, b] = s.mask
    return Batch(x, y, g, mask, np.array([len(s) for s in seqs]))


def _dropout_streams(rng: RngStream | None):
    if rng is None:
        return {}
    return {layer: rng.child("dropout", layer) for layer in ("emb", "target_ll", "gpsr_ll")}


def forward(net: Network, batch: Batch, p: float = 1.0, mode: str = "eval",
            rng: RngStream | None = None, need_gpsr: bool = True):
    """Forward pass over a packed batch.

    Returns ``(loss, cache)``. ``cache["y_hat"]`` holds (T, B) target
    probabilities. ``p`` weights the target term against the mean GPSR
    term; kinds without a GPSR head always use the target term alone.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"loss weight p must lie in [0, 1], got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg, P, layout = net.config, net.params, net.layout
    x, mask = batch.x, batch.mask
    T, B, d = x.shape
    if d != cfg.d_in:
        raise ValueError(f"input width {d} does not match d_in={cfg.d_in}")
    h = cfg.hidden
    streams = _dropout_streams(rng) if mode == "train" else {}

    # recurrent trunk
    W, U, b = P["lstm.W"], P["lstm.U"], P["lstm.b"]
    xw = (x.reshape(T * B, d) @ W.T).reshape(T, B, 4 * h)
    hs = np.zeros((T, B, h))
    cs = np.zeros((T, B, h))
    gates = np.zeros((T, B, 4 * h))
    tanh_c = np.zeros((T, B, h))
    h_prev = np.zeros((B, h))
    c_prev = np.zeros((B, h))
    for t in range(T):
        a = xw[t] + h_prev @ U.T + b
        act = np.empty_like(a)
        act[:, :3 * h] = sigmoid(a[:, :3 * h])
        act[:, 3 * h:] = np.tanh(a[:, 3 * h:])
        c_new = act[:, h:2 * h] * c_prev + act[:, :h] * act[:, 3 * h:]
        tc = np.tanh(c_new)
        h_new = act[:, 2 * h:3 * h] * tc
        m = mask[t][:, None]
        gates[t] = act
        tanh_c[t] = tc
        h_prev = np.where(m, h_new, h_prev)
        c_prev = np.where(m, c_new, c_prev)
        hs[t] = h_prev
        cs[t] = c_prev

    # shared embedding
    e_pre = hs @ P["emb.W"].T + P["emb.b"]
    e_act = relu(e_pre)
    d_emb = dropout_mask(e_act.shape, cfg.rate("emb"), streams.get("emb")) if mode == "train" else None
    e_out = e_act * d_emb if d_emb is not None else e_act

    cache = dict(hs=hs, cs=cs, gates=gates, tanh_c=tanh_c, e_pre=e_pre, e_out=e_out, d_emb=d_emb, p=p)

    # target branch
    feat_y = e_out
    if cfg.has_branches:
        t_pre = e_out @ P["target_ll.W"].T + P["target_ll.b"]
        t_act = relu(t_pre)
        d_t = dropout_mask(t_act.shape, cfg.rate("target_ll"), streams.get("target_ll")) if mode == "train" else None
        feat_y = t_act * d_t if d_t is not None else t_act
        cache.update(t_pre=t_pre, d_t=d_t)
    if cfg.has_residual:
        feat_y = feat_y + (x.reshape(T * B, d) @ P["residual.W"].T).reshape(T, B, -1) + P["residual.b"]
    z_y = feat_y @ P["target.a"][0] + P["target.b"][0]
    y_hat = sigmoid(z_y)
    one_minus = sigmoid(-z_y)
    yv = batch.y
    err_y = -(yv * np.log(np.maximum(y_hat, PROB_FLOOR)) + (1 - yv) * np.log(np.maximum(one_minus, PROB_FLOOR)))
    cache.update(feat_y=feat_y, z_y=z_y, y_hat=y_hat, one_minus=one_minus, err_y=err_y)

    use_gpsr = cfg.has_gpsr and (need_gpsr or p < 1.0)
    step_loss = err_y
    if use_gpsr:
        feat_g = e_out
        if cfg.has_branches:
            g_pre = e_out @ P["gpsr_ll.W"].T + P["gpsr_ll.b"]
            g_act = relu(g_pre)
            d_g = dropout_mask(g_act.shape, cfg.rate("gpsr_ll"), streams.get("gpsr_ll")) if mode == "train" else None
            feat_g = g_act * d_g if d_g is not None else g_act
            cache.update(g_pre=g_pre, d_g=d_g)
        z_x = feat_g @ P["gpsr.A"] + P["gpsr.b"]
        probs = gpsr_probabilities(z_x, layout, cfg.gpsr_output)
        true_cols = layout.offsets[None, None, :] + batch.gpsr
        p_true = np.take_along_axis(probs, true_cols, axis=-1)
        err_x = np.sum(-np.log(np.maximum(p_true, PROB_FLOOR)), axis=-1) / layout.n_tasks
        cache.update(feat_g=feat_g, probs=probs, true_cols=true_cols, p_true=p_true, err_x=err_x)
        if cfg.has_gpsr:
            step_loss = combined_loss(p, err_y, err_x)
    cache["use_gpsr"] = use_gpsr

    w = batch.weights
    # summing only valid entries keeps the reduction order independent of masked steps
    loss = float(np.sum((w * step_loss)[mask]))
    cache["w"] = w
    return loss, cache


def backward(net: Network, batch: Batch, cache: dict) -> dict:
    """Exact gradients of the batch loss for every parameter block."""
    cfg, P, layout = net.config, net.params, net.layout
    x, mask = batch.x, batch.mask
    T, B, d = x.shape
    h = cfg.hidden
    p = cache["p"] if cfg.has_gpsr else 1.0
    w = cache["w"]
    grads = {}
    valid = mask.reshape(-1)

    def rows(a):
        # valid (t, b) rows only, so masked steps never enter a reduction
        return a.reshape(T * B, -1)[valid]

    # target head: d(-log-lik)/dz = y_hat - y unless the clamp is active
    yv = batch.y
    clamped = np.where(yv == 1, cache["y_hat"] < PROB_FLOOR, cache["one_minus"] < PROB_FLOOR)
    dz_y = np.where(clamped | ~mask, 0.0, cache["y_hat"] - yv) * (w * p)
    feat_y = cache["feat_y"]
    grads["target.a"] = (rows(dz_y)[:, 0] @ rows(feat_y)).reshape(1, -1)
    grads["target.b"] = np.array([rows(dz_y).sum()])
    d_feat_y = dz_y[..., None] * P["target.a"][0]

    if cfg.has_residual:
        grads["residual.W"] = rows(d_feat_y).T @ rows(x)
        grads["residual.b"] = rows(d_feat_y).sum(axis=0)

    if cfg.has_branches:
        d_t_act = d_feat_y * cache["d_t"] if cache["d_t"] is not None else d_feat_y
        d_t_pre = d_t_act * (cache["t_pre"] > 0)
        grads["target_ll.W"] = rows(d_t_pre).T @ rows(cache["e_out"])
        grads["target_ll.b"] = rows(d_t_pre).sum(axis=0)
        d_e_out = d_t_pre @ P["target_ll.W"]
    else:
        d_e_out = d_feat_y

    if cfg.has_gpsr:
        if cache["use_gpsr"]:
            coef = np.where(mask, w * (1.0 - p) / layout.n_tasks, 0.0)[..., None]
            coef = np.where(cache["p_true"] < PROB_FLOOR, 0.0, coef)  # (T, B, R)
            true_cols = cache["true_cols"]
            if cfg.gpsr_output == "sigmoid":
                dz_x = np.zeros_like(cache["probs"])
                np.put_along_axis(dz_x, true_cols, coef * (cache["p_true"] - 1.0), axis=-1)
            else:
                onehot = np.zeros_like(cache["probs"])
                np.put_along_axis(onehot, true_cols, 1.0, axis=-1)
                dz_x = coef[..., layout.column_task] * (cache["probs"] - onehot)
            feat_g = cache["feat_g"]
            grads["gpsr.A"] = rows(feat_g).T @ rows(dz_x)
            grads["gpsr.b"] = rows(dz_x).sum(axis=0)
            d_feat_g = dz_x @ P["gpsr.A"].T
            if cfg.has_branches:
                d_g_act = d_feat_g * cache["d_g"] if cache["d_g"] is not None else d_feat_g
                d_g_pre = d_g_act * (cache["g_pre"] > 0)
                grads["gpsr_ll.W"] = rows(d_g_pre).T @ rows(cache["e_out"])
                grads["gpsr_ll.b"] = rows(d_g_pre).sum(axis=0)
                d_e_out = d_e_out + d_g_pre @ P["gpsr_ll.W"]
            else:
                d_e_out = d_e_out + d_feat_g
        else:
            for name in GPSR_BLOCKS + (GPSR_LL_BLOCKS if cfg.has_branches else ()):
                grads[name] = np.zeros_like(P[name])

    # embedding
    d_e_act = d_e_out * cache["d_emb"] if cache["d_emb"] is not None else d_e_out
    d_e_pre = d_e_act * (cache["e_pre"] > 0)
    hs = cache["hs"]
    grads["emb.W"] = rows(d_e_pre).T @ rows(hs)
    grads["emb.b"] = rows(d_e_pre).sum(axis=0)
    d_hs = d_e_pre @ P["emb.W"]

    # backpropagation through time
    U = P["lstm.U"]
    gates, cs, tanh_c = cache["gates"], cache["cs"], cache["tanh_c"]
    d_a_all = np.zeros((T, B, 4 * h))
    h_prev_all = np.zeros((T, B, h))
    h_prev_all[1:] = hs[:-1]
    dh_next = np.zeros((B, h))
    dc_next = np.zeros((B, h))
    for t in range(T - 1, -1, -1):
        m = mask[t][:, None]
        dh = d_hs[t] + dh_next
        act = gates[t]
        i, f, o, g = act[:, :h], act[:, h:2 * h], act[:, 2 * h:3 * h], act[:, 3 * h:]
        c_prev = cs[t - 1] if t > 0 else np.zeros((B, h))
        tc = tanh_c[t]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = np.empty((B, 4 * h))
        da[:, :h] = dc * g * i * (1.0 - i)
        da[:, h:2 * h] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * h:3 * h] = dh * tc * o * (1.0 - o)
        da[:, 3 * h:] = dc * i * (1.0 - g * g)
        da = np.where(m, da, 0.0)
        d_a_all[t] = da
        dh_next = np.where(m, da @ U, dh)
        dc_next = np.where(m, dc * f, dc_next)
    flat_da = rows(d_a_all)
    grads["lstm.W"] = flat_da.T @ rows(x)
    grads["lstm.U"] = flat_da.T @ rows(h_prev_all)
    grads["lstm.b"] = flat_da.sum(axis=0)

    for name, g_ in grads.items():
        if not np.all(np.isfinite(g_)):
            raise FloatingPointError(f"non-finite gradient in block {name!r}")
    return {name: grads[name] for name in P}


def loss_and_grads(net: Network, batch: Batch, p: float, mode: str = "train", rng: RngStream | None = None):
    loss, cache = forward(net, batch, p=p, mode=mode, rng=rng)
    return loss, backward(net, batch, cache)


def forward_sequence(seq: EncodedSequence, net: Network, p: float = 1.0, mode: str = "eval",
                     rng: RngStream | None = None):
    """Per-step outputs and the mean step loss over the valid steps of one sequence."""
    if len(seq) == 0:
        raise ValueError("empty sequence")
    if seq.n_valid == 0:
        raise ValueError(f"sequence {seq.admission_id}: all steps masked")
    batch = pack_batch([seq])
    loss, cache = forward(net, batch, p=p, mode=mode, rng=rng)
    outputs = []
    for t in range(len(seq)):
        out = dict(
            h=cache["hs"][t, 0].copy(),
            e=cache["e_out"][t, 0].copy(),
            y_hat=float(cache["y_hat"][t, 0]),
        )
        if cache["use_gpsr"]:
            out["x_hat"] = cache["probs"][t, 0].copy()
        outputs.append(out)
    return outputs, loss


def backward_sequence(seq: EncodedSequence, net: Network, p: float = 1.0, mode: str = "train",
                      rng: RngStream | None = None) -> dict:
    batch = pack_batch([seq])
    _, cache = forward(net, batch, p=p, mode=mode, rng=rng)
    return backward(net, batch, cache)


def predict_scores(net: Network, seqs, chunk: int = 256):
    """Eval-mode target probabilities and labels pooled over valid steps."""
    scores, labels = [], []
    seqs = list(seqs)
    for k in range(0, len(seqs), chunk):
        part = seqs[k:k + chunk]
        batch = pack_batch(part)
        _, cache = forward_scores_only(net, batch)
        m = batch.mask
        # column-major walk keeps each sequence's steps contiguous
        scores.append(cache["y_hat"].T[m.T])
        labels.append(batch.y.T[m.T])
    return np.concatenate(scores), np.concatenate(labels).astype(np.int8)


def forward_scores_only(net: Network, batch: Batch):
    # all-masked sequences (e.g. fully held out) still get scored but have no valid steps
    safe = Batch(batch.x, batch.y, batch.gpsr, batch.mask | (batch.mask.sum(axis=0) == 0)[None, :], batch.lengths)
    loss, cache = forward(net, safe, p=1.0, mode="eval", need_gpsr=False)
    return loss, cache


def clone_params(params: dict) -> dict:
    return copy.deepcopy(params)
