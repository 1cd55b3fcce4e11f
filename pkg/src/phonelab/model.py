"""Student/teacher network: CNN waveform encoder, pre-norm Transformer,
span masking, the cosine-similarity prediction head, the CTC head, and
checkpointing.

Parameters live in a flat name -> float64 array dict. Forward passes are
assembled as autodiff graphs whose leaves are the parameter names, so one
`backward` call yields every parameter gradient.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Graph, Var, eval_forward
from . import tensorio


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    cnn_layers: tuple[tuple[int, int, int], ...] = ((32, 10, 10), (32, 16, 8), (64, 4, 4))
    transformer_layers: int = 2
    attn_heads: int = 4
    attn_dim: int = 64
    ffn_dim: int = 256
    proj_dim: int = 32
    codebook_size: int = 16
    temperature: float = 0.1
    mask_prob: float = 0.08
    mask_span: int = 10
    dropout: float = 0.0
    # the teacher's joint-objective CTC weight; recorded for provenance, the
    # attention branch is not part of this artifact
    ctc_weight: float = 0.1

    def __post_init__(self):
        if self.attn_dim % self.attn_heads:
            raise ModelError(f"attn_dim {self.attn_dim} not divisible by {self.attn_heads} heads")
        if self.codebook_size < 2:
            raise ModelError("codebook_size must be >= 2")
        if self.temperature <= 0:
            raise ModelError("temperature must be positive")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ModelError("mask_prob must be in [0, 1]")
        if self.mask_span < 1:
            raise ModelError("mask_span must be >= 1")
        if self.total_stride <= 0:
            raise ModelError("CNN strides must be positive")
        if self.cnn_layers[-1][0] != self.attn_dim:
            raise ModelError(
                f"last CNN channel count {self.cnn_layers[-1][0]} must equal attn_dim {self.attn_dim}"
            )

    @property
    def total_stride(self) -> int:
        out = 1
        for _, _, s in self.cnn_layers:
            out *= s
        return out

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for _, k, s in self.cnn_layers:
            rf += (k - 1) * jump
            jump *= s
        return rf

    def frame_count(self, n_samples: int) -> int:
        t = n_samples
        for _, k, s in self.cnn_layers:
            if t < k:
                raise ModelError(f"input too short: {n_samples} samples < receptive field {self.receptive_field}")
            t = (t - k) // s + 1
        return t

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_layers"] = [list(l) for l in self.cnn_layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["cnn_layers"] = tuple(tuple(l) for l in d["cnn_layers"])
        return cls(**d)


DEFAULT_MODEL_CONFIG = ModelConfig()


# -- parameter initialization ----------------------------------------------------


def init_encoder_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    cin = 1
    for i, (cout, k, _) in enumerate(cfg.cnn_layers):
        p[f"cnn.{i}.w"] = rng.normal(0.0, 1.0 / np.sqrt(cin * k), size=(cout, cin, k))
        p[f"cnn.{i}.b"] = np.zeros((cout, 1))
        cin = cout
    d, f = cfg.attn_dim, cfg.ffn_dim
    for i in range(cfg.transformer_layers):
        pre = f"enc.{i}"
        p[f"{pre}.ln1.g"] = np.ones(d)
        p[f"{pre}.ln1.b"] = np.zeros(d)
        for nm in ("wq", "wk", "wv", "wo"):
            p[f"{pre}.attn.{nm}"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
        # no key bias: softmax is invariant to a constant shift of the keys,
        # so it would be a dead parameter with an exactly-zero gradient
        for nm in ("bq", "bv", "bo"):
            p[f"{pre}.attn.{nm}"] = np.zeros(d)
        p[f"{pre}.ln2.g"] = np.ones(d)
        p[f"{pre}.ln2.b"] = np.zeros(d)
        p[f"{pre}.ffn.w1"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, f))
        p[f"{pre}.ffn.b1"] = np.zeros(f)
        p[f"{pre}.ffn.w2"] = rng.normal(0.0, 1.0 / np.sqrt(f), size=(f, d))
        p[f"{pre}.ffn.b2"] = np.zeros(d)
    p["final_ln.g"] = np.ones(d)
    p["final_ln.b"] = np.zeros(d)
    p["mask_emb"] = rng.normal(0.0, 0.1, size=(1, d))
    return p


def init_prediction_head(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "head.proj": rng.normal(0.0, 1.0 / np.sqrt(cfg.attn_dim), size=(cfg.proj_dim, cfg.attn_dim)),
        "head.emb": rng.normal(0.0, 1.0 / np.sqrt(cfg.proj_dim), size=(cfg.codebook_size, cfg.proj_dim)),
    }


def init_ctc_head(cfg: ModelConfig, vocab: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "ctc.w": rng.normal(0.0, 1.0 / np.sqrt(cfg.attn_dim), size=(cfg.attn_dim, vocab)),
        "ctc.b": np.zeros(vocab),
    }


# -- positional encodings ------------------------------------------------------

_POSENC_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sinusoidal_positions(t_len: int, dim: int) -> np.ndarray:
    key = (t_len, dim)
    if key not in _POSENC_CACHE:
        pos = np.arange(t_len)[:, None]
        i = np.arange(dim // 2)[None, :]
        angle = pos / np.power(10000.0, 2.0 * i / dim)
        pe = np.zeros((t_len, dim))
        pe[:, 0::2] = np.sin(angle)
        pe[:, 1::2] = np.cos(angle)
        _POSENC_CACHE[key] = pe
    return _POSENC_CACHE[key]


# -- masking ---------------------------------------------------------------------


def mask_from_starts(starts, span: int, t_len: int) -> np.ndarray:
    """Union of [s, min(s+span, T)) over starts, as a sorted unique index array."""
    idx: set[int] = set()
    for s in starts:
        idx.update(range(s, min(s + span, t_len)))
    return np.array(sorted(idx), dtype=np.int64)


def sample_mask(t_len: int, p: float, span: int, rng: np.random.Generator) -> np.ndarray:
    """round(p*T) distinct start positions, spans clipped at T."""
    k = int(round(p * t_len))
    if t_len <= 0 or k <= 0:
        return np.array([], dtype=np.int64)
    starts = rng.choice(t_len, size=k, replace=False)
    return mask_from_starts(starts.tolist(), span, t_len)


def serialize_mask(mask: np.ndarray) -> bytes:
    return (" ".join(str(int(i)) for i in mask)).encode("ascii")


def apply_mask(features: np.ndarray, mask: np.ndarray, mask_embedding: np.ndarray) -> np.ndarray:
    """Rows in `mask` replaced by the mask embedding; all others copied."""
    out = features.copy()
    if mask.size:
        out[mask] = np.asarray(mask_embedding).reshape(-1)
    return out


# -- graph builders ------------------------------------------------------------


def param_vars(g: Graph, params: dict[str, np.ndarray], names=None) -> dict[str, Var]:
    return {n: g.input(n, params[n].shape) for n in (names if names is not None else params)}


def build_cnn(g: Graph, pv: dict[str, Var], cfg: ModelConfig, wave: Var) -> Var:
    """(1, n) waveform -> (T, attn_dim) frame features; GELU between layers."""
    x = wave
    last = len(cfg.cnn_layers) - 1
    for i in range(len(cfg.cnn_layers)):
        _, _, stride = cfg.cnn_layers[i]
        x = g.add(g.conv1d(x, pv[f"cnn.{i}.w"], stride), pv[f"cnn.{i}.b"])
        if i != last:
            x = g.gelu(x)
    return g.transpose(x)


def _dropout(g: Graph, x: Var, rate: float, rng: np.random.Generator | None) -> Var:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(size=x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return g.mul(x, g.const(keep))


def build_transformer(
    g: Graph,
    pv: dict[str, Var],
    cfg: ModelConfig,
    x: Var,
    use_positions: bool = True,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[Var, list[Var]]:
    """Pre-norm Transformer encoder; returns (final LN output, per-block outputs)."""
    t_len, d = x.shape
    heads, dh = cfg.attn_heads, cfg.attn_dim // cfg.attn_heads
    if use_positions:
        x = g.add(x, g.const(sinusoidal_positions(t_len, d)))
    block_outputs: list[Var] = []
    for i in range(cfg.transformer_layers):
        pre = f"enc.{i}"
        h = g.layer_norm(x, pv[f"{pre}.ln1.g"], pv[f"{pre}.ln1.b"])
        q = g.add(g.matmul(h, pv[f"{pre}.attn.wq"]), pv[f"{pre}.attn.bq"])
        k = g.matmul(h, pv[f"{pre}.attn.wk"])
        v = g.add(g.matmul(h, pv[f"{pre}.attn.wv"]), pv[f"{pre}.attn.bv"])
        head_outs = []
        for hd in range(heads):
            lo, hi = hd * dh, (hd + 1) * dh
            qh = g.slice_cols(q, lo, hi)
            kh = g.slice_cols(k, lo, hi)
            vh = g.slice_cols(v, lo, hi)
            scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / np.sqrt(dh))
            head_outs.append(g.matmul(g.softmax(scores), vh))
        attn = g.concat_cols(head_outs) if heads > 1 else head_outs[0]
        attn = g.add(g.matmul(attn, pv[f"{pre}.attn.wo"]), pv[f"{pre}.attn.bo"])
        x = g.add(x, _dropout(g, attn, cfg.dropout, dropout_rng))
        h2 = g.layer_norm(x, pv[f"{pre}.ln2.g"], pv[f"{pre}.ln2.b"])
        ffn = g.gelu(g.add(g.matmul(h2, pv[f"{pre}.ffn.w1"]), pv[f"{pre}.ffn.b1"]))
        ffn = g.add(g.matmul(ffn, pv[f"{pre}.ffn.w2"]), pv[f"{pre}.ffn.b2"])
        x = g.add(x, _dropout(g, ffn, cfg.dropout, dropout_rng))
        block_outputs.append(x)
    out = g.layer_norm(x, pv["final_ln.g"], pv["final_ln.b"])
    return out, block_outputs


def build_masked_input(g: Graph, cfg: ModelConfig, features: Var, mask: np.ndarray,
                       mask_emb: Var) -> Var:
    """Replace masked rows with the learned embedding, in-graph."""
    t_len = features.shape[0]
    if mask.size == 0:
        return features
    sel = np.zeros((t_len, 1))
    sel[mask] = 1.0
    keep = 1.0 - sel
    return g.add(g.mul(features, g.const(keep)), g.matmul(g.const(sel), mask_emb))


def build_prediction_head(g: Graph, pv: dict[str, Var], cfg: ModelConfig, o: Var) -> tuple[Var, Var]:
    """Cosine-similarity codeword head: returns (probabilities, log-probabilities)."""
    proj = g.matmul(o, g.transpose(pv["head.proj"]))
    sims = g.cosine_sim(proj, pv["head.emb"])
    logits = g.scale(sims, 1.0 / cfg.temperature)
    return g.softmax(logits), g.log_softmax(logits)


def build_ctc_head(g: Graph, pv: dict[str, Var], o: Var) -> Var:
    """Linear + log-softmax per frame -> (T, V) log-posteriorgram."""
    return g.log_softmax(g.add(g.matmul(o, pv["ctc.w"]), pv["ctc.b"]))


def predict_distribution(o_t: np.ndarray, proj: np.ndarray, emb: np.ndarray,
                         temperature: float) -> np.ndarray:
    """Distribution over codewords for one frame vector (graph-backed)."""
    g = Graph()
    ov = g.input("o", (1, proj.shape[1]))
    pj = g.input("proj", proj.shape)
    em = g.input("emb", emb.shape)
    sims = g.cosine_sim(g.matmul(ov, g.transpose(pj)), em)
    probs = g.softmax(g.scale(sims, 1.0 / temperature))
    ex = eval_forward(g, {"o": np.asarray(o_t)[None, :], "proj": proj, "emb": emb})
    return ex.value(probs)[0]


# -- checkpointing ---------------------------------------------------------------


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: ModelConfig
    step: int
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        tensorio.save_tensors(
            path,
            self.tensors,
            meta={"config": self.config.to_dict(), "step": self.step, "extra": self.meta},
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        tensors, meta = tensorio.load_tensors(path)
        return cls(
            tensors=tensors,
            config=ModelConfig.from_dict(meta["config"]),
            step=int(meta["step"]),
            meta=meta.get("extra", {}),
        )


def average_checkpoints(checkpoints: list[Checkpoint]) -> Checkpoint:
    """Elementwise mean of every tensor; step is the max of the inputs."""
    if not checkpoints:
        raise ModelError("no checkpoints to average")
    first = checkpoints[0]
    names = sorted(first.tensors)
    for other in checkpoints[1:]:
        if other.config != first.config:
            raise ModelError("checkpoint configs differ")
        if sorted(other.tensors) != names:
            extra = set(other.tensors).symmetric_difference(names)
            raise ModelError(f"tensor {sorted(extra)[0]!r}: missing from one checkpoint")
        for n in names:
            if other.tensors[n].shape != first.tensors[n].shape:
                raise ModelError(f"tensor {n!r}: shape mismatch")
    avg = {
        n: np.mean([c.tensors[n] for c in checkpoints], axis=0) for n in names
    }
    return Checkpoint(
        tensors=avg,
        config=first.config,
        step=max(c.step for c in checkpoints),
        meta=dict(first.meta),
    )


# -- forward-only inference -------------------------------------------------------


def encoder_forward(params: dict[str, np.ndarray], cfg: ModelConfig, samples: np.ndarray,
                    layer: int | None = None) -> np.ndarray:
    """No-mask forward pass; `layer` (1-based) selects a transformer block output."""
    g = Graph()
    names = [n for n in params if n.startswith(("cnn.", "enc.", "final_ln."))]
    pv = param_vars(g, params, names)
    wave = g.input("wave", (1, samples.size))
    frames = build_cnn(g, pv, cfg, wave)
    out, blocks = build_transformer(g, pv, cfg, frames)
    if layer is not None:
        if not 1 <= layer <= cfg.transformer_layers:
            raise ModelError(f"layer {layer} out of range [1, {cfg.transformer_layers}]")
        target = blocks[layer - 1]
    else:
        target = out
    inputs = {n: params[n] for n in names}
    inputs["wave"] = samples[None, :]
    return eval_forward(g, inputs).value(target)


def posteriorgram(params: dict[str, np.ndarray], cfg: ModelConfig, samples: np.ndarray) -> np.ndarray:
    """Waveform -> (T, V) CTC log-posteriorgram, no masking."""
    g = Graph()
    names = [n for n in params if n.startswith(("cnn.", "enc.", "final_ln.", "ctc."))]
    pv = param_vars(g, params, names)
    wave = g.input("wave", (1, samples.size))
    frames = build_cnn(g, pv, cfg, wave)
    out, _ = build_transformer(g, pv, cfg, frames)
    logp = build_ctc_head(g, pv, out)
    inputs = {n: params[n] for n in names}
    inputs["wave"] = samples[None, :]
    return eval_forward(g, inputs).value(logp)
