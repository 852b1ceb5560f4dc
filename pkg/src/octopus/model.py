"""Encoder-decoder transformer: shared embeddings, multi-head attention with
bucketed relative-position bias, pre-norm residual blocks with RMS
normalization and no biases, tied output projection.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"OCTO1"


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    relpos_num_buckets: int = 32
    relpos_max_distance: int = 128
    dropout_rate: float = 0.1
    max_seq_len: int = 128

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_heads", "d_ff", "relpos_num_buckets",
                     "relpos_max_distance", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_enc_layers < 0 or self.n_dec_layers < 0:
            raise ValueError("layer counts must be non-negative")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


def relative_position_bucket(
    rel: int, bidirectional: bool, num_buckets: int = 32, max_distance: int = 128
) -> int:
    """Bucket a relative position (key index minus query index).

    Small offsets get exact buckets, larger ones share logarithmically
    spaced buckets up to max_distance, everything further clamps to the
    last bucket. Bidirectional mode spends half the buckets on the
    positive side via an offset.
    """
    if bidirectional and num_buckets % 2 != 0:
        raise ValueError("num_buckets must be even when bidirectional")
    bucket = 0
    n = num_buckets
    if bidirectional:
        n //= 2
        if rel > 0:
            bucket += n
        rel = abs(rel)
    else:
        rel = -min(rel, 0)
    max_exact = n // 2
    if rel < max_exact:
        return bucket + rel
    large = max_exact + int(
        math.log(rel / max_exact) / math.log(max_distance / max_exact) * (n - max_exact)
    )
    return bucket + min(large, n - 1)


def _bucket_matrix(
    q_len: int, k_len: int, bidirectional: bool, num_buckets: int, max_distance: int
) -> np.ndarray:
    """Vectorized relative_position_bucket over a (q_len, k_len) grid."""
    ctx = np.arange(q_len)[:, None]
    mem = np.arange(k_len)[None, :]
    rel = mem - ctx
    bucket = np.zeros_like(rel)
    n = num_buckets
    if bidirectional:
        n //= 2
        bucket += (rel > 0).astype(np.int64) * n
        rel = np.abs(rel)
    else:
        rel = -np.minimum(rel, 0)
    max_exact = n // 2
    is_small = rel < max_exact
    with np.errstate(divide="ignore"):
        large = max_exact + (
            np.log(np.maximum(rel, 1) / max_exact)
            / math.log(max_distance / max_exact)
            * (n - max_exact)
        ).astype(np.int64)
    large = np.minimum(large, n - 1)
    bucket += np.where(is_small, rel, large)
    return bucket


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    """Seeded parameter init.

    Shared embedding ~ N(0, 1) (the tied readout rescales by 1/sqrt(d));
    projections ~ N(0, 1/sqrt(d_model)); norm gains start at 1; the
    relative-position bias tables start neutral at 0.
    """
    rng = np.random.default_rng(seed)
    d, h, dff = config.d_model, config.n_heads, config.d_ff
    std = 1.0 / math.sqrt(d)
    params: dict[str, Tensor] = {}

    def param(name, array):
        params[name] = Tensor(array.astype(dtype), requires_grad=True, dtype=dtype)

    param("shared.embedding", rng.standard_normal((config.vocab_size, d)))
    for stack, n_layers in (("encoder", config.n_enc_layers), ("decoder", config.n_dec_layers)):
        param(f"{stack}.relpos", np.zeros((h, config.relpos_num_buckets)))
        for i in range(n_layers):
            base = f"{stack}.block{i}"
            param(f"{base}.attn.norm", np.ones(d))
            for w in ("wq", "wk", "wv", "wo"):
                param(f"{base}.attn.{w}", rng.standard_normal((d, d)) * std)
            if stack == "decoder":
                param(f"{base}.cross.norm", np.ones(d))
                for w in ("wq", "wk", "wv", "wo"):
                    param(f"{base}.cross.{w}", rng.standard_normal((d, d)) * std)
            param(f"{base}.ff.norm", np.ones(d))
            param(f"{base}.ff.wi", rng.standard_normal((d, dff)) * std)
            param(f"{base}.ff.wo", rng.standard_normal((dff, d)) * std)
        param(f"{stack}.final_norm", np.ones(d))
    return params


def save_checkpoint(path, arrays: dict[str, np.ndarray]):
    """Write tensors as magic + length-prefixed JSON manifest + raw <f4 data."""
    manifest = []
    offset = 0
    payload = []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(data.shape), "offset": offset})
        payload.append(data.tobytes())
        offset += data.nbytes
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for chunk in payload:
            f.write(chunk)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file (bad magic {magic!r})")
        (blob_len,) = struct.unpack("<I", f.read(4))
        manifest = json.loads(f.read(blob_len).decode("utf-8"))
        data = f.read()
    arrays = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).copy()
    return arrays


class Seq2SeqTransformer:
    """Trainable encoder-decoder over token-id matrices.

    Read-only during inference; training mutates parameters and needs
    exclusive access. Dropout is active only after set_train(True).
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None,
                 seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.params = params if params is not None else init_params(config, seed, dtype)
        self.training = False
        self._rng = np.random.default_rng(0)
        self._bucket_cache: dict[tuple, np.ndarray] = {}

    def set_train(self, training: bool, rng: np.random.Generator | None = None):
        self.training = training
        if rng is not None:
            self._rng = rng

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def save(self, path):
        save_checkpoint(path, {k: p.data for k, p in self.params.items()})

    def load(self, path):
        arrays = load_checkpoint(path)
        for name, p in self.params.items():
            if name not in arrays:
                raise ValueError(f"checkpoint missing parameter {name!r}")
            if tuple(arrays[name].shape) != p.data.shape:
                raise ValueError(f"checkpoint shape mismatch for {name!r}")
            p.data = arrays[name].astype(self.dtype)

    # ---- forward pieces ----

    def _dropout(self, x: Tensor) -> Tensor:
        if not self.training or self.config.dropout_rate == 0.0:
            return x
        return T.dropout(x, self.config.dropout_rate, self._rng)

    def _check_ids(self, ids: np.ndarray, name: str):
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError(f"{name} contains ids outside [0, {self.config.vocab_size})")
        if ids.shape[1] > self.config.max_seq_len:
            raise ValueError(
                f"{name} length {ids.shape[1]} exceeds max_seq_len {self.config.max_seq_len}"
            )

    def _relpos_bias(self, stack: str, q_len: int, k_len: int) -> Tensor:
        bidirectional = stack == "encoder"
        key = (stack, q_len, k_len)
        if key not in self._bucket_cache:
            self._bucket_cache[key] = _bucket_matrix(
                q_len, k_len, bidirectional,
                self.config.relpos_num_buckets, self.config.relpos_max_distance,
            )
        buckets = self._bucket_cache[key]
        table = self.params[f"{stack}.relpos"]  # (H, num_buckets)
        by_bucket = T.transpose(table, (1, 0))  # (num_buckets, H)
        bias = T.take(by_bucket, buckets)  # (q, k, H)
        bias = T.transpose(bias, (2, 0, 1))
        return T.reshape(bias, (1, self.config.n_heads) + buckets.shape)

    def _attention(self, x_q: Tensor, x_kv: Tensor, base: str,
                   mask_add: np.ndarray | None, bias: Tensor | None) -> Tensor:
        cfg = self.config
        h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        b, lq = x_q.shape[0], x_q.shape[1]
        lk = x_kv.shape[1]

        def heads(x, w, length):
            y = T.matmul(x, self.params[f"{base}.{w}"])
            y = T.reshape(y, (b, length, h, dh))
            return T.transpose(y, (0, 2, 1, 3))

        q = heads(x_q, "wq", lq)
        k = heads(x_kv, "wk", lk)
        v = heads(x_kv, "wv", lk)
        # scaled dot-product keeps init-time logits near unit variance,
        # which matters for trainability at desk scale
        scores = T.matmul(T.mul(q, 1.0 / math.sqrt(dh)), T.transpose(k, (0, 1, 3, 2)))
        if bias is not None:
            scores = T.add(scores, bias)
        if mask_add is not None:
            scores = T.add(scores, Tensor(mask_add, dtype=x_q.dtype))
        attn = T.softmax(scores, axis=-1)
        attn = self._dropout(attn)
        out = T.matmul(attn, v)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, lq, cfg.d_model))
        return T.matmul(out, self.params[f"{base}.wo"])

    def _ff(self, x: Tensor, base: str) -> Tensor:
        inner = T.relu(T.matmul(x, self.params[f"{base}.wi"]))
        inner = self._dropout(inner)
        return T.matmul(inner, self.params[f"{base}.wo"])

    @staticmethod
    def _key_mask_add(attn_mask: np.ndarray, dtype) -> np.ndarray:
        """(B, L) boolean key mask -> additive (B, 1, 1, L) with -inf at pads."""
        neg = np.array(-np.inf, dtype=dtype)
        return np.where(attn_mask[:, None, None, :], dtype.type(0.0), neg)

    def encode(self, ids, attn_mask) -> Tensor:
        """Contextual hidden states, shape (B, L, d_model).

        attn_mask marks real tokens; pad key positions are masked with
        -inf attention logits so they cannot influence real positions.
        """
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(attn_mask, dtype=bool)
        self._check_ids(ids, "encoder ids")
        cfg = self.config
        x = T.take(self.params["shared.embedding"], ids)
        x = self._dropout(x)
        mask_add = self._key_mask_add(mask, x.data.dtype)
        bias = self._relpos_bias("encoder", ids.shape[1], ids.shape[1]) if cfg.n_enc_layers else None
        for i in range(cfg.n_enc_layers):
            base = f"encoder.block{i}"
            h = T.rms_norm(x, self.params[f"{base}.attn.norm"])
            x = T.add(x, self._dropout(self._attention(h, h, f"{base}.attn", mask_add, bias)))
            h = T.rms_norm(x, self.params[f"{base}.ff.norm"])
            x = T.add(x, self._dropout(self._ff(h, f"{base}.ff")))
        x = T.rms_norm(x, self.params["encoder.final_norm"])
        return self._dropout(x)

    def decode_logits(self, enc_hidden: Tensor, enc_mask, dec_ids) -> Tensor:
        """Teacher-forced decoder logits, shape (B, T, vocab_size).

        Causal self-attention (position t attends <= t) plus cross
        attention into the encoder states; the readout is tied to the
        shared embedding and rescaled by 1/sqrt(d_model).
        """
        dec_ids = np.asarray(dec_ids, dtype=np.int64)
        enc_mask = np.asarray(enc_mask, dtype=bool)
        self._check_ids(dec_ids, "decoder ids")
        cfg = self.config
        t_len = dec_ids.shape[1]
        emb = self.params["shared.embedding"]
        x = T.take(emb, dec_ids)
        x = self._dropout(x)
        dt = x.data.dtype
        causal = np.triu(np.full((1, 1, t_len, t_len), -np.inf, dtype=dt), k=1)
        cross_mask = self._key_mask_add(enc_mask, dt)
        bias = self._relpos_bias("decoder", t_len, t_len) if cfg.n_dec_layers else None
        for i in range(cfg.n_dec_layers):
            base = f"decoder.block{i}"
            h = T.rms_norm(x, self.params[f"{base}.attn.norm"])
            x = T.add(x, self._dropout(self._attention(h, h, f"{base}.attn", causal, bias)))
            h = T.rms_norm(x, self.params[f"{base}.cross.norm"])
            x = T.add(x, self._dropout(
                self._attention(h, enc_hidden, f"{base}.cross", cross_mask, None)))
            h = T.rms_norm(x, self.params[f"{base}.ff.norm"])
            x = T.add(x, self._dropout(self._ff(h, f"{base}.ff")))
        x = T.rms_norm(x, self.params["decoder.final_norm"])
        x = self._dropout(x)
        x = T.mul(x, 1.0 / math.sqrt(cfg.d_model))
        return T.matmul(x, T.transpose(emb, (1, 0)))

    def batch_loss(self, batch, pad_id: int = 0) -> Tensor:
        """Mean token cross-entropy over non-pad target positions."""
        enc = self.encode(batch.enc_ids, batch.enc_mask)
        logits = self.decode_logits(enc, batch.enc_mask, batch.dec_ids)
        b, t, v = logits.shape
        flat = T.reshape(logits, (b * t, v))
        return T.cross_entropy(flat, batch.target_ids.reshape(-1), ignore_id=pad_id)
