"""Encoder-decoder transformer over padded numpy batches.

Post-norm layers as in the original architecture; the five variants differ
only upstream of the first encoder layer, in how tag positions are embedded
(vocabulary lookup vs feature projection) and which positional index they
receive (see encoding.py). Inference uses frozen-slot beam search: finished
hypotheses stay in the beam as PAD self-extensions with log-probability 0,
which makes width 1 coincide with greedy decoding and a wide-enough beam
coincide with exhaustive search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoding import TOKEN_TAG, Batch, Vocab, get_variant
from .numcore import ops
from .numcore.tape import Tensor, no_grad, parameter

NEG_INF = -1e9


@dataclass
class ModelConfig:
    variant: str
    vocab_size: int
    decoder_size: int
    feature_dim: int = 0
    d_model: int = 256
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int = 1024
    dropout: float = 0.3
    max_len: int = 80
    dtype: str = "float32"
    tag_pe_zero: bool = True  # add PE(0) at pinned tag positions
    init_seed: int = 0

    def __post_init__(self):
        get_variant(self.variant)
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.n_heads}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def sinusoidal_table(max_len: int, d_model: int, dtype) -> np.ndarray:
    """pe[p, 2i] = sin(p / 10000^(2i/d)), pe[p, 2i+1] = cos(same);
    row 0 is [0, 1, 0, 1, ...]."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((max_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe.astype(dtype)


@dataclass
class BeamHypothesis:
    tokens: list[int]      # local decoder ids, EOS included when finished
    logprob: float
    finished: bool

    @property
    def gen_len(self) -> int:
        return len(self.tokens)

    @property
    def score(self) -> float:
        """Length-normalized: total log-probability over generated tokens
        (EOS included)."""
        return self.logprob / max(1, self.gen_len)


class TransformerModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.variant = get_variant(config.variant)
        self._params: dict[str, Tensor] = {}
        self._init_params()
        self.pe = sinusoidal_table(config.max_len, config.d_model, config.np_dtype)

    # ---------------- parameters ----------------

    def _p(self, name: str, arr: np.ndarray) -> Tensor:
        t = parameter(arr, name, dtype=self.config.np_dtype)
        self._params[name] = t
        return t

    def _glorot(self, rng, fan_in: int, fan_out: int) -> np.ndarray:
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    def _init_attn(self, rng, prefix: str) -> dict:
        d = self.config.d_model
        return {
            key: self._p(f"{prefix}.{key}", self._glorot(rng, d, d))
            for key in ("wq", "wk", "wv", "wo")
        } | {
            f"b{key[-1]}": self._p(f"{prefix}.b{key[-1]}", np.zeros(d))
            for key in ("wq", "wk", "wv", "wo")
        }

    def _init_ln(self, rng, prefix: str) -> dict:
        d = self.config.d_model
        return {
            "g": self._p(f"{prefix}.g", np.ones(d)),
            "b": self._p(f"{prefix}.b", np.zeros(d)),
        }

    def _init_ffn(self, rng, prefix: str) -> dict:
        d, ff = self.config.d_model, self.config.d_ff
        return {
            "w1": self._p(f"{prefix}.w1", self._glorot(rng, d, ff)),
            "b1": self._p(f"{prefix}.b1", np.zeros(ff)),
            "w2": self._p(f"{prefix}.w2", self._glorot(rng, ff, d)),
            "b2": self._p(f"{prefix}.b2", np.zeros(d)),
        }

    def _init_params(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.init_seed)
        d = cfg.d_model
        self.embed = self._p("embed", rng.normal(0, d**-0.5, size=(cfg.vocab_size, d)))
        if cfg.feature_dim > 0:
            # Bias-free so all-zero feature rows contribute nothing.
            self.feat_proj = self._p(
                "feat_proj", self._glorot(rng, cfg.feature_dim, d)
            )
        else:
            self.feat_proj = None
        self.enc_layers = []
        for i in range(cfg.n_layers):
            self.enc_layers.append(
                {
                    "attn": self._init_attn(rng, f"enc.{i}.attn"),
                    "ln1": self._init_ln(rng, f"enc.{i}.ln1"),
                    "ffn": self._init_ffn(rng, f"enc.{i}.ffn"),
                    "ln2": self._init_ln(rng, f"enc.{i}.ln2"),
                }
            )
        self.dec_layers = []
        for i in range(cfg.n_layers):
            self.dec_layers.append(
                {
                    "self": self._init_attn(rng, f"dec.{i}.self"),
                    "ln1": self._init_ln(rng, f"dec.{i}.ln1"),
                    "cross": self._init_attn(rng, f"dec.{i}.cross"),
                    "ln2": self._init_ln(rng, f"dec.{i}.ln2"),
                    "ffn": self._init_ffn(rng, f"dec.{i}.ffn"),
                    "ln3": self._init_ln(rng, f"dec.{i}.ln3"),
                }
            )
        self.out_w = self._p("out.w", self._glorot(rng, d, cfg.decoder_size))
        self.out_b = self._p("out.b", np.zeros(cfg.decoder_size))

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    # ---------------- building blocks ----------------

    def _dropout(self, x, train, rng):
        return ops.dropout(x, self.config.dropout, rng, train)

    def _mha(self, attn, q_in, kv_in, add_mask, train, rng, cached_kv=None):
        """Multi-head attention. add_mask broadcasts to [B, H, Tq, Tk];
        cached_kv short-circuits the key/value projections."""
        cfg = self.config
        b, tq = q_in.shape[0], q_in.shape[1]
        h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads

        def split(x, t):
            return ops.transpose(ops.reshape(x, (b, t, h, dh)), (0, 2, 1, 3))

        q = split(ops.linear(q_in, attn["wq"], attn["bq"]), tq)
        if cached_kv is None:
            tk = kv_in.shape[1]
            k = split(ops.linear(kv_in, attn["wk"], attn["bk"]), tk)
            v = split(ops.linear(kv_in, attn["wv"], attn["bv"]), tk)
        else:
            k, v = cached_kv
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), dh**-0.5)
        if add_mask is not None:
            scores = ops.add_const(scores, add_mask)
        weights = self._dropout(ops.softmax(scores), train, rng)
        ctx = ops.matmul(weights, v)
        ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (b, tq, cfg.d_model))
        return ops.linear(ctx, attn["wo"], attn["bo"])

    def _sublayer(self, x, out, ln, train, rng):
        return ops.layernorm(ops.add(x, self._dropout(out, train, rng)), ln["g"], ln["b"])

    def _ffn(self, ffn, x):
        hidden = ops.relu(ops.linear(x, ffn["w1"], ffn["b1"]))
        return ops.linear(hidden, ffn["w2"], ffn["b2"])

    def _key_mask(self, real: np.ndarray) -> np.ndarray:
        """[B, S] boolean (True = real) to additive [B, 1, 1, S]."""
        return np.where(real, 0.0, NEG_INF).astype(self.config.np_dtype)[:, None, None, :]

    # ---------------- encoder ----------------

    def embed_source(self, batch: Batch, train: bool = False, rng=None) -> Tensor:
        """Input embeddings + positional encodings, before any layer."""
        cfg = self.config
        x = ops.embedding(self.embed, batch.src_ids)
        if self.feat_proj is not None:
            char_mask = (1.0 - batch.feature_mask)[..., None].astype(cfg.np_dtype)
            x = ops.mul_const(x, char_mask)
            feats = ops.constant(batch.src_features.astype(cfg.np_dtype))
            x = ops.add(x, ops.matmul(feats, self.feat_proj))
        x = ops.scale(x, math.sqrt(cfg.d_model))
        pe = self.pe[batch.src_positions]
        if not cfg.tag_pe_zero and self.variant.position_invariant_tags:
            if batch.src_token_types is None:
                raise ValueError("tag_pe_zero=False needs src_token_types in the batch")
            pe = pe * (batch.src_token_types != TOKEN_TAG)[..., None]
        x = ops.add_const(x, pe)
        return self._dropout(x, train, rng)

    def encode(self, batch: Batch, train: bool = False, rng=None) -> Tensor:
        x = self.embed_source(batch, train, rng)
        mask = self._key_mask(batch.src_mask)
        for layer in self.enc_layers:
            attn_out = self._mha(layer["attn"], x, x, mask, train, rng)
            x = self._sublayer(x, attn_out, layer["ln1"], train, rng)
            x = self._sublayer(x, self._ffn(layer["ffn"], x), layer["ln2"], train, rng)
        return x

    # ---------------- decoder ----------------

    def _embed_target(self, tgt_in: np.ndarray, train, rng) -> Tensor:
        cfg = self.config
        x = ops.embedding(self.embed, tgt_in)
        x = ops.scale(x, math.sqrt(cfg.d_model))
        x = ops.add_const(x, self.pe[: tgt_in.shape[1]][None, :, :])
        return self._dropout(x, train, rng)

    def decode(
        self,
        memory: Tensor,
        batch: Batch,
        train: bool = False,
        rng=None,
        tgt_in: np.ndarray | None = None,
        tgt_real: np.ndarray | None = None,
        cross_kv: list | None = None,
    ) -> Tensor:
        cfg = self.config
        tgt_in = batch.tgt_in if tgt_in is None else tgt_in
        tgt_real = batch.tgt_mask if tgt_real is None else tgt_real
        t = tgt_in.shape[1]
        causal = np.triu(np.full((t, t), NEG_INF, dtype=cfg.np_dtype), k=1)[None, None]
        self_mask = causal + self._key_mask(tgt_real)
        cross_mask = self._key_mask(batch.src_mask)

        x = self._embed_target(tgt_in, train, rng)
        for i, layer in enumerate(self.dec_layers):
            self_out = self._mha(layer["self"], x, x, self_mask, train, rng)
            x = self._sublayer(x, self_out, layer["ln1"], train, rng)
            cached = cross_kv[i] if cross_kv is not None else None
            cross_out = self._mha(
                layer["cross"], x, memory, cross_mask, train, rng, cached_kv=cached
            )
            x = self._sublayer(x, cross_out, layer["ln2"], train, rng)
            x = self._sublayer(x, self._ffn(layer["ffn"], x), layer["ln3"], train, rng)
        return ops.linear(x, self.out_w, self.out_b)

    def forward(self, batch: Batch, train: bool = False, rng=None) -> Tensor:
        memory = self.encode(batch, train, rng)
        return self.decode(memory, batch, train, rng)

    def loss(self, batch: Batch, train: bool = False, rng=None, smoothing: float = 0.1):
        logits = self.forward(batch, train, rng)
        return ops.label_smoothed_ce(logits, batch.tgt_out, batch.tgt_mask, smoothing)

    # ---------------- inference ----------------

    def _cross_kv(self, memory_rep: Tensor):
        cfg = self.config
        b, s = memory_rep.shape[0], memory_rep.shape[1]
        h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        out = []
        for layer in self.dec_layers:
            attn = layer["cross"]
            k = ops.linear(memory_rep, attn["wk"], attn["bk"])
            v = ops.linear(memory_rep, attn["wv"], attn["bv"])
            k = ops.transpose(ops.reshape(k, (b, s, h, dh)), (0, 2, 1, 3))
            v = ops.transpose(ops.reshape(v, (b, s, h, dh)), (0, 2, 1, 3))
            out.append((k, v))
        return out

    def beam_search(
        self,
        batch: Batch,
        vocab: Vocab,
        beam_size: int = 5,
        max_len: int = 40,
        chunk_size: int = 2048,
    ) -> list[list[BeamHypothesis]]:
        """Returns, per item, finished hypotheses sorted by normalized score
        (best first). max_len bounds generated tokens including EOS; any
        hypothesis still unfinished at the horizon takes a forced EOS on the
        last step, so every returned hypothesis is EOS-terminated."""
        if beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        results = []
        with no_grad():
            for start in range(0, len(batch), max(1, chunk_size // beam_size)):
                sub = _slice_batch(batch, start, start + max(1, chunk_size // beam_size))
                results.extend(self._beam_chunk(sub, vocab, beam_size, max_len))
        return results

    def _beam_chunk(self, batch: Batch, vocab: Vocab, beam_size: int, max_len: int):
        cfg = self.config
        b = len(batch)
        memory = self.encode(batch, train=False)
        mem_rep = Tensor(np.repeat(memory.data, beam_size, axis=0))
        cross = self._cross_kv(mem_rep)
        src_mask_rep = np.repeat(batch.src_mask, beam_size, axis=0)

        beams: list[list[BeamHypothesis]] = [
            [BeamHypothesis([], 0.0, False)]
            + [BeamHypothesis([], -np.inf, True) for _ in range(beam_size - 1)]
            for _ in range(b)
        ]
        k_dec = cfg.decoder_size
        pad_l, eos_l = vocab.local_pad, vocab.local_eos
        global_of_local = vocab.decoder_ids

        for step in range(1, max_len + 1):
            # Decoder input for every (item, beam): BOS then emitted tokens
            # (PAD where shorter, which is masked out of attention keys).
            t_in = 1 + max(len(h.tokens) for row in beams for h in row)
            dec_in = np.full((b * beam_size, t_in), vocab.pad_id, dtype=np.int64)
            dec_real = np.zeros((b * beam_size, t_in), dtype=bool)
            dec_in[:, 0] = vocab.bos_id
            dec_real[:, 0] = True
            for i, row in enumerate(beams):
                for j, hyp in enumerate(row):
                    r = i * beam_size + j
                    toks = [t for t in hyp.tokens if t != pad_l]
                    if toks and toks[-1] == eos_l:
                        toks = toks[:-1]
                    gl = [int(global_of_local[t]) for t in toks]
                    dec_in[r, 1 : 1 + len(gl)] = gl
                    dec_real[r, 1 : 1 + len(gl)] = True

            rep = Batch(
                src_ids=np.repeat(batch.src_ids, beam_size, axis=0),
                src_positions=np.repeat(batch.src_positions, beam_size, axis=0),
                src_mask=src_mask_rep,
                src_features=np.repeat(batch.src_features, beam_size, axis=0),
                feature_mask=np.repeat(batch.feature_mask, beam_size, axis=0),
                tgt_in=dec_in,
                tgt_out=np.zeros_like(dec_in),
                tgt_mask=dec_real,
                src_token_types=None,
            )
            logits = self.decode(
                mem_rep, rep, train=False, tgt_in=dec_in, tgt_real=dec_real, cross_kv=cross
            ).data
            # Logits at each row's last real position.
            last_idx = dec_real.sum(axis=1) - 1
            z = logits[np.arange(b * beam_size), last_idx]
            z64 = z.astype(np.float64)
            logp = z64 - _logsumexp(z64)

            for i in range(b):
                cands: list[tuple[float, int, BeamHypothesis]] = []
                order = 0
                for j, hyp in enumerate(beams[i]):
                    if hyp.logprob == -np.inf:
                        continue
                    if hyp.finished:
                        # Frozen slot: extend with PAD at log-probability 0.
                        cands.append((hyp.logprob, order, hyp))
                        order += 1
                        continue
                    row_logp = logp[i * beam_size + j]
                    classes = (
                        range(k_dec) if step < max_len else [eos_l]
                    )
                    for c in classes:
                        if c == pad_l:
                            continue
                        nh = BeamHypothesis(
                            hyp.tokens + [c],
                            hyp.logprob + float(row_logp[c]),
                            finished=(c == eos_l),
                        )
                        cands.append((nh.logprob, order, nh))
                        order += 1
                # Highest cumulative log-probability first; ties resolve to
                # the earliest-generated candidate so width 1 equals greedy.
                cands.sort(key=lambda t: (-t[0], t[1]))
                kept = [c[2] for c in cands[:beam_size]]
                while len(kept) < beam_size:
                    kept.append(BeamHypothesis([], -np.inf, True))
                beams[i] = kept
            if all(h.finished for row in beams for h in row):
                break

        out = []
        for row in beams:
            done = [h for h in row if h.finished and h.logprob > -np.inf]
            done.sort(key=lambda h: -h.score)
            out.append(done)
        return out

    def predict_forms(self, batch: Batch, vocab: Vocab, beam_size: int = 5,
                      max_len: int = 40, chunk_size: int = 2048) -> list[str]:
        hyps = self.beam_search(batch, vocab, beam_size, max_len, chunk_size)
        return [vocab.decode_locals(h[0].tokens) if h else "" for h in hyps]


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def _slice_batch(batch: Batch, lo: int, hi: int) -> Batch:
    types = batch.src_token_types
    return Batch(
        src_ids=batch.src_ids[lo:hi],
        src_positions=batch.src_positions[lo:hi],
        src_mask=batch.src_mask[lo:hi],
        src_features=batch.src_features[lo:hi],
        feature_mask=batch.feature_mask[lo:hi],
        tgt_in=batch.tgt_in[lo:hi],
        tgt_out=batch.tgt_out[lo:hi],
        tgt_mask=batch.tgt_mask[lo:hi],
        src_token_types=None if types is None else types[lo:hi],
    )
