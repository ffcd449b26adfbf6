"""Sequence encoding for the five architecture variants.

An input is serialized as

    [tag block 1] [chars of form 1] SEP [tag block 2] [chars of form 2] SEP [tag block tgt]

and the variants differ along two axes only:

* tag scheme: ATOMIC (one token per cell tag), SUBTAG_TOKENS (five subtag
  tokens), ONEHOT7 / GEOMETRIC4 (no vocabulary entry; the tag position's
  embedding is a linear projection of a fixed feature vector);
* position policy: SEQUENTIAL (every position gets its concatenation index)
  or TAG_FIXED_ZERO (tag positions are pinned to position 0, so their
  representation cannot covary with form length).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .corpus import ReinflectionInstance
from .tags import ALL_CELLS, ALL_SUBTAGS, CellTag

PAD, BOS, EOS, SEP = "<pad>", "<bos>", "<eos>", "<sep>"

TOKEN_TAG, TOKEN_CHAR, TOKEN_SEP = 0, 1, 2


class TagScheme(str, Enum):
    ATOMIC = "atomic"
    SUBTAG_TOKENS = "subtag_tokens"
    ONEHOT7 = "onehot7"
    GEOMETRIC4 = "geometric4"

    @property
    def feature_dim(self) -> int:
        return {TagScheme.ONEHOT7: 7, TagScheme.GEOMETRIC4: 4}.get(self, 0)

    @property
    def uses_features(self) -> bool:
        return self.feature_dim > 0


class PosPolicy(str, Enum):
    SEQUENTIAL = "sequential"
    TAG_FIXED_ZERO = "tag_fixed_zero"


@dataclass(frozen=True)
class Variant:
    name: str
    pos_policy: PosPolicy
    tag_scheme: TagScheme

    @property
    def position_invariant_tags(self) -> bool:
        return self.pos_policy is PosPolicy.TAG_FIXED_ZERO


VARIANTS: dict[str, Variant] = {
    v.name: v
    for v in (
        Variant("VANILLA", PosPolicy.SEQUENTIAL, TagScheme.ATOMIC),
        Variant("CHAR_SEPARATED", PosPolicy.SEQUENTIAL, TagScheme.SUBTAG_TOKENS),
        Variant("FEATURE_INVARIANT", PosPolicy.TAG_FIXED_ZERO, TagScheme.ATOMIC),
        Variant("FEATURE_ONEHOT", PosPolicy.TAG_FIXED_ZERO, TagScheme.ONEHOT7),
        Variant("FEATURE_GEOMETRIC", PosPolicy.TAG_FIXED_ZERO, TagScheme.GEOMETRIC4),
    )
}

# Sequential-position variants; the tag token's position index shifts with
# source form length, so tag identity is entangled with position.
POSITION_SENSITIVE = ("VANILLA", "CHAR_SEPARATED")
# Fixed-position variants; tag representation is length-invariant.
POSITION_INVARIANT = ("FEATURE_INVARIANT", "FEATURE_ONEHOT", "FEATURE_GEOMETRIC")


def get_variant(name: str) -> Variant:
    try:
        return VARIANTS[name.upper()]
    except KeyError:
        raise ValueError(
            f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}"
        ) from None


def tag_to_onehot(cell: CellTag) -> np.ndarray:
    """Concatenated one-hots: mood [IND, SBJV], person [1, 2, 3],
    number [SG, PL]. Seven dimensions."""
    vec = np.zeros(7, dtype=np.float32)
    vec[0 if cell.mood == "IND" else 1] = 1.0
    vec[2 + cell.person - 1] = 1.0
    vec[5 if cell.number == "SG" else 6] = 1.0
    return vec


def tag_to_geometric(cell: CellTag) -> np.ndarray:
    """Privative features [participant, author, plural, indicative]:
    person 1 = participant+author, person 2 = participant only, person 3 =
    neither; plural and indicative are flags. Four dimensions."""
    participant = 1.0 if cell.person in (1, 2) else 0.0
    author = 1.0 if cell.person == 1 else 0.0
    plural = 1.0 if cell.number == "PL" else 0.0
    indicative = 1.0 if cell.mood == "IND" else 0.0
    return np.array([participant, author, plural, indicative], dtype=np.float32)


def tag_features(cell: CellTag, scheme: TagScheme) -> np.ndarray:
    if scheme is TagScheme.ONEHOT7:
        return tag_to_onehot(cell)
    if scheme is TagScheme.GEOMETRIC4:
        return tag_to_geometric(cell)
    raise ValueError(f"scheme {scheme} has no feature vectors")


class Vocab:
    """Token-to-id mapping with a dedicated decoder output subspace.

    Global ids cover specials, characters, and (scheme-dependent) tag
    tokens. The decoder only ever emits PAD, EOS, or a character, so the
    output projection runs over that subspace; `decoder_ids` maps local
    output indices to global ids.
    """

    def __init__(self, chars: list[str], tag_tokens: list[str]):
        if len(set(chars)) != len(chars):
            raise ValueError("duplicate characters")
        specials = [PAD, BOS, EOS, SEP]
        overlap = set(chars) & set(specials) | set(tag_tokens) & set(specials)
        if overlap:
            raise ValueError(f"tokens collide with specials: {sorted(overlap)}")
        self.tokens = specials + list(chars) + list(tag_tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocab")
        self.chars = list(chars)
        self.tag_tokens = list(tag_tokens)
        self.pad_id = self.index[PAD]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]
        self.sep_id = self.index[SEP]
        # Local 0 is PAD, local 1 is EOS, then the characters.
        self.decoder_ids = np.array(
            [self.pad_id, self.eos_id] + [self.index[c] for c in chars], dtype=np.int64
        )
        self.local_pad = 0
        self.local_eos = 1
        self._global_to_local = {int(g): i for i, g in enumerate(self.decoder_ids)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def decoder_size(self) -> int:
        return len(self.decoder_ids)

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocab") from None

    def encode_chars(self, form: str) -> list[int]:
        return [self.id(ch) for ch in form]

    def to_local(self, global_id: int) -> int:
        return self._global_to_local[int(global_id)]

    def local_to_token(self, local_id: int) -> str:
        return self.tokens[int(self.decoder_ids[local_id])]

    def decode_locals(self, local_ids) -> str:
        """Local decoder ids to a form string, stopping at EOS, skipping PAD."""
        out = []
        for i in local_ids:
            i = int(i)
            if i == self.local_eos:
                break
            if i == self.local_pad:
                continue
            out.append(self.local_to_token(i))
        return "".join(out)

    def to_json(self) -> dict:
        return {"chars": self.chars, "tag_tokens": self.tag_tokens}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocab":
        return cls(chars=list(obj["chars"]), tag_tokens=list(obj["tag_tokens"]))


def _scheme_tag_tokens(scheme: TagScheme) -> list[str]:
    if scheme is TagScheme.ATOMIC:
        return [c.unimorph() for c in ALL_CELLS]
    if scheme is TagScheme.SUBTAG_TOKENS:
        return list(ALL_SUBTAGS)
    return []


def build_vocab(forms, variant: Variant) -> Vocab:
    chars = sorted({ch for form in forms for ch in form})
    return Vocab(chars, _scheme_tag_tokens(variant.tag_scheme))


@dataclass
class EncodedSequence:
    """One encoder/decoder example, pre-padding.

    src_features rows are zero at non-tag positions; for schemes without
    features it has zero columns. feature_mask is 1.0 exactly at feature
    positions (where the embedding comes from the projection, not lookup).
    """

    src_ids: np.ndarray        # [S] int64
    src_positions: np.ndarray  # [S] int64
    src_token_types: np.ndarray  # [S] int8, TOKEN_TAG/CHAR/SEP
    src_features: np.ndarray   # [S, F] float32
    feature_mask: np.ndarray   # [S] float32
    tgt_in: np.ndarray         # [T] int64 global ids, starts with BOS
    tgt_out: np.ndarray        # [T] int64 local decoder ids, ends with EOS


def _tag_block(cell: CellTag, vocab: Vocab, scheme: TagScheme):
    """Returns (ids, feature_rows or None) for one tag block."""
    if scheme is TagScheme.ATOMIC:
        return [vocab.id(cell.unimorph())], None
    if scheme is TagScheme.SUBTAG_TOKENS:
        return [vocab.id(s) for s in cell.subtags], None
    return [vocab.pad_id], [tag_features(cell, scheme)]


def encode_instance(
    inst: ReinflectionInstance, vocab: Vocab, variant: Variant
) -> EncodedSequence:
    scheme = variant.tag_scheme
    fdim = scheme.feature_dim

    ids: list[int] = []
    types: list[int] = []
    feats: list[np.ndarray] = []
    fmask: list[float] = []

    def put_tag(cell: CellTag):
        block_ids, block_feats = _tag_block(cell, vocab, scheme)
        for k, tid in enumerate(block_ids):
            ids.append(tid)
            types.append(TOKEN_TAG)
            if block_feats is not None:
                feats.append(block_feats[k])
                fmask.append(1.0)
            else:
                feats.append(np.zeros(fdim, dtype=np.float32))
                fmask.append(0.0)

    def put_chars(form: str):
        for ch in form:
            ids.append(vocab.id(ch))
            types.append(TOKEN_CHAR)
            feats.append(np.zeros(fdim, dtype=np.float32))
            fmask.append(0.0)

    def put_sep():
        ids.append(vocab.sep_id)
        types.append(TOKEN_SEP)
        feats.append(np.zeros(fdim, dtype=np.float32))
        fmask.append(0.0)

    put_tag(inst.src1_tag)
    put_chars(inst.src1_form)
    put_sep()
    put_tag(inst.src2_tag)
    put_chars(inst.src2_form)
    put_sep()
    put_tag(inst.tgt_tag)

    src_ids = np.array(ids, dtype=np.int64)
    token_types = np.array(types, dtype=np.int8)
    positions = np.arange(len(ids), dtype=np.int64)
    if variant.pos_policy is PosPolicy.TAG_FIXED_ZERO:
        positions = np.where(token_types == TOKEN_TAG, 0, positions)

    tgt_chars = vocab.encode_chars(inst.tgt_form)
    tgt_in = np.array([vocab.bos_id] + tgt_chars, dtype=np.int64)
    tgt_out = np.array(
        [vocab.to_local(g) for g in tgt_chars] + [vocab.local_eos], dtype=np.int64
    )

    return EncodedSequence(
        src_ids=src_ids,
        src_positions=positions,
        src_token_types=token_types,
        src_features=np.stack(feats).astype(np.float32)
        if feats
        else np.zeros((0, fdim), np.float32),
        feature_mask=np.array(fmask, dtype=np.float32),
        tgt_in=tgt_in,
        tgt_out=tgt_out,
    )


@dataclass
class Batch:
    """Padded arrays for one training/eval batch. Masks are True at real
    (non-padding) positions."""

    src_ids: np.ndarray       # [B, S] int64
    src_positions: np.ndarray  # [B, S] int64
    src_mask: np.ndarray      # [B, S] bool
    src_features: np.ndarray  # [B, S, F] float32
    feature_mask: np.ndarray  # [B, S] float32
    tgt_in: np.ndarray        # [B, T] int64
    tgt_out: np.ndarray       # [B, T] int64 local ids, PAD-local at padding
    tgt_mask: np.ndarray      # [B, T] bool
    src_token_types: np.ndarray | None = None  # [B, S] int8

    def __len__(self) -> int:
        return self.src_ids.shape[0]


def collate(sequences: list[EncodedSequence], vocab: Vocab) -> Batch:
    if not sequences:
        raise ValueError("empty batch")
    b = len(sequences)
    s_max = max(len(e.src_ids) for e in sequences)
    t_max = max(len(e.tgt_in) for e in sequences)
    fdim = sequences[0].src_features.shape[1]

    src_ids = np.full((b, s_max), vocab.pad_id, dtype=np.int64)
    src_pos = np.zeros((b, s_max), dtype=np.int64)
    src_mask = np.zeros((b, s_max), dtype=bool)
    src_feat = np.zeros((b, s_max, fdim), dtype=np.float32)
    fmask = np.zeros((b, s_max), dtype=np.float32)
    types = np.full((b, s_max), TOKEN_CHAR, dtype=np.int8)
    tgt_in = np.full((b, t_max), vocab.pad_id, dtype=np.int64)
    tgt_out = np.full((b, t_max), vocab.local_pad, dtype=np.int64)
    tgt_mask = np.zeros((b, t_max), dtype=bool)

    for i, e in enumerate(sequences):
        s, t = len(e.src_ids), len(e.tgt_in)
        src_ids[i, :s] = e.src_ids
        src_pos[i, :s] = e.src_positions
        src_mask[i, :s] = True
        src_feat[i, :s] = e.src_features
        fmask[i, :s] = e.feature_mask
        types[i, :s] = e.src_token_types
        tgt_in[i, :t] = e.tgt_in
        tgt_out[i, :t] = e.tgt_out
        tgt_mask[i, :t] = True

    return Batch(
        src_ids, src_pos, src_mask, src_feat, fmask, tgt_in, tgt_out, tgt_mask, types
    )


def encode_source_only(
    src1: tuple[str, CellTag],
    src2: tuple[str, CellTag],
    tgt_tag: CellTag,
    vocab: Vocab,
    variant: Variant,
) -> EncodedSequence:
    """Encoder input for inference when the target form is unknown."""
    inst = object.__new__(ReinflectionInstance)
    object.__setattr__(inst, "lemma", "")
    object.__setattr__(inst, "src1_form", src1[0])
    object.__setattr__(inst, "src1_tag", src1[1])
    object.__setattr__(inst, "src2_form", src2[0])
    object.__setattr__(inst, "src2_tag", src2[1])
    object.__setattr__(inst, "tgt_tag", tgt_tag)
    object.__setattr__(inst, "tgt_form", "")
    enc = encode_instance(inst, vocab, variant)
    enc.tgt_in = np.array([vocab.bos_id], dtype=np.int64)
    enc.tgt_out = np.array([vocab.local_eos], dtype=np.int64)
    return enc
