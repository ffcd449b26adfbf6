import itertools

import numpy as np
import pytest

from morphome.corpus import ReinflectionInstance
from morphome.encoding import (
    Batch,
    Vocab,
    build_vocab,
    collate,
    encode_instance,
    get_variant,
)
from morphome.model import (
    BeamHypothesis,
    ModelConfig,
    TransformerModel,
    _logsumexp,
    sinusoidal_table,
)
from morphome.numcore import no_grad
from morphome.numcore.gradcheck import check_gradients
from morphome.tags import CellTag


def tiny_config(variant="VANILLA", vocab=None, **over):
    base = dict(
        variant=variant,
        vocab_size=len(vocab),
        decoder_size=vocab.decoder_size,
        feature_dim=get_variant(variant).tag_scheme.feature_dim,
        d_model=32,
        n_heads=2,
        n_layers=2,
        d_ff=64,
        dropout=0.0,
        max_len=64,
        init_seed=7,
    )
    base.update(over)
    return ModelConfig(**base)


def make_instances():
    cells = [CellTag("IND", 1, "SG"), CellTag("IND", 2, "SG"), CellTag("SBJV", 3, "PL")]
    return [
        ReinflectionInstance("poner", "pongo", cells[0], "pones", cells[1], cells[2], "pongan"),
        ReinflectionInstance("hablar", "hablo", cells[0], "hablas", cells[1], cells[2], "hablen"),
    ]


@pytest.fixture(scope="module")
def setup_vanilla():
    insts = make_instances()
    variant = get_variant("VANILLA")
    vocab = build_vocab([f for i in insts for f in (i.src1_form, i.src2_form, i.tgt_form)], variant)
    model = TransformerModel(tiny_config("VANILLA", vocab))
    batch = collate([encode_instance(i, vocab, variant) for i in insts], vocab)
    return model, vocab, variant, batch


class TestPositionalTable:
    def test_row_zero_alternates(self):
        pe = sinusoidal_table(10, 8, np.float64)
        np.testing.assert_allclose(pe[0], [0, 1, 0, 1, 0, 1, 0, 1])

    def test_known_values(self):
        pe = sinusoidal_table(4, 4, np.float64)
        assert pe[1, 0] == pytest.approx(np.sin(1.0))
        assert pe[1, 1] == pytest.approx(np.cos(1.0))
        assert pe[2, 2] == pytest.approx(np.sin(2.0 / 10000.0 ** (2 / 4)))
        assert pe[2, 3] == pytest.approx(np.cos(2.0 / 10000.0 ** (2 / 4)))

    def test_rows_distinct(self):
        pe = sinusoidal_table(50, 16, np.float32)
        assert len({tuple(np.round(r, 6)) for r in pe}) == 50


class TestShapesAndCount:
    def test_forward_shapes(self, setup_vanilla):
        model, vocab, _, batch = setup_vanilla
        logits = model.forward(batch)
        b, t = batch.tgt_in.shape
        assert logits.shape == (b, t, vocab.decoder_size)
        loss = model.loss(batch)
        assert loss.shape == ()

    def test_parameter_count_formula(self, setup_vanilla):
        model, vocab, _, _ = setup_vanilla
        d, ff, k = 32, 64, vocab.decoder_size
        attn = 4 * d * d + 4 * d
        ln = 2 * d
        ffn = d * ff + ff + ff * d + d
        enc = attn + ffn + 2 * ln
        dec = 2 * attn + ffn + 3 * ln
        want = len(vocab) * d + 2 * enc + 2 * dec + d * k + k
        assert model.parameter_count() == want

    def test_feature_variant_has_projection(self):
        insts = make_instances()
        variant = get_variant("FEATURE_GEOMETRIC")
        vocab = build_vocab(
            [f for i in insts for f in (i.src1_form, i.src2_form, i.tgt_form)], variant
        )
        model = TransformerModel(tiny_config("FEATURE_GEOMETRIC", vocab))
        assert "feat_proj" in model.parameters()
        assert model.parameters()["feat_proj"].shape == (4, 32)
        batch = collate([encode_instance(i, vocab, variant) for i in insts], vocab)
        logits = model.forward(batch)
        assert np.isfinite(logits.data).all()


class TestMasking:
    def test_causal_future_blindness(self, setup_vanilla):
        model, vocab, variant, batch = setup_vanilla
        logits_a = model.forward(batch).data
        # Corrupt the last target input token; earlier logits must not move.
        tgt_in = batch.tgt_in.copy()
        tgt_in[:, -1] = vocab.bos_id
        batch_b = Batch(
            batch.src_ids, batch.src_positions, batch.src_mask, batch.src_features,
            batch.feature_mask, tgt_in, batch.tgt_out, batch.tgt_mask,
            batch.src_token_types,
        )
        logits_b = model.forward(batch_b).data
        np.testing.assert_allclose(logits_a[:, :-1], logits_b[:, :-1], atol=1e-6)
        assert not np.allclose(logits_a[:, -1], logits_b[:, -1], atol=1e-6)

    def test_source_padding_invariance(self, setup_vanilla):
        model, vocab, variant, _ = setup_vanilla
        insts = make_instances()
        enc = encode_instance(insts[0], vocab, variant)
        batch1 = collate([enc], vocab)
        s = batch1.src_ids.shape[1]
        extra = 4
        batch2 = Batch(
            src_ids=np.pad(batch1.src_ids, ((0, 0), (0, extra)), constant_values=vocab.pad_id),
            src_positions=np.pad(batch1.src_positions, ((0, 0), (0, extra))),
            src_mask=np.pad(batch1.src_mask, ((0, 0), (0, extra))),
            src_features=np.pad(batch1.src_features, ((0, 0), (0, extra), (0, 0))),
            feature_mask=np.pad(batch1.feature_mask, ((0, 0), (0, extra))),
            tgt_in=batch1.tgt_in,
            tgt_out=batch1.tgt_out,
            tgt_mask=batch1.tgt_mask,
            src_token_types=np.pad(batch1.src_token_types, ((0, 0), (0, extra))),
        )
        la = model.forward(batch1).data
        lb = model.forward(batch2).data
        np.testing.assert_allclose(la, lb, atol=1e-5)
        del s

    def test_batch_order_equivariance(self, setup_vanilla):
        model, vocab, variant, batch = setup_vanilla
        insts = make_instances()
        encs = [encode_instance(i, vocab, variant) for i in insts]
        fwd = model.forward(collate(encs, vocab)).data
        rev = model.forward(collate(encs[::-1], vocab)).data
        np.testing.assert_allclose(fwd[0], rev[1], atol=1e-6)
        np.testing.assert_allclose(fwd[1], rev[0], atol=1e-6)


class TestTagEmbeddingInvariance:
    """Mechanism behind the variant split: pinned-position tag embeddings do
    not move when source forms change length; sequential ones do."""

    @staticmethod
    def final_tag_row(variant_name, forms):
        variant = get_variant(variant_name)
        chars = sorted(set("".join(forms)) | set("abcdefghijklmnopqrstuvwxyz"))
        vocab = Vocab(chars, variant.tag_scheme and [])
        vocab = build_vocab(["".join(chars)], variant)
        inst = ReinflectionInstance(
            "x",
            forms[0],
            CellTag("IND", 1, "SG"),
            forms[1],
            CellTag("IND", 2, "SG"),
            CellTag("SBJV", 3, "PL"),
            forms[2],
        )
        model = TransformerModel(tiny_config(variant_name, vocab))
        batch = collate([encode_instance(inst, vocab, variant)], vocab)
        emb = model.embed_source(batch).data
        tag_idx = np.flatnonzero(batch.src_token_types[0] == 0)
        return emb[0, tag_idx[-1]]

    def test_invariant_variants(self):
        for name in ("FEATURE_INVARIANT", "FEATURE_ONEHOT", "FEATURE_GEOMETRIC"):
            short = self.final_tag_row(name, ["ab", "ba", "aa"])
            long = self.final_tag_row(name, ["abbaba", "baabab", "aaa"])
            np.testing.assert_allclose(short, long, atol=1e-6)

    def test_sequential_variants_shift(self):
        for name in ("VANILLA", "CHAR_SEPARATED"):
            short = self.final_tag_row(name, ["ab", "ba", "aa"])
            long = self.final_tag_row(name, ["abbaba", "baabab", "aaa"])
            assert np.max(np.abs(short - long)) > 1e-3

    def test_tag_pe_zero_off_removes_pe(self):
        insts = make_instances()
        variant = get_variant("FEATURE_ONEHOT")
        vocab = build_vocab(
            [f for i in insts for f in (i.src1_form, i.src2_form, i.tgt_form)], variant
        )
        m_on = TransformerModel(tiny_config("FEATURE_ONEHOT", vocab, tag_pe_zero=True))
        m_off = TransformerModel(tiny_config("FEATURE_ONEHOT", vocab, tag_pe_zero=False))
        batch = collate([encode_instance(insts[0], vocab, variant)], vocab)
        tag_idx = np.flatnonzero(batch.src_token_types[0] == 0)
        e_on = m_on.embed_source(batch).data[0, tag_idx[0]]
        e_off = m_off.embed_source(batch).data[0, tag_idx[0]]
        # Identical init; difference at a tag row is exactly PE row 0.
        np.testing.assert_allclose(e_on - e_off, m_on.pe[0], atol=1e-6)


class TestGradCheckFullModel:
    def test_small_float64_model(self, setup_vanilla):
        _, vocab, variant, _ = setup_vanilla
        insts = make_instances()
        cfg = tiny_config("VANILLA", vocab, d_model=16, n_heads=2, n_layers=1,
                          d_ff=24, dtype="float64")
        model = TransformerModel(cfg)
        batch = collate([encode_instance(i, vocab, variant) for i in insts], vocab)
        params = list(model.parameters().values())
        res = check_gradients(
            lambda: model.loss(batch), params, tol=1e-6, max_coords_per_param=4, seed=1
        )
        assert res.ok, f"{res.worst_param}: {res.max_rel_err}"
        assert res.n_checked >= 4 * len(params) * 0.5


def enumerate_scored(model, vocab, batch, max_len):
    """Brute force: teacher-force every EOS-terminated sequence up to
    max_len generated tokens; return [(score, tokens)] best first."""
    chars = [i for i in range(vocab.decoder_size) if i not in (vocab.local_pad, vocab.local_eos)]
    results = []
    with no_grad():
        memory = model.encode(batch)
        for m in range(1, max_len + 1):
            for body in itertools.product(chars, repeat=m - 1):
                tokens = list(body) + [vocab.local_eos]
                tgt_in = np.array(
                    [[vocab.bos_id] + [int(vocab.decoder_ids[t]) for t in body]]
                )
                logits = model.decode(
                    memory, batch, tgt_in=tgt_in, tgt_real=np.ones_like(tgt_in, bool)
                ).data[0].astype(np.float64)
                logp = logits - _logsumexp(logits)
                total = sum(float(logp[i, tokens[i]]) for i in range(m))
                results.append((total / m, total, tokens))
    results.sort(key=lambda r: -r[0])
    return results


def greedy_oracle(model, vocab, batch, max_len):
    tokens = []
    with no_grad():
        memory = model.encode(batch)
        for step in range(1, max_len + 1):
            tgt_in = np.array([[vocab.bos_id] + [int(vocab.decoder_ids[t]) for t in tokens]])
            logits = model.decode(
                memory, batch, tgt_in=tgt_in, tgt_real=np.ones_like(tgt_in, bool)
            ).data[0, -1].astype(np.float64)
            logits[vocab.local_pad] = -np.inf
            nxt = int(np.argmax(logits)) if step < max_len else vocab.local_eos
            tokens.append(nxt)
            if nxt == vocab.local_eos:
                break
    return tokens


@pytest.fixture(scope="module")
def tiny_search_setup():
    # float64 so teacher-forced and incremental scoring agree to ~1e-13;
    # in float32 the differing matmul widths leave ~1e-7 noise.
    variant = get_variant("VANILLA")
    vocab = build_vocab(["ab", "ba", "aa"], variant)  # decoder classes: PAD, EOS, a, b
    model = TransformerModel(tiny_config("VANILLA", vocab, d_model=16, n_layers=1,
                                         n_heads=2, d_ff=16, init_seed=3,
                                         dtype="float64"))
    inst = ReinflectionInstance(
        "x", "ab", CellTag("IND", 1, "SG"), "ba", CellTag("IND", 2, "SG"),
        CellTag("SBJV", 3, "PL"), "aa",
    )
    batch = collate([encode_instance(inst, vocab, variant)], vocab)
    return model, vocab, batch


class TestBeamSearch:
    def test_beam_one_equals_greedy(self, tiny_search_setup):
        model, vocab, batch = tiny_search_setup
        hyps = model.beam_search(batch, vocab, beam_size=1, max_len=6)[0]
        assert hyps[0].tokens == greedy_oracle(model, vocab, batch, max_len=6)

    def test_wide_beam_equals_exhaustive(self, tiny_search_setup):
        model, vocab, batch = tiny_search_setup
        max_len = 4
        brute = enumerate_scored(model, vocab, batch, max_len)
        hyps = model.beam_search(batch, vocab, beam_size=32, max_len=max_len)[0]
        assert hyps[0].tokens == brute[0][2]
        assert hyps[0].score == pytest.approx(brute[0][0], rel=1e-9)
        # With no pruning possible, the whole returned set must match.
        got = {tuple(h.tokens): h.score for h in hyps}
        want = {tuple(t): s for s, _, t in brute}
        assert got.keys() == want.keys()
        for toks, s in got.items():
            assert s == pytest.approx(want[toks], rel=1e-9)

    def test_all_hypotheses_terminated(self, tiny_search_setup):
        model, vocab, batch = tiny_search_setup
        for h in model.beam_search(batch, vocab, beam_size=5, max_len=5)[0]:
            assert h.finished and h.tokens[-1] == vocab.local_eos

    def test_deterministic(self, tiny_search_setup):
        model, vocab, batch = tiny_search_setup
        a = model.beam_search(batch, vocab, beam_size=5, max_len=6)
        b = model.beam_search(batch, vocab, beam_size=5, max_len=6)
        assert [(h.tokens, h.logprob) for h in a[0]] == [(h.tokens, h.logprob) for h in b[0]]

    def test_chunking_matches_single_batch(self, setup_vanilla):
        model, vocab, variant, batch = setup_vanilla
        whole = model.beam_search(batch, vocab, beam_size=3, max_len=8, chunk_size=1000)
        chunked = model.beam_search(batch, vocab, beam_size=3, max_len=8, chunk_size=3)
        for w, c in zip(whole, chunked):
            assert [h.tokens for h in w] == [h.tokens for h in c]
            np.testing.assert_allclose(
                [h.logprob for h in w], [h.logprob for h in c], rtol=1e-5, atol=1e-6
            )

    def test_predict_forms_decodes_strings(self, setup_vanilla):
        model, vocab, variant, batch = setup_vanilla
        forms = model.predict_forms(batch, vocab, beam_size=2, max_len=8)
        assert len(forms) == 2
        for f in forms:
            assert isinstance(f, str)
            assert all(ch in vocab.chars for ch in f)

    def test_scores_are_length_normalized(self):
        h = BeamHypothesis([4, 5, 1], -1.5, True)
        assert h.score == pytest.approx(-0.5)
