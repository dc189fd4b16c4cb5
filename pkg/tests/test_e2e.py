import math

import numpy as np
import pytest

from neurospeech.e2e import (
    DecoderConfig,
    E2EConfig,
    EndToEndModel,
    LoraLinear,
    ModalityAligner,
    ProjectorMLP,
    TokenVocab,
    ToyDecoderLM,
    attach_lora,
    contrastive_loss,
    e2e_losses,
    e2e_train_step,
    info_nce,
    lora_parameter_count,
    nucleus_filter,
    nucleus_sample,
    pretrain_lm,
)
from neurospeech.encoder import EncoderModel, PatchConfig
from neurospeech.numerics import AdamW, F, Linear, Tensor, grad_check, stream
from neurospeech.synthdata import Lexicon, SimConfig, generate_dataset, zscore_by_day

WORDS = ["go", "no", "yes", "up", "down", "stop"]


def _vocab():
    return TokenVocab(WORDS)


def test_vocab_layout():
    v = _vocab()
    assert v.tokens[:3] == ["<pad>", "<bos>", "<eos>"]
    assert len(v.prompt_ids) == 9
    assert v.decode(v.encode(["go", "stop"]) + [v.eos, v.index["no"]]) == ["go", "stop"]
    assert v.output_mask().sum() == len(WORDS) + 1


def test_projector_shapes_zero_and_gradcheck():
    proj = ProjectorMLP(6, 10, seed=0)
    assert proj(Tensor(np.zeros((3, 6)))).data.tolist() == np.zeros((3, 10)).tolist()
    x = Tensor(np.random.default_rng(0).normal(size=(2, 5, 6)))
    assert proj(x).shape == (2, 5, 10)
    with pytest.raises(ValueError):
        proj(Tensor(np.zeros((3, 7))))
    w = Tensor(np.random.default_rng(1).normal(size=(2, 5, 10)))
    assert grad_check(lambda: (proj(x) * w).sum(), proj.parameters()) < 1e-3


def test_lora_identity_at_init_and_counts():
    rng = stream(0, "t")
    base = Linear(6, 4, rng)
    x = Tensor(rng.normal(size=(3, 6)))
    ref = base(x).data.copy()
    ad = LoraLinear(base, r=2, alpha=4, dropout=0.0, rng=rng)
    assert np.array_equal(ad(x).data, ref)
    assert all(not p.requires_grad for p in base.parameters())
    ad.lora_b.data[:] = 1.0
    ad.scale = 0.0
    assert np.array_equal(ad(x).data, ref)

    lm = ToyDecoderLM(_vocab(), DecoderConfig(dim=16, depth=2, n_heads=2), seed=0)
    adapters = attach_lora(lm, lm.blocks, r=8)
    assert len(adapters) == 12
    assert lm.num_parameters(trainable_only=True) == lora_parameter_count(adapters)
    expected = 2 * (4 * 8 * (16 + 16) + 8 * (16 + 64) + 8 * (64 + 16))
    assert lora_parameter_count(adapters) == expected


def test_lora_gradcheck():
    rng = stream(1, "t")
    ad = LoraLinear(Linear(5, 4, rng), r=3, alpha=6, dropout=0.0, rng=rng)
    ad.lora_b.data[:] = rng.normal(size=ad.lora_b.shape)
    x = Tensor(rng.normal(size=(4, 5)))
    w = Tensor(rng.normal(size=(4, 4)))
    assert grad_check(lambda: (ad(x) * w).sum(), [ad.lora_a, ad.lora_b]) < 1e-3


def test_lora_model_output_unchanged_at_step_zero():
    v = _vocab()
    lm = ToyDecoderLM(v, DecoderConfig(dim=16, depth=2, n_heads=2), seed=3)
    lm.eval()
    ids = np.array([v.prompt_ids + v.encode(["go", "up"])])
    before = lm(ids).data.copy()
    attach_lora(lm, lm.blocks)
    lm.eval()
    assert np.array_equal(lm(ids).data, before)


@pytest.mark.parametrize("B", [2, 4, 8])
def test_contrastive_identical_embeddings(B):
    z = Tensor(np.tile(np.array([[0.6, 0.8, 0.0]]), (B, 1)))
    assert info_nce(z, z, 0.1).item() == pytest.approx(math.log(B), abs=1e-6)


def test_contrastive_orthogonal_pairs():
    z = Tensor(np.eye(4))
    assert info_nce(z, z, 0.01).item() < 1e-3


def test_contrastive_hand_computed():
    zs = np.array([[1.0, 0.0], [0.6, 0.8]])
    zt = np.array([[0.8, 0.6], [0.0, 1.0]])
    tau = 0.5
    s = zs @ zt.T / tau
    row = -np.log(np.exp(np.diag(s)) / np.exp(s).sum(1))
    col = -np.log(np.exp(np.diag(s)) / np.exp(s).sum(0))
    expect = (row.sum() + col.sum()) / 4
    assert info_nce(Tensor(zs), Tensor(zt), tau).item() == pytest.approx(expect, abs=1e-6)


def test_contrastive_rotation_invariant_and_batch_check():
    rng = np.random.default_rng(0)
    zs = rng.normal(size=(5, 4))
    zt = rng.normal(size=(5, 4))
    zs /= np.linalg.norm(zs, axis=1, keepdims=True)
    zt /= np.linalg.norm(zt, axis=1, keepdims=True)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a = info_nce(Tensor(zs), Tensor(zt), 0.1).item()
    b = info_nce(Tensor(zs @ q), Tensor(zt @ q), 0.1).item()
    assert abs(a - b) < 1e-5
    with pytest.raises(ValueError):
        info_nce(Tensor(zs[:1]), Tensor(zt[:1]), 0.1)
    al = ModalityAligner(4, 3)
    with pytest.raises(ValueError):
        contrastive_loss(Tensor(zs[None, :1]), Tensor(zt[None, :1]), al)


def test_contrastive_gradcheck():
    rng = np.random.default_rng(1)
    al = ModalityAligner(6, 4, seed=0)
    ns = Tensor(rng.normal(size=(4, 3, 6)))
    ts = Tensor(rng.normal(size=(4, 5, 6)))
    mask = np.array([[1, 1, 1, 1, 0]] * 4, dtype=bool)
    assert grad_check(lambda: contrastive_loss(ns, ts, al, text_mask=mask), al.parameters()) < 1e-3


def test_tau_clamp():
    al = ModalityAligner(4, 3)
    assert al.tau.data[0] == pytest.approx(0.1)
    al.tau.data[:] = 500.0
    al.clamp_tau()
    assert al.tau.data[0] == 100.0
    al.tau.data[:] = -1.0
    al.clamp_tau()
    assert 0 < al.tau.data[0] <= 100.0


def test_nucleus_filter_rule():
    p = np.array([0.1, 0.5, 0.25, 0.15])
    np.testing.assert_allclose(nucleus_filter(p, 0.7), [0, 0.5 / 0.75, 0.25 / 0.75, 0])
    np.testing.assert_allclose(nucleus_filter(p, 1e-9), [0, 1, 0, 0])
    np.testing.assert_allclose(nucleus_filter(p, 1.0), p)


def _tiny_e2e(seed=0):
    ds = zscore_by_day(generate_dataset(SimConfig(n_sessions=1, trials_per_session=12, channels=8, seed=seed)))
    lex = Lexicon.default()
    enc = EncoderModel(PatchConfig(channels=8, embed_dim=16, n_heads=2, depth=1), seed=seed)
    lm = ToyDecoderLM(TokenVocab(lex.words), DecoderConfig(dim=16, depth=1, n_heads=2), seed=seed)
    model = EndToEndModel(enc, lm, E2EConfig(seed=seed, shared_dim=8))
    return model, ds.trials()


def test_nucleus_greedy_limit_and_determinism():
    model, trials = _tiny_e2e()
    lm = model.lm
    prefix = np.random.default_rng(0).normal(size=(6, 16)).astype(np.float32)
    a = nucleus_sample(lm, prefix, stream(0, "s"), p=1e-9, temperature=0.7, max_new=5)
    b = nucleus_sample(lm, prefix, stream(5, "s"), p=1e-9, temperature=2.0, max_new=5)
    assert a[0] == b[0]
    c = nucleus_sample(lm, prefix, stream(1, "s"), max_new=5)
    assert c == nucleus_sample(lm, prefix, stream(1, "s"), max_new=5)
    assert len(c[0]) <= 5


def test_ce_only_on_target_positions():
    model, trials = _tiny_e2e()
    model.eval()
    batch = trials[:3]
    from neurospeech.encoder import make_batch

    x, _, lengths = make_batch(batch, 5)
    neural = model.neural_tokens(x, lengths)
    targets = [model.vocab.encode(t.transcript) for t in batch]
    h, key_mask, ce_t, ce_w, _, _ = model.build_inputs(neural, lengths, targets)
    h.retain_grad = True
    logits = model.lm.forward_embeddings(h, key_mask)
    logits.retain_grad = True
    F.cross_entropy(logits, ce_t, ce_w).backward()
    P, n_prompt = neural.shape[1], 9
    # logits before the last prompt token never feed the CE term
    assert not logits.grad[:, : P + n_prompt - 1].any()
    for i, t in enumerate(targets):
        assert ce_w[i].sum() == len(t) + 1
        assert ce_t[i, P + n_prompt - 1 + len(t)] == model.vocab.eos


def test_total_loss_is_sum_and_uniform_start():
    model, trials = _tiny_e2e()
    model.eval()
    ce, con, total = e2e_losses(model, trials[:4])
    assert total.item() == pytest.approx(ce.item() + con.item(), abs=1e-6)
    # an untrained decoder is close to uniform over its vocabulary
    assert abs(ce.item() - math.log(len(model.vocab))) < 0.5


def test_train_step_updates_and_keeps_tau_bounded():
    model, trials = _tiny_e2e()
    frozen = {id(p): p.data.copy() for p in model.lm.parameters() if not p.requires_grad}
    opt = AdamW(model.trainable_parameters(), lr=1e-2)
    rng = stream(0, "e2e")
    for _ in range(3):
        ce, con = e2e_train_step(model, trials[:4], opt, rng)
        assert np.isfinite(ce) and np.isfinite(con)
        assert 0 < model.aligner.tau.data[0] <= 100
    for p in model.lm.parameters():
        if id(p) in frozen:
            assert np.array_equal(p.data, frozen[id(p)])


def test_lm_pretraining_learns_corpus():
    v = _vocab()
    lm = ToyDecoderLM(v, DecoderConfig(dim=16, depth=1, n_heads=2, dropout=0.0), seed=0)
    corpus = [["go", "up"], ["no", "down"]] * 10
    losses = pretrain_lm(lm, corpus, steps=150, batch_size=8, lr=1e-2)
    assert np.mean(losses[-10:]) < 0.6 * losses[0]
    assert lm.sentence_logprob(["go", "up"]) > lm.sentence_logprob(["up", "go"])
