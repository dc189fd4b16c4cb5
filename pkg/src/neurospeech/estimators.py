"""scikit-learn style wrappers around the decoding stages.

Every estimator takes trials (a ``NeuralDataset`` or a list of ``Trial``) as
``X``. Targets live on the trials, so ``y`` is accepted and ignored.
"""

from __future__ import annotations

import copy
from dataclasses import replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import ctc
from .analysis.alignment import corpus_wer
from .cascade import DecodeParams, PhonemeTrie, beam_search, rescore, train_ngram
from .e2e import DecoderConfig, E2EConfig, EndToEndModel, TokenVocab, ToyDecoderLM, decode_trials, pretrain_lm, train_e2e
from .encoder import EncoderModel, MaskConfig, PatchConfig, TrainConfig, finetune_ctc, make_batch, predict_log_probs, pretrain
from .encoder.training import evaluate_r2
from .numerics import no_grad
from .synthdata import Lexicon, NeuralDataset, Trial
from .synthdata.preprocess import session_moments


def check_trials(X, channels: int | None = None) -> list[Trial]:
    """Validate trials and return them as a list.

    Feature matrices must be finite 2-D float arrays with a shared channel
    count (equal to ``channels`` when given).
    """
    if isinstance(X, NeuralDataset):
        trials = X.trials()
    elif isinstance(X, Trial):
        trials = [X]
    else:
        trials = list(X)
    if not trials:
        raise ValueError("no trials given")
    seen = channels
    for i, t in enumerate(trials):
        if not isinstance(t, Trial):
            raise TypeError(f"item {i} is {type(t).__name__}, expected Trial")
        check_array(t.features, dtype=[np.float32, np.float64], ensure_min_samples=1)
        if seen is None:
            seen = t.features.shape[1]
        elif t.features.shape[1] != seen:
            raise ValueError(f"trial {i} has {t.features.shape[1]} channels, expected {seen}")
    return trials


def check_dataset(X) -> NeuralDataset:
    if not isinstance(X, NeuralDataset):
        raise TypeError(f"expected a NeuralDataset, got {type(X).__name__}")
    check_trials(X)
    return X


class SessionZScorer(TransformerMixin, BaseEstimator):
    """Per-session channel standardisation keyed by recording day."""

    def __init__(self, eps: float = 1e-8):
        self.eps = eps

    def fit(self, X, y=None):
        ds = check_dataset(X)
        self.moments_ = {s.day_index: session_moments(s) for s in ds.sessions}
        self.n_features_in_ = ds.channels
        return self

    def transform(self, X):
        check_is_fitted(self, "moments_")
        ds = check_dataset(X)
        sessions = []
        for s in ds.sessions:
            if s.day_index not in self.moments_:
                raise ValueError(f"session {s.day_index} was not seen during fit")
            mu, sd = self.moments_[s.day_index]
            flat = sd <= self.eps
            safe = np.where(flat, 1.0, sd)
            trials = []
            for t in s.trials:
                z = (t.features - mu) / safe
                z[:, flat] = 0.0
                trials.append(replace(t, features=z.astype(np.float32)))
            sessions.append(type(s)(s.day_index, trials, s.subject))
        out = ds.with_sessions(sessions)
        out.meta["zscored"] = True
        return out


def _resolve_patch(patch: PatchConfig | None, trials: Sequence[Trial]) -> PatchConfig:
    channels = trials[0].features.shape[1]
    if patch is None:
        return PatchConfig(channels=channels)
    if patch.channels != channels:
        raise ValueError(f"patch config expects {patch.channels} channels, data has {channels}")
    return patch


class MaskedPretrainer(TransformerMixin, BaseEstimator):
    """Self-supervised masked-patch reconstruction; ``transform`` yields latents."""

    def __init__(self, patch=None, steps=600, batch_size=32, lr=1e-3, mask_ratio=0.5, max_span=15, subject="S1", seed=0):
        self.patch = patch
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.mask_ratio = mask_ratio
        self.max_span = max_span
        self.subject = subject
        self.seed = seed

    def _mask(self) -> MaskConfig:
        return MaskConfig(self.mask_ratio, self.max_span)

    def fit(self, X, y=None, X_val=None):
        trials = check_trials(X)
        val = check_trials(X_val, trials[0].features.shape[1]) if X_val is not None else []
        self.encoder_ = EncoderModel(_resolve_patch(self.patch, trials), seed=self.seed, subjects=(self.subject,))
        cfg = TrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr, seed=self.seed)
        self.result_ = pretrain(self.encoder_, trials, val, self.subject, cfg, self._mask())
        self.n_features_in_ = trials[0].features.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        trials = check_trials(X, self.n_features_in_)
        self.encoder_.eval()
        out = []
        with no_grad():
            for t in trials:
                x, _, lengths = make_batch([t], self.encoder_.cfg.t_patch)
                out.append(self.encoder_.encode(x, self.subject, lengths).data[0])
        return out

    def score(self, X, y=None):
        """Masked-patch R^2 on ``X``."""
        check_is_fitted(self, "encoder_")
        return evaluate_r2(self.encoder_, check_trials(X, self.n_features_in_), self.subject, self._mask(), self.seed)


def _encoder_from(source) -> EncoderModel | None:
    """A private copy of the encoder held by ``source`` (a model or a fitted estimator)."""
    if source is None:
        return None
    if isinstance(source, EncoderModel):
        return copy.deepcopy(source)
    check_is_fitted(source, "encoder_")
    return copy.deepcopy(source.encoder_)


class PhonemeDecoder(BaseEstimator):
    """CTC fine-tuning of an (optionally pretrained) encoder; predicts phoneme ids."""

    def __init__(self, encoder=None, patch=None, steps=600, batch_size=32, lr=1e-3, subject="S1", seed=0):
        self.encoder = encoder
        self.patch = patch
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.subject = subject
        self.seed = seed

    def fit(self, X, y=None, X_val=None):
        trials = check_trials(X)
        val = check_trials(X_val, trials[0].features.shape[1]) if X_val is not None else []
        enc = _encoder_from(self.encoder)
        if enc is None:
            enc = EncoderModel(_resolve_patch(self.patch, trials), seed=self.seed, subjects=(self.subject,))
        self.encoder_ = enc
        cfg = TrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr, seed=self.seed)
        self.result_ = finetune_ctc(enc, trials, val, self.subject, cfg)
        self.n_features_in_ = trials[0].features.shape[1]
        return self

    def predict_log_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "encoder_")
        return predict_log_probs(self.encoder_, check_trials(X, self.n_features_in_), self.subject)

    def predict(self, X) -> list[list[int]]:
        return [ctc.greedy_decode(lp) for lp in self.predict_log_proba(X)]

    def score(self, X, y=None):
        """1 - PER."""
        trials = check_trials(X)
        return 1.0 - ctc.corpus_per([t.phonemes for t in trials], self.predict(trials))


class CascadedSentenceDecoder(BaseEstimator):
    """Phoneme log-probs -> lexicon beam search with n-gram fusion -> optional rescoring.

    ``fit`` trains the n-gram model on the transcripts of ``X`` (plus
    ``corpus`` when given). ``phoneme_decoder`` must already be fitted.
    """

    def __init__(
        self,
        phoneme_decoder=None,
        lexicon=None,
        ngram_order=5,
        discount=0.5,
        beam_size=100,
        acoustic_scale=1.0,
        blank_penalty=90.0,
        penalty_units="nats_per_10",
        n_best=10,
        rescore_alpha=0.55,
        rescore_lm=None,
    ):
        self.phoneme_decoder = phoneme_decoder
        self.lexicon = lexicon
        self.ngram_order = ngram_order
        self.discount = discount
        self.beam_size = beam_size
        self.acoustic_scale = acoustic_scale
        self.blank_penalty = blank_penalty
        self.penalty_units = penalty_units
        self.n_best = n_best
        self.rescore_alpha = rescore_alpha
        self.rescore_lm = rescore_lm

    def params_(self) -> DecodeParams:
        return DecodeParams(
            beam_size=self.beam_size,
            acoustic_scale=self.acoustic_scale,
            blank_penalty=self.blank_penalty,
            penalty_units=self.penalty_units,
            rescore_alpha=self.rescore_alpha,
            n_best=self.n_best,
        )

    def fit(self, X, y=None, corpus=None):
        if self.phoneme_decoder is None:
            raise ValueError("phoneme_decoder is required")
        check_is_fitted(self.phoneme_decoder, "encoder_")
        trials = check_trials(X)
        lex = self.lexicon or Lexicon.default()
        sentences = [t.transcript for t in trials] + [list(s) for s in (corpus or [])]
        self.lm_ = train_ngram(sentences, self.ngram_order, self.discount, vocabulary=lex.words)
        self.trie_ = PhonemeTrie(lex)
        self.decode_params_ = self.params_()
        return self

    def predict_nbest(self, X):
        check_is_fitted(self, "lm_")
        lps = self.phoneme_decoder.predict_log_proba(X)
        return [beam_search(lp, self.trie_, self.lm_, self.decode_params_) for lp in lps]

    def predict(self, X) -> list[str]:
        out = []
        for nbest in self.predict_nbest(X):
            if not nbest:
                out.append("")
                continue
            best = rescore(nbest, self.rescore_lm, self.rescore_alpha, self.acoustic_scale)
            out.append(best.sentence)
        return out

    def score(self, X, y=None):
        """1 - WER."""
        trials = check_trials(X)
        return 1.0 - corpus_wer([t.sentence for t in trials], self.predict(trials))


class EndToEndDecoder(BaseEstimator):
    """Encoder -> projector -> LoRA-adapted decoder LM, sampled with nucleus decoding."""

    def __init__(self, encoder=None, decoder=None, steps=600, lm_pretrain_steps=400, lr=1e-3, contrastive=True, lexicon=None, subject="S1", seed=0):
        self.encoder = encoder
        self.decoder = decoder
        self.steps = steps
        self.lm_pretrain_steps = lm_pretrain_steps
        self.lr = lr
        self.contrastive = contrastive
        self.lexicon = lexicon
        self.subject = subject
        self.seed = seed

    def config_(self) -> E2EConfig:
        return E2EConfig(
            decoder=self.decoder or DecoderConfig(),
            steps=self.steps,
            lm_pretrain_steps=self.lm_pretrain_steps,
            lr=self.lr,
            contrastive=self.contrastive,
            seed=self.seed,
        )

    def fit(self, X, y=None, X_val=None):
        trials = check_trials(X)
        val = check_trials(X_val, trials[0].features.shape[1]) if X_val is not None else []
        enc = _encoder_from(self.encoder)
        ctc_initialised = enc is not None
        if enc is None:
            enc = EncoderModel(PatchConfig(channels=trials[0].features.shape[1]), seed=self.seed, subjects=(self.subject,))
        cfg = self.config_()
        lex = self.lexicon or Lexicon.default()
        lm = ToyDecoderLM(TokenVocab(lex.words), cfg.decoder, seed=self.seed)
        self.lm_losses_ = pretrain_lm(lm, [t.transcript for t in trials], steps=cfg.lm_pretrain_steps, seed=self.seed)
        self.model_ = EndToEndModel(enc, lm, cfg, self.subject)
        self.result_ = train_e2e(self.model_, trials, val, cfg, ctc_initialized=ctc_initialised)
        self.n_features_in_ = trials[0].features.shape[1]
        return self

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "model_")
        trials = check_trials(X, self.n_features_in_)
        return [" ".join(words) for words, _ in decode_trials(self.model_, trials, self.seed)]

    def score(self, X, y=None):
        """1 - WER."""
        trials = check_trials(X)
        return 1.0 - corpus_wer([t.sentence for t in trials], self.predict(trials))
