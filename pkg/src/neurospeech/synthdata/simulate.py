"""Synthetic multi-session recordings driven by phoneme sequences.

Each trial is a sentence rendered as a silence-delimited phoneme string. Every
phoneme holds for a random number of 20 ms bins; a fixed tuning matrix turns
the current phoneme into per-electrode firing rates, which each recording day
distorts with its own gain and offset. Spike-count channels are Poisson draws
from those rates and the SBP proxy channels are a smoothed copy of the rates
plus Gaussian noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..ctc import SIL_ID
from ..numerics.random import stream
from .lexicon import Lexicon


@dataclass
class SimConfig:
    n_sessions: int = 4
    trials_per_session: int = 150
    channels: int = 128
    phoneme_dwell_bins: tuple[int, int] = (3, 10)
    session_gain_std: float = 0.2
    session_offset_std: float = 0.3
    base_rate: float = 1.5
    tuning_strength: float = 0.8
    sbp_noise_std: float = 1.0
    words_per_sentence: tuple[int, int] = (3, 8)
    seed: int = 0
    subject: str = "S1"

    def __post_init__(self):
        self.phoneme_dwell_bins = tuple(int(v) for v in self.phoneme_dwell_bins)
        self.words_per_sentence = tuple(int(v) for v in self.words_per_sentence)
        for name in ("n_sessions", "trials_per_session", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.channels < 2:
            raise ValueError("need at least one spike and one SBP channel")
        lo, hi = self.phoneme_dwell_bins
        if not 1 <= lo <= hi:
            raise ValueError(f"empty dwell range {self.phoneme_dwell_bins}")
        lo, hi = self.words_per_sentence
        if not 1 <= lo <= hi:
            raise ValueError(f"empty sentence-length range {self.words_per_sentence}")

    @property
    def n_spike(self) -> int:
        return self.channels // 2

    @property
    def n_sbp(self) -> int:
        return self.channels - self.n_spike

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trial:
    features: np.ndarray  # T x C float32
    transcript: list[str]
    phonemes: list[int]
    bin_phonemes: np.ndarray | None = None  # per-bin phoneme index
    bin_words: np.ndarray | None = None  # per-bin word position, -1 in silence
    uid: tuple[int, int] = (0, 0)

    @property
    def n_bins(self) -> int:
        return self.features.shape[0]

    @property
    def sentence(self) -> str:
        return " ".join(self.transcript)


@dataclass
class Session:
    day_index: int
    trials: list[Trial]
    subject: str = "S1"


@dataclass
class NeuralDataset:
    sessions: list[Session]
    n_spike: int
    n_sbp: int
    lexicon_hash: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.n_spike + self.n_sbp

    def trials(self) -> list[Trial]:
        return [t for s in self.sessions for t in s.trials]

    def __len__(self) -> int:
        return sum(len(s.trials) for s in self.sessions)

    def subjects(self) -> list[str]:
        return sorted({s.subject for s in self.sessions})

    def with_sessions(self, sessions: list[Session]) -> "NeuralDataset":
        return NeuralDataset(sessions, self.n_spike, self.n_sbp, self.lexicon_hash, dict(self.meta))


def poisson_inversion(rate: np.ndarray, rng: np.random.Generator, switch: float = 30.0) -> np.ndarray:
    """Poisson draws by CDF inversion below ``switch``, rounded normal above."""
    rate = np.asarray(rate, dtype=np.float64)
    out = np.zeros(rate.shape, dtype=np.int64)
    u = rng.random(rate.shape)
    small = rate < switch
    lam = np.where(small, rate, 0.0)
    p = np.exp(-lam)
    cdf = p.copy()
    active = small & (u > cdf)
    k = 0
    while active.any():
        k += 1
        p = p * lam / k
        cdf = cdf + p
        out[active] = k
        active = active & (u > cdf)
        if k > 200:
            break
    big = ~small
    if big.any():
        z = rng.standard_normal(int(big.sum()))
        out[big] = np.maximum(0, np.rint(rate[big] + np.sqrt(rate[big]) * z)).astype(np.int64)
    return out


def gaussian_kernel(sigma: float, truncate: float = 4.0) -> np.ndarray:
    if sigma <= 0:
        return np.ones(1)
    radius = int(np.ceil(truncate * sigma))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth_time(x: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian smoothing along axis 0 (zero padded, same length)."""
    k = gaussian_kernel(sigma)
    if k.size == 1:
        return x.copy()
    r = k.size // 2
    pad = np.pad(x, [(r, r)] + [(0, 0)] * (x.ndim - 1))
    out = np.zeros_like(x, dtype=np.float64)
    for i, w in enumerate(k):
        out += w * pad[i : i + x.shape[0]]
    return out


class Simulator:
    """Holds the fixed tuning and per-session distortions for one config."""

    def __init__(self, cfg: SimConfig, lexicon: Lexicon):
        if len(lexicon) == 0:
            raise ValueError("lexicon is empty")
        self.cfg = cfg
        self.lexicon = lexicon
        rng = stream(cfg.seed, "tuning")
        # rows: 39 phonemes + silence
        self.tuning = rng.standard_normal((SIL_ID + 1, cfg.n_spike))
        self.sbp_scale = rng.uniform(0.5, 1.5, size=cfg.n_sbp)
        self.session_gain = []
        self.session_offset = []
        for s in range(cfg.n_sessions):
            r = stream(cfg.seed, "session", s)
            self.session_gain.append(np.exp(r.normal(0.0, cfg.session_gain_std, size=cfg.n_spike)))
            self.session_offset.append(r.normal(0.0, cfg.session_offset_std, size=cfg.n_spike))

    def rates(self, bin_phonemes: np.ndarray, session: int) -> np.ndarray:
        cfg = self.cfg
        base = cfg.base_rate * np.exp(cfg.tuning_strength * self.tuning[bin_phonemes])
        rate = base * self.session_gain[session] + self.session_offset[session] * cfg.base_rate
        return np.maximum(rate, 0.05)

    def sample_sentence(self, rng: np.random.Generator) -> list[str]:
        lo, hi = self.cfg.words_per_sentence
        n = int(rng.integers(lo, hi + 1))
        return [self.lexicon.words[i] for i in rng.integers(0, len(self.lexicon), size=n)]

    def trial(self, session: int, index: int) -> Trial:
        cfg = self.cfg
        rng = stream(cfg.seed, "trial", session, index)
        words = self.sample_sentence(rng)
        labels = [SIL_ID]
        word_of = [-1]
        for w_pos, w in enumerate(words):
            ids = self.lexicon.phoneme_ids(w)
            labels += ids + [SIL_ID]
            word_of += [w_pos] * len(ids) + [-1]
        lo, hi = cfg.phoneme_dwell_bins
        dwell = rng.integers(lo, hi + 1, size=len(labels))
        bin_ph = np.repeat(np.array(labels), dwell)
        bin_w = np.repeat(np.array(word_of), dwell)
        rate = self.rates(bin_ph, session)
        spikes = poisson_inversion(rate, rng)
        n_sbp = cfg.n_sbp
        src = rate[:, np.arange(n_sbp) % cfg.n_spike]
        sbp = smooth_time(src, 1.0) * self.sbp_scale + rng.normal(0.0, cfg.sbp_noise_std, size=src.shape)
        feats = np.concatenate([spikes.astype(np.float64), sbp], axis=1).astype(np.float32)
        return Trial(feats, words, labels, bin_ph, bin_w, uid=(session, index))


def generate_dataset(cfg: SimConfig, lexicon: Lexicon | None = None) -> NeuralDataset:
    """Simulate ``n_sessions x trials_per_session`` trials; deterministic in ``cfg.seed``."""
    lexicon = Lexicon.default() if lexicon is None else lexicon
    if len(lexicon) == 0:
        raise ValueError("lexicon is empty")
    sim = Simulator(cfg, lexicon)
    sessions = [
        Session(s, [sim.trial(s, i) for i in range(cfg.trials_per_session)], subject=cfg.subject)
        for s in range(cfg.n_sessions)
    ]
    return NeuralDataset(sessions, cfg.n_spike, cfg.n_sbp, lexicon.digest(), {"sim": cfg.to_dict()})
