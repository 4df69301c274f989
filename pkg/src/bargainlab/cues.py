"""Sentiment and strategic-posture cues, plus templated message rendering."""

from __future__ import annotations

import json
import math
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .core import CueParams, Decision, FamilyProfile, Posture, Role, Sentiment, Stance, POSTURES, SENTIMENTS

DEFAULT_CUES = CueParams()

_COLLAPSED = {"collapsed": (Sentiment.NEUTRAL, Posture.HOLD), "pressure": (Sentiment.NEGATIVE, Posture.PRESSURE)}


def _onehot(i: int) -> np.ndarray:
    v = np.zeros(3)
    v[i] = 1.0
    return v


def concession_magnitude(price: float, prev: float, r_b, params: CueParams = DEFAULT_CUES):
    """Counterpart's move relative to its remaining room, capped at 1."""
    return np.minimum(1.0, np.abs(price - prev) / (np.abs(prev - r_b) + params.eps_c))


def sentiment_probs(stance: Stance, prof: FamilyProfile, params: CueParams = DEFAULT_CUES) -> np.ndarray:
    """P(Positive, Neutral, Negative | stance) under the thresholded latent score."""
    if prof.cue_channel in _COLLAPSED:
        return _onehot(SENTIMENTS.index(_COLLAPSED[prof.cue_channel][0]))
    return sentiment_probs_by_index(stance.index, prof, params)


def sentiment_probs_by_index(stance_idx, prof: FamilyProfile, params: CueParams = DEFAULT_CUES) -> np.ndarray:
    """Vectorized over stance indices; returns shape (..., 3)."""
    s = np.asarray(stance_idx)
    if prof.cue_channel in _COLLAPSED:
        return np.broadcast_to(_onehot(SENTIMENTS.index(_COLLAPSED[prof.cue_channel][0])), s.shape + (3,)).copy()
    sigma = params.sigma_s_stochastic if prof.cue_channel == "noisy" else params.sigma_s
    mu = params.mu_s * np.choose(s, [1.0, 0.0, -1.0])
    hi = ndtr((params.tau_s - mu) / sigma)
    lo = ndtr((-params.tau_s - mu) / sigma)
    return np.stack([1.0 - hi, hi - lo, lo], axis=-1)


def sample_sentiment(stance: Stance, prof: FamilyProfile, rng: np.random.Generator, params: CueParams = DEFAULT_CUES) -> Sentiment:
    if prof.cue_channel in _COLLAPSED:
        return _COLLAPSED[prof.cue_channel][0]
    sigma = params.sigma_s_stochastic if prof.cue_channel == "noisy" else params.sigma_s
    mu = params.mu_s * (1.0, 0.0, -1.0)[stance.index]
    z = mu + sigma * rng.standard_normal()
    if z > params.tau_s:
        return Sentiment.POSITIVE
    if z < -params.tau_s:
        return Sentiment.NEGATIVE
    return Sentiment.NEUTRAL


def strategic_logits(stance, c_b, k: int, K: int, params: CueParams = DEFAULT_CUES) -> np.ndarray:
    """Offer-branch posture logits (Concede, Hold, Pressure); broadcasts over stance indices."""
    s = np.asarray(stance.index if isinstance(stance, Stance) else stance)
    c_b = np.asarray(c_b, dtype=float)
    bias_c = np.choose(s, [params.b_c, 0.0, -params.b_c])
    bias_h = np.choose(s, [0.0, params.b_h, 0.0])
    bias_p = np.choose(s, [-params.b_p, 0.0, params.b_p])
    clock = math.sqrt(k / K)
    concede = bias_c + params.alpha_c * (c_b - params.tau_conc)
    hold = bias_h + 0.0 * c_b
    pressure = bias_p + params.alpha_p * (clock - params.tau_dead) - params.beta_c * c_b
    return np.stack(np.broadcast_arrays(concede, hold, pressure), axis=-1)


def strategic_probs(decision: Decision, stance, c_b, k: int, K: int, prof: FamilyProfile, params: CueParams = DEFAULT_CUES) -> np.ndarray:
    """P(Concede, Hold, Pressure | decision, stance, state) after family overrides."""
    if prof.cue_channel in _COLLAPSED:
        out = _onehot(POSTURES.index(_COLLAPSED[prof.cue_channel][1]))
    elif decision is Decision.ACCEPT:
        out = _onehot(0)
    elif decision is Decision.REJECT:
        out = _onehot(2)
    else:
        logits = strategic_logits(stance, c_b, k, K, params)
        if prof.cue_channel == "noisy":
            logits = logits / params.temperature_stochastic
        logits = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=-1, keepdims=True)
    shape = np.broadcast_shapes(np.shape(stance.index if isinstance(stance, Stance) else stance), np.shape(c_b))
    return np.broadcast_to(out, shape + (3,)).copy()


def sample_strategic_cue(decision: Decision, stance: Stance, c_b: float, k: int, K: int, prof: FamilyProfile, rng: np.random.Generator, params: CueParams = DEFAULT_CUES) -> Posture:
    p = strategic_probs(decision, stance, c_b, k, K, prof, params)
    if decision is not Decision.OFFER or prof.cue_channel in _COLLAPSED:
        return POSTURES[int(np.argmax(p))]
    u = rng.random()
    return POSTURES[min(int(np.searchsorted(np.cumsum(p), u, side="right")), 2)]


@lru_cache(maxsize=4)
def load_templates(path: str | None = None) -> dict:
    text = Path(path).read_text() if path else resources.files("bargainlab").joinpath("data/templates.json").read_text()
    return json.loads(text)


def render_message(decision: Decision, price: float | None, sentiment: Sentiment, posture: Posture, role: Role, templates: str | None = None) -> str:
    """Deterministic counterpart message; Offer templates embed the price to two decimals."""
    if (price is not None) != (decision is Decision.OFFER):
        raise ValueError("price must be given exactly when the decision is Offer")
    table = load_templates(templates)
    body = table["templates"][f"{decision.value}|{role.value.lower()}|{posture.value}"]
    if price is not None:
        body = body.replace("{price}", f"{price:.2f}")
    return f"{table['sentiment_lead'][sentiment.value]} {body}"
