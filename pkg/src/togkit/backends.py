"""Foundation-model backends: generative text, semantic token embeddings, and
multimodal (image/text) embeddings.

The fixture backends are pure functions of their inputs built from integer
hashing (SHAKE-256) with floats constructed from fixed-point words, so every
output is byte-stable across processes and platforms. They carry enough
structure for learning tests: token embeddings are shared across texts that
share vocabulary, and image feature maps carry a per-signal component shared
by images tagged with the same signal.
"""

from __future__ import annotations

import logging
import os
import string
from dataclasses import dataclass, field
from hashlib import shake_256
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TOKEN_DIM = 768
GEO_TEXT_DIM = 1024
IMAGE_FEATURE_DIM = 1024
DEFAULT_MAX_TOKENS = 64
DEFAULT_IMAGE_GRID = 7


class BackendError(Exception):
    """Raised when a backend cannot serve a request."""


_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace tokenization with punctuation stripped."""
    return text.lower().translate(_PUNCT_TABLE).split()


def hashed_unit_floats(key: str, n: int) -> np.ndarray:
    """n floats in [-1, 1) derived from SHAKE-256 of the key (fixed-point)."""
    raw = shake_256(key.encode("utf-8")).digest(4 * n)
    words = np.frombuffer(raw, dtype="<u4").astype(np.float64)
    return words / 2147483648.0 - 1.0


def hashed_vector(key: str, dim: int) -> np.ndarray:
    """Unit-scale hash vector: entries uniform in [-1, 1) scaled so the
    expected L2 norm is 1."""
    return hashed_unit_floats(key, dim) * np.sqrt(3.0 / dim)


def hashed_choice(key: str, options: Sequence):
    raw = shake_256(key.encode("utf-8")).digest(4)
    return options[int.from_bytes(raw, "little") % len(options)]


@dataclass(frozen=True)
class TokenSequenceEmbedding:
    """Per-token vectors zero-padded to a fixed length, with a validity mask."""

    vectors: np.ndarray  # (T, 768)
    mask: np.ndarray  # (T,) bool, True = real token

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2 or self.vectors.shape[1] != TOKEN_DIM:
            raise BackendError(f"token sequence must be (T, {TOKEN_DIM})")
        if self.mask.shape != (self.vectors.shape[0],):
            raise BackendError("mask length must match token count")

    @property
    def length(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class TextVectorEmbedding:
    vector: np.ndarray  # (1024,)

    def __post_init__(self) -> None:
        if self.vector.shape != (GEO_TEXT_DIM,):
            raise BackendError(f"text vector must have {GEO_TEXT_DIM} entries")


@dataclass(frozen=True)
class ImageFeatureMap:
    grid: np.ndarray  # (h, w, 1024)

    def __post_init__(self) -> None:
        if self.grid.ndim != 3 or self.grid.shape[2] != IMAGE_FEATURE_DIM:
            raise BackendError(f"image feature map must be (h, w, {IMAGE_FEATURE_DIM})")
        if min(self.grid.shape[:2]) < 1:
            raise BackendError("image feature map must have h, w >= 1")


class SemanticEmbeddingBackend:
    """Interface of the large pre-trained text encoder role."""

    backend_id: str = "semantic"

    def embed(self, text: str, max_tokens: int = DEFAULT_MAX_TOKENS) -> TokenSequenceEmbedding:
        raise NotImplementedError


class MultimodalEmbeddingBackend:
    """Interface of the vision-language encoder role."""

    backend_id: str = "multimodal"

    def embed_text(self, text: str) -> TextVectorEmbedding:
        raise NotImplementedError

    def embed_image(self, image) -> ImageFeatureMap:
        raise NotImplementedError


class GenerativeLanguageBackend:
    """Interface of the description/rewrite generator role."""

    backend_id: str = "generative"

    def generate(self, prompt: str, sample_index: int = 0, hints: Mapping | None = None) -> str:
        raise NotImplementedError


class FixtureSemanticEncoder(SemanticEmbeddingBackend):
    """Deterministic token-sequence embeddings from hashed vocabulary."""

    def __init__(self, salt: str = "sem-v1"):
        self.backend_id = f"fixture-semantic:{salt}"
        self._salt = salt
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            vec = hashed_vector(f"{self._salt}:{token}", TOKEN_DIM)
            self._cache[token] = vec
        return vec

    def embed(self, text: str, max_tokens: int = DEFAULT_MAX_TOKENS) -> TokenSequenceEmbedding:
        tokens = tokenize(text)
        if not tokens:
            raise BackendError("text has no tokens after tokenization")
        if len(tokens) > max_tokens:
            logger.warning("truncating %d tokens to %d", len(tokens), max_tokens)
            tokens = tokens[:max_tokens]
        vectors = np.zeros((max_tokens, TOKEN_DIM), dtype=np.float64)
        mask = np.zeros(max_tokens, dtype=bool)
        for i, token in enumerate(tokens):
            vectors[i] = self._token_vector(token)
            mask[i] = True
        return TokenSequenceEmbedding(vectors=vectors, mask=mask)


class FixtureMultimodalEncoder(MultimodalEmbeddingBackend):
    """Deterministic stand-in for a vision-language encoder.

    Text embeddings are normalized means of hashed token vectors, so texts
    sharing vocabulary land close in cosine. Image maps combine a signal
    component shared by all images with the same signal tag and per-cell
    hash noise, so mean-pooled maps cluster by signal.
    """

    def __init__(self, grid: int = DEFAULT_IMAGE_GRID, salt: str = "geo-v1", noise: float = 0.5):
        self.backend_id = f"fixture-multimodal:{salt}:g{grid}"
        self.grid = grid
        self._salt = salt
        self._noise = noise
        self._text_cache: dict[str, np.ndarray] = {}
        self._image_cache: dict[str, np.ndarray] = {}

    def _pooled_tokens(self, prefix: str, tokens: list[str]) -> np.ndarray:
        acc = np.zeros(GEO_TEXT_DIM, dtype=np.float64)
        for token in tokens:
            vec = self._text_cache.get(token)
            if vec is None:
                vec = hashed_vector(f"{self._salt}:{prefix}:{token}", GEO_TEXT_DIM)
                self._text_cache[token] = vec
            acc += vec
        norm = np.linalg.norm(acc)
        return acc / norm if norm > 0 else acc

    def embed_text(self, text: str) -> TextVectorEmbedding:
        tokens = tokenize(text)
        if not tokens:
            raise BackendError("text has no tokens after tokenization")
        return TextVectorEmbedding(vector=self._pooled_tokens("txt", tokens))

    def embed_image(self, image) -> ImageFeatureMap:
        ref_id = getattr(image, "id", None) or str(image)
        if not ref_id:
            raise BackendError("image reference has no id")
        cached = self._image_cache.get(ref_id)
        if cached is None:
            signal = getattr(image, "signal", "") or ref_id
            signal_tokens = tokenize(signal)
            if not signal_tokens:
                raise BackendError(f"image {ref_id!r} is unreadable: empty signal")
            base = self._pooled_tokens("img", signal_tokens)
            g = self.grid
            cells = np.empty((g, g, IMAGE_FEATURE_DIM), dtype=np.float64)
            for r in range(g):
                for c in range(g):
                    noise = hashed_vector(f"{self._salt}:cell:{ref_id}:{r}:{c}", IMAGE_FEATURE_DIM)
                    cells[r, c] = base + self._noise * noise
            cached = cells
            self._image_cache[ref_id] = cached
        return ImageFeatureMap(grid=cached)


_FILLER_NOUNS = ("body", "rim", "edge", "surface", "shell", "panel", "joint", "core")
_FILLER_ADJECTIVES = ("slender", "compact", "curved", "tapered", "ridged", "smooth", "hollow", "solid")
_FILLER_VERBS = ("hold", "move", "place", "align", "steady", "rotate", "fasten", "carry")

# Hand-written corpus entries for a couple of familiar household targets, so
# a bare fixture backend produces sensible text without a dataset corpus.
DEMO_CORPUS: dict[tuple[str, str], list[str]] = {
    ("mug", "O2O"): [
        "Teacups, jars, glasses, and small pitchers have similar geometries to a mug.",
        "A mug sits alongside cups and tumblers among cylindrical drinking vessels.",
    ],
    ("mug", "O2T"): [
        "A mug is a cylindrical household object with a handle, used mainly for drinking hot beverages.",
        "People use a mug to pour, sip, and carry drinks.",
    ],
    ("mug", "O2P"): [
        "- cylindrical body\n- curved side handle\n- circular base",
        "- hollow cylinder\n- loop handle\n- flat round bottom",
    ],
    ("sweep", "T2T"): [
        "Verbs such as clear, clean, brush, wipe, and dust achieve similar effects to 'sweep an object'.",
        "Sweeping is close in effect to brushing and wiping surfaces.",
    ],
    ("sweep", "T2O"): [
        "Brooms, brushes, and dustpans are household objects that afford the function of sweeping.",
        "A broom or a stiff brush can be used to sweep debris.",
    ],
    ("sweep", "T2P"): [
        "- long cylindrical handle\n- fan of bristles at the end",
        "- straight shaft\n- wide bristle pad",
    ],
}


@dataclass
class FixtureLanguageModel(GenerativeLanguageBackend):
    """Deterministic description generator over a seeded text corpus.

    ``corpus`` maps (target, prompt kind) to candidate texts; unknown targets
    fall back to salted-hash filler built from a small word list so every
    query still yields usable, deterministic text.
    """

    corpus: dict[tuple[str, str], list[str]] = field(default_factory=dict)
    rewrites: dict[str, list[str]] = field(default_factory=dict)
    salt: str = "gen-v1"

    def __post_init__(self) -> None:
        self.backend_id = f"fixture-generative:{self.salt}"
        merged = dict(DEMO_CORPUS)
        merged.update({(t.lower(), k): list(v) for (t, k), v in self.corpus.items()})
        self.corpus = merged

    def generate(self, prompt: str, sample_index: int = 0, hints: Mapping | None = None) -> str:
        hints = hints or {}
        kind = hints.get("kind", "")
        if kind == "template-augment":
            return self._rewrite(hints.get("template", prompt), sample_index)
        target = str(hints.get("target", "")) or prompt
        entries = self.corpus.get((target.lower(), kind))
        if entries:
            text = entries[sample_index % len(entries)]
            if sample_index >= len(entries):
                # sample-index salt keeps repeated draws distinct
                extra = hashed_choice(f"{self.salt}:{target}:{kind}:{sample_index}", _FILLER_ADJECTIVES)
                text = f"{text} It has a notably {extra} profile."
            return text
        return self._filler(target, kind, sample_index)

    _DEFAULT_REWRITES = {
        "Use the [obj] to [task]": (
            "To [task], use the [obj].",
            "Ensure you have a [task]-friendly grip on the [obj].",
        ),
    }

    def _rewrite(self, template: str, sample_index: int) -> str:
        variants = self.rewrites.get(template) or self._DEFAULT_REWRITES.get(template)
        if not variants:
            variants = (
                "With the [obj] in hand, [task].",
                "Take the [obj] and then [task].",
            )
        return variants[sample_index % len(variants)]

    def _filler(self, target: str, kind: str, sample_index: int) -> str:
        key = f"{self.salt}:{target}:{kind}:{sample_index}"
        noun = hashed_choice(key + ":n", _FILLER_NOUNS)
        adj = hashed_choice(key + ":a", _FILLER_ADJECTIVES)
        verb = hashed_choice(key + ":v", _FILLER_VERBS)
        target = target or "object"
        if kind in ("O2P", "T2P"):
            noun2 = hashed_choice(key + ":n2", _FILLER_NOUNS)
            return f"- {adj} {noun}\n- {noun2} segment"
        if kind in ("T2T", "T2O"):
            return f"Actions like {verb} relate to {target}, typically applied to a {adj} {noun}."
        return f"A {target} is a household object with a {adj} {noun} used to {verb} things."


class HostedLanguageModel(GenerativeLanguageBackend):
    """Thin adapter for an OpenAI-compatible chat completion endpoint.

    Credentials come exclusively from the ``TOGKIT_LLM_KEY`` environment
    variable. Experimental plumbing; excluded from the test suite.
    """

    def __init__(self, model: str, endpoint: str = "https://api.openai.com/v1/chat/completions"):
        self.backend_id = f"hosted:{model}"
        self.model = model
        self.endpoint = endpoint

    def generate(self, prompt: str, sample_index: int = 0, hints: Mapping | None = None) -> str:
        key = os.environ.get("TOGKIT_LLM_KEY")
        if not key:
            raise BackendError("hosted backend requires the TOGKIT_LLM_KEY environment variable")
        try:
            import requests
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise BackendError("hosted backend requires the 'requests' package") from exc
        resp = requests.post(
            self.endpoint,
            headers={"Authorization": f"Bearer {key}"},
            json={
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0.7,
            },
            timeout=60,
        )
        if resp.status_code != 200:
            raise BackendError(f"hosted backend error {resp.status_code}: {resp.text[:200]}")
        return resp.json()["choices"][0]["message"]["content"]


@dataclass
class Backends:
    """The three backend roles wired together."""

    semantic: SemanticEmbeddingBackend
    multimodal: MultimodalEmbeddingBackend
    generative: GenerativeLanguageBackend

    def ids(self) -> dict[str, str]:
        return {
            "semantic": self.semantic.backend_id,
            "geometric": self.multimodal.backend_id,
            "generative": self.generative.backend_id,
        }


def make_backends(
    config: Mapping | None = None,
    corpus: dict[tuple[str, str], list[str]] | None = None,
) -> Backends:
    """Build backends from ``backend.*`` config keys (``fixture`` or ``hosted:<name>``)."""
    config = config or {}

    def choice(key: str) -> str:
        return str(config.get(f"backend.{key}", "fixture"))

    sem_choice, geo_choice, gen_choice = choice("semantic"), choice("geometric"), choice("generative")
    if sem_choice != "fixture":
        raise BackendError(f"semantic backend {sem_choice!r} is not available; use 'fixture'")
    if geo_choice != "fixture":
        raise BackendError(f"geometric backend {geo_choice!r} is not available; use 'fixture'")
    if gen_choice == "fixture":
        generative: GenerativeLanguageBackend = FixtureLanguageModel(corpus=corpus or {})
    elif gen_choice.startswith("hosted:"):
        generative = HostedLanguageModel(model=gen_choice.split(":", 1)[1])
    else:
        raise BackendError(f"unknown generative backend {gen_choice!r}")
    grid = int(config.get("backend.image_grid", DEFAULT_IMAGE_GRID))
    return Backends(
        semantic=FixtureSemanticEncoder(),
        multimodal=FixtureMultimodalEncoder(grid=grid),
        generative=generative,
    )
