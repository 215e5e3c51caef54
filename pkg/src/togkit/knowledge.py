"""Knowledge generation: prompt sets, description banks, instruction
templates, response caching, and image-set curation.

Semantic knowledge relates classes and tasks to familiar ones (O2O, O2T,
T2T, T2O prompt kinds); geometric knowledge decomposes objects into parts
(O2P) and maps tasks to supporting primitives (T2P). Geometric outputs are
regularized to bullet lists.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from hashlib import blake2b
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backends import (
    BackendError,
    GenerativeLanguageBackend,
    MultimodalEmbeddingBackend,
)
from .dataset import ImageRef, ObjectInstanceRecord

logger = logging.getLogger(__name__)


class KnowledgeError(Exception):
    """Raised when knowledge generation or assembly cannot proceed."""


OBJECT_SEMANTIC_KINDS = ("O2O", "O2T")
OBJECT_GEOMETRIC_KINDS = ("O2P",)
TASK_SEMANTIC_KINDS = ("T2T", "T2O")
TASK_GEOMETRIC_KINDS = ("T2P",)
OBJECT_KINDS = OBJECT_SEMANTIC_KINDS + OBJECT_GEOMETRIC_KINDS
TASK_KINDS = TASK_SEMANTIC_KINDS + TASK_GEOMETRIC_KINDS
GEOMETRIC_KINDS = OBJECT_GEOMETRIC_KINDS + TASK_GEOMETRIC_KINDS
PROMPT_KINDS = OBJECT_KINDS + TASK_KINDS + ("template-augment",)

KIND_SLOT = {
    "O2O": "{class}",
    "O2T": "{class}",
    "O2P": "{class}",
    "T2T": "{task}",
    "T2O": "{task}",
    "T2P": "{task}",
    "template-augment": "{template}",
}

SIMILARITY_THRESHOLD = 0.95
DEFAULT_IMAGE_COUNT = 24
RETRY_ATTEMPTS = 3


@dataclass(frozen=True)
class PromptSet:
    """Prompt templates of one kind, each carrying the slot the kind requires."""

    kind: str
    prompts: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.kind not in PROMPT_KINDS:
            raise KnowledgeError(f"unknown prompt kind {self.kind!r}")
        if not self.prompts:
            raise KnowledgeError(f"prompt set {self.kind} is empty")
        slot = KIND_SLOT[self.kind]
        for prompt in self.prompts:
            if slot not in prompt:
                raise KnowledgeError(f"prompt {prompt!r} is missing slot {slot}")

    @property
    def n_p(self) -> int:
        return len(self.prompts)


def default_prompt_sets() -> dict[str, PromptSet]:
    return {
        "O2O": PromptSet(
            "O2O",
            (
                "Describe what household objects have similar shape to a {class}:",
                "Describe what household objects have similar function to a {class}:",
                "Describe what household objects have similar size to a {class}:",
                "Describe what household objects belong to the same meta-category as a {class}:",
            ),
        ),
        "O2T": PromptSet(
            "O2T",
            (
                "Describe the common use of household object {class}:",
                "List the tasks a {class} is typically used for:",
            ),
        ),
        "T2T": PromptSet(
            "T2T",
            (
                "Describe what verbs are semantically close to {task}:",
                "Describe what actions achieve a similar effect to {task}:",
                "List verbs physically related to {task}:",
            ),
        ),
        "T2O": PromptSet(
            "T2O",
            (
                "Describe what household objects can be used to {task}:",
                "List household objects that afford {task}:",
            ),
        ),
        "O2P": PromptSet(
            "O2P",
            (
                "Describe what parts the household object {class} is composed of:",
                "List the geometric primitives that make up a {class}:",
            ),
        ),
        "T2P": PromptSet(
            "T2P",
            (
                "Describe what geometric primitives on a household object can be used to {task}:",
                "List object parts suitable for {task}:",
            ),
        ),
        "template-augment": PromptSet(
            "template-augment",
            ("Rewrite the following sentence in a different grammatical format: {template}",),
        ),
    }


@dataclass(frozen=True)
class DescriptionEntry:
    kind: str
    prompt_index: int
    sample_index: int
    text: str


@dataclass
class DescriptionBank:
    """Generated descriptions per class and task, grouped by prompt kind."""

    objects: dict[str, list[DescriptionEntry]] = field(default_factory=dict)
    tasks: dict[str, list[DescriptionEntry]] = field(default_factory=dict)

    def _table(self, kind: str) -> dict[str, list[DescriptionEntry]]:
        return self.objects if kind in OBJECT_KINDS else self.tasks

    def add(self, target: str, entry: DescriptionEntry) -> None:
        if not entry.text.strip():
            raise KnowledgeError(f"empty description for {target!r} kind {entry.kind}")
        table = self._table(entry.kind)
        table.setdefault(target, [])
        table[target].append(entry)
        # canonical order: kind, prompt index, sample index
        table[target].sort(key=lambda e: (e.kind, e.prompt_index, e.sample_index))

    def entries(self, target: str, kinds: Iterable[str]) -> dict[str, list[DescriptionEntry]]:
        kinds = tuple(kinds)
        table = self._table(kinds[0])
        found = table.get(target, [])
        return {kind: [e for e in found if e.kind == kind] for kind in kinds}

    def has_target(self, target: str, kinds: Iterable[str]) -> bool:
        grouped = self.entries(target, kinds)
        return all(grouped[k] for k in grouped)

    def save(self, root: Path | str) -> Path:
        root = Path(root) / "knowledge"
        for sub, table in (("objects", self.objects), ("tasks", self.tasks)):
            out = root / sub
            out.mkdir(parents=True, exist_ok=True)
            for target, entries in table.items():
                doc = {
                    "target": target,
                    "entries": [
                        {
                            "kind": e.kind,
                            "prompt_index": e.prompt_index,
                            "sample_index": e.sample_index,
                            "text": e.text,
                        }
                        for e in entries
                    ],
                }
                with open(out / f"{target}.json", "w", encoding="utf-8") as fh:
                    json.dump(doc, fh, indent=1, sort_keys=True)
        return root

    @classmethod
    def load(cls, root: Path | str) -> "DescriptionBank":
        root = Path(root) / "knowledge"
        bank = cls()
        for sub, table in (("objects", bank.objects), ("tasks", bank.tasks)):
            directory = root / sub
            if not directory.is_dir():
                continue
            for path in sorted(directory.glob("*.json")):
                doc = json.loads(path.read_text(encoding="utf-8"))
                table[doc["target"]] = [
                    DescriptionEntry(
                        kind=e["kind"],
                        prompt_index=int(e["prompt_index"]),
                        sample_index=int(e["sample_index"]),
                        text=e["text"],
                    )
                    for e in doc["entries"]
                ]
        return bank


class KnowledgeCache:
    """Content-addressed store keyed by (backend id, prompt, sample index).

    Entries are immutable: the first write wins and any hit returns the
    byte-identical stored text. With ``root=None`` the cache is in-memory.
    """

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self._mem: dict[str, str] = {}

    @staticmethod
    def key(backend_id: str, prompt: str, sample_index: int) -> str:
        prompt_hash = blake2b(prompt.encode("utf-8"), digest_size=16).hexdigest()
        return blake2b(
            f"{backend_id}|{prompt_hash}|{sample_index}".encode("utf-8"), digest_size=20
        ).hexdigest()

    def get(self, key: str) -> str | None:
        if key in self._mem:
            return self._mem[key]
        if self.root is not None:
            path = self.root / f"{key}.txt"
            if path.is_file():
                text = path.read_text(encoding="utf-8")
                self._mem[key] = text
                return text
        return None

    def put(self, key: str, text: str) -> None:
        if self.get(key) is not None:
            return
        self._mem[key] = text
        if self.root is not None:
            (self.root / f"{key}.txt").write_text(text, encoding="utf-8")


_BULLET_PREFIX = re.compile(r"^\s*(?:[-*•]+|\d+[.)])\s*")


def parse_bullets(text: str) -> list[str]:
    """Split a description into bullet items, stripping leading markers."""
    items = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        items.append(_BULLET_PREFIX.sub("", stripped))
    return [item for item in items if item]


def regularize_geometric(text: str) -> str:
    """Normalize a geometric description to a canonical bullet list."""
    items = parse_bullets(text)
    if not items:
        raise KnowledgeError(f"geometric description has no parseable bullets: {text!r}")
    return "\n".join(f"- {item}" for item in items)


def generate_descriptions(
    target: str,
    kind: str,
    backend: GenerativeLanguageBackend,
    n_augment: int,
    bank: DescriptionBank,
    prompt_sets: dict[str, PromptSet] | None = None,
    cache: KnowledgeCache | None = None,
) -> list[str]:
    """Query the generative backend n_augment times per prompt of one kind.

    Results are stored in the bank (geometric kinds regularized to bullets)
    and, when a cache is given, persisted content-addressed.
    """
    if n_augment < 1:
        raise KnowledgeError("n_augment must be >= 1")
    prompt_sets = prompt_sets or default_prompt_sets()
    if kind not in prompt_sets:
        raise KnowledgeError(f"no prompt set for kind {kind!r}")
    prompt_set = prompt_sets[kind]
    slot = KIND_SLOT[kind]
    texts: list[str] = []
    for p_idx, template in enumerate(prompt_set.prompts):
        prompt = template.replace(slot, target)
        for s_idx in range(n_augment):
            key = KnowledgeCache.key(backend.backend_id, prompt, s_idx)
            text = cache.get(key) if cache is not None else None
            if text is None:
                text = _generate_with_retry(
                    backend, prompt, s_idx, {"target": target, "kind": kind}
                )
                if kind in GEOMETRIC_KINDS:
                    text = regularize_geometric(text)
                if cache is not None:
                    cache.put(key, text)
            bank.add(target, DescriptionEntry(kind, p_idx, s_idx, text))
            texts.append(text)
    return texts


def _generate_with_retry(
    backend: GenerativeLanguageBackend, prompt: str, sample_index: int, hints: dict
) -> str:
    last: Exception | None = None
    for attempt in range(RETRY_ATTEMPTS):
        try:
            return backend.generate(prompt, sample_index=sample_index, hints=hints)
        except BackendError as exc:
            last = exc
            logger.warning("backend attempt %d failed for %r: %s", attempt + 1, prompt, exc)
    raise KnowledgeError(f"backend failed after {RETRY_ATTEMPTS} attempts for prompt {prompt!r}") from last


def ensure_descriptions(
    targets: Iterable[str],
    kinds: Sequence[str],
    backend: GenerativeLanguageBackend,
    n_augment: int,
    bank: DescriptionBank,
    prompt_sets: dict[str, PromptSet] | None = None,
    cache: KnowledgeCache | None = None,
) -> None:
    """Fill any missing (target, kind) cells; the inference path for novel
    classes and tasks follows the same generation procedure as training."""
    for target in targets:
        for kind in kinds:
            if not bank.has_target(target, (kind,)):
                generate_descriptions(target, kind, backend, n_augment, bank, prompt_sets, cache)


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
MAX_PARAGRAPH_SENTENCES = 6


def _split_sentences(text: str) -> list[str]:
    parts: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("-"):
            parts.append(line)
        else:
            parts.extend(s for s in _SENTENCE_SPLIT.split(line) if s)
    return parts


def assemble_paragraph(
    bank: DescriptionBank, target: str, aspect: str, seed: int
) -> str:
    """Randomly combine one description per prompt kind into a paragraph.

    Deterministic given the seed; truncated to at most six sentences
    (bullet items count as sentences).
    """
    if aspect not in ("semantic", "geometric"):
        raise KnowledgeError(f"unknown aspect {aspect!r}")
    if target in bank.objects:
        kinds = OBJECT_SEMANTIC_KINDS if aspect == "semantic" else OBJECT_GEOMETRIC_KINDS
    elif target in bank.tasks:
        kinds = TASK_SEMANTIC_KINDS if aspect == "semantic" else TASK_GEOMETRIC_KINDS
    else:
        raise KnowledgeError(f"bank has no descriptions for target {target!r}")
    grouped = bank.entries(target, kinds)
    rng = np.random.default_rng(seed)
    pieces = []
    for kind in kinds:
        entries = grouped[kind]
        if not entries:
            raise KnowledgeError(f"bank has no {kind} descriptions for {target!r}")
        pieces.append(entries[int(rng.integers(len(entries)))].text)
    joined = "\n".join(pieces) if aspect == "geometric" else " ".join(pieces)
    sentences = _split_sentences(joined)
    if len(sentences) > MAX_PARAGRAPH_SENTENCES:
        sentences = sentences[:MAX_PARAGRAPH_SENTENCES]
    return "\n".join(sentences) if aspect == "geometric" else " ".join(sentences)


@dataclass(frozen=True)
class InstructionTemplateSet:
    """Instruction templates, each with exactly one [obj] and one [task] slot."""

    templates: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.templates:
            raise KnowledgeError("template set is empty")
        for t in self.templates:
            if t.count("[obj]") != 1 or t.count("[task]") != 1:
                raise KnowledgeError(
                    f"template {t!r} must contain [obj] and [task] exactly once"
                )


DEFAULT_SEED_TEMPLATES = (
    "Use the [obj] to [task]",
    "Grab the [obj] and [task]",
    "Pick up the [obj] so you can [task]",
    "[task] with the [obj]",
    "Hold the [obj] in a way suitable to [task]",
    "Grasp the [obj] to [task]",
)


def default_templates() -> InstructionTemplateSet:
    return InstructionTemplateSet(DEFAULT_SEED_TEMPLATES)


def instantiate_instruction(
    templates: InstructionTemplateSet, class_id: str, task_id: str, seed: int
) -> str:
    """Sample one template by seed and substitute both slots."""
    rng = np.random.default_rng(seed)
    template = templates.templates[int(rng.integers(len(templates.templates)))]
    return template.replace("[obj]", class_id).replace("[task]", task_id)


def augment_templates(
    seed_templates: InstructionTemplateSet,
    backend: GenerativeLanguageBackend,
    rewrites_per_template: int = 2,
    prompt_sets: dict[str, PromptSet] | None = None,
) -> InstructionTemplateSet:
    """Extend the seed set with backend rewrites, dropping invalid ones.

    A rewrite is kept only if both slots survive exactly once; if every
    rewrite is invalid the seed set is returned unchanged.
    """
    prompt_sets = prompt_sets or default_prompt_sets()
    prompt_template = prompt_sets["template-augment"].prompts[0]
    accepted: list[str] = list(seed_templates.templates)
    dropped = 0
    for template in seed_templates.templates:
        prompt = prompt_template.replace("{template}", template)
        for s_idx in range(rewrites_per_template):
            try:
                rewrite = backend.generate(
                    prompt, sample_index=s_idx,
                    hints={"kind": "template-augment", "template": template},
                )
            except BackendError as exc:
                logger.warning("template rewrite failed: %s", exc)
                dropped += 1
                continue
            rewrite = rewrite.strip()
            if rewrite.count("[obj]") == 1 and rewrite.count("[task]") == 1:
                if rewrite not in accepted:
                    accepted.append(rewrite)
            else:
                dropped += 1
    if dropped:
        logger.warning("dropped %d invalid template rewrites", dropped)
    return InstructionTemplateSet(tuple(accepted))


def save_templates(templates: InstructionTemplateSet, root: Path | str) -> Path:
    path = Path(root) / "knowledge" / "templates.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"templates": list(templates.templates)}, fh, indent=1)
    return path


def load_templates(root: Path | str) -> InstructionTemplateSet:
    path = Path(root) / "knowledge" / "templates.json"
    if not path.is_file():
        return default_templates()
    doc = json.loads(path.read_text(encoding="utf-8"))
    return InstructionTemplateSet(tuple(doc["templates"]))


@dataclass(frozen=True)
class ImageCandidate:
    ref: ImageRef
    confidence: float


class ImageSource:
    """Interface of a retrieval source yielding scored, pre-masked candidates."""

    def retrieve(self, instance: ObjectInstanceRecord) -> list[ImageCandidate]:
        raise NotImplementedError


def _pooled_image_vector(embedder: MultimodalEmbeddingBackend, ref: ImageRef) -> np.ndarray:
    grid = embedder.embed_image(ref).grid
    vec = grid.reshape(-1, grid.shape[-1]).mean(axis=0)
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def curate_images(
    instance: ObjectInstanceRecord,
    source: ImageSource,
    embedder: MultimodalEmbeddingBackend,
    n_images: int = DEFAULT_IMAGE_COUNT,
    similarity_threshold: float = SIMILARITY_THRESHOLD,
) -> list[ImageRef]:
    """Select exactly ``n_images`` for an instance: originals plus retrieved
    candidates, near-duplicates excluded, ranked by confidence.

    Candidates whose embedding cosine similarity to an already-selected image
    exceeds the threshold are excluded; originals are resampled if the pool
    comes up short.
    """
    if not instance.images:
        raise KnowledgeError(f"instance {instance.instance_id!r} has no original images")
    selected: list[ImageRef] = list(instance.images[:n_images])
    vectors = [_pooled_image_vector(embedder, ref) for ref in selected]

    candidates = source.retrieve(instance)
    if not candidates:
        logger.warning(
            "no retrieval candidates for %s; resampling originals", instance.instance_id
        )
    ranked = sorted(candidates, key=lambda c: (-c.confidence, c.ref.id))
    for cand in ranked:
        if len(selected) >= n_images:
            break
        vec = _pooled_image_vector(embedder, cand.ref)
        if any(float(np.dot(vec, prev)) > similarity_threshold for prev in vectors):
            continue
        selected.append(cand.ref)
        vectors.append(vec)
    i = 0
    while len(selected) < n_images:  # resample originals to fill
        selected.append(instance.images[i % len(instance.images)])
        i += 1
    return selected
