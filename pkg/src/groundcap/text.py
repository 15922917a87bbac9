"""Word-level vocabulary, tokenization, and teacher-forcing sequence utilities.

Sequences are bracketed by [CLS]/[SEP]; the four special tokens own the
reserved ids 0-3. Vocabularies are immutable once built.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from collections import Counter
from pathlib import Path

import numpy as np

__all__ = [
    "CLS_ID",
    "SEP_ID",
    "PAD_ID",
    "UNK_ID",
    "SPECIAL_TOKENS",
    "Vocabulary",
    "TokenSeq",
    "TeacherForcingPair",
    "tokenize",
    "build_vocab",
    "encode",
    "decode",
    "teacher_forcing_pair",
    "pad_batch",
    "strip_gt_labels",
]

CLS_ID = 0
SEP_ID = 1
PAD_ID = 2
UNK_ID = 3
SPECIAL_TOKENS = ("[CLS]", "[SEP]", "[PAD]", "[UNK]")

_WORD_RE = re.compile(r"[a-z0-9]+")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; punctuation is dropped."""
    return _WORD_RE.findall(text.lower())


class Vocabulary:
    """Bijective word <-> id map over non-special entries; ids 0-3 are reserved
    for [CLS], [SEP], [PAD], [UNK]."""

    def __init__(self, words: list[str]):
        for w in words:
            if w in SPECIAL_TOKENS:
                raise ValueError(f"{w} is a reserved special token")
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in vocabulary")
        self._id_to_word = list(SPECIAL_TOKENS) + list(words)
        self._word_to_id = {w: i for i, w in enumerate(self._id_to_word)}

    def __len__(self) -> int:
        return len(self._id_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self._word_to_id

    def id_of(self, word: str) -> int:
        return self._word_to_id.get(word, UNK_ID)

    def word_of(self, token_id: int) -> str:
        return self._id_to_word[token_id]

    @property
    def words(self) -> list[str]:
        """Non-special entries in id order."""
        return self._id_to_word[len(SPECIAL_TOKENS):]

    def save(self, path: str | Path) -> None:
        """One word per line in id order; the header records the special ids."""
        header = "#groundcap.vocab v1 " + " ".join(
            f"{tok}={i}" for i, tok in enumerate(SPECIAL_TOKENS)
        )
        Path(path).write_text("\n".join([header] + self.words) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("#groundcap.vocab"):
            raise ValueError(f"{path}: not a vocabulary file")
        return cls([ln for ln in lines[1:] if ln])


@dataclass(frozen=True)
class TokenSeq:
    """Integer word-id sequence starting with [CLS]; [SEP] appears at most once
    and only as the final non-pad id; length counts the specials."""

    ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        if not ids or ids[0] != CLS_ID:
            raise ValueError("sequence must start with [CLS]")
        non_pad = [i for i in ids if i != PAD_ID]
        seps = [k for k, i in enumerate(non_pad) if i == SEP_ID]
        if len(seps) > 1 or (seps and seps[0] != len(non_pad) - 1):
            raise ValueError("[SEP] may appear only once, as the final non-pad id")
        pad_started = False
        for i in ids:
            if i == PAD_ID:
                pad_started = True
            elif pad_started:
                raise ValueError("non-pad id after [PAD]")
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def length(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class TeacherForcingPair:
    """Shift-by-one split of a sequence: input positions 1..L-1 and target
    positions 2..L (1-based)."""

    input_ids: tuple[int, ...]
    target_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.input_ids) != len(self.target_ids):
            raise ValueError("input and target lengths differ")


def build_vocab(corpus: list[str], min_count: int = 1) -> Vocabulary:
    """Deterministic vocabulary: words sorted by (count desc, lexicographic);
    words below min_count are left out and tokenize to [UNK]."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    counts = Counter()
    for sentence in corpus:
        counts.update(tokenize(sentence))
    kept = sorted(
        (w for w, c in counts.items() if c >= min_count),
        key=lambda w: (-counts[w], w),
    )
    return Vocabulary(kept)


def encode(vocab: Vocabulary, sentence: str, max_len: int = 32) -> TokenSeq:
    """[CLS] + word ids + [SEP], truncated to max_len keeping the trailing [SEP]."""
    if max_len < 3:
        raise ValueError("max_len must be >= 3")
    ids = [CLS_ID] + [vocab.id_of(w) for w in tokenize(sentence)] + [SEP_ID]
    if len(ids) > max_len:
        ids = ids[: max_len - 1] + [SEP_ID]
    return TokenSeq(tuple(ids))


def decode(vocab: Vocabulary, seq: TokenSeq) -> str:
    """Words joined by single spaces, specials dropped."""
    return " ".join(
        vocab.word_of(i) for i in seq.ids if i not in (CLS_ID, SEP_ID, PAD_ID)
    )


def teacher_forcing_pair(seq: TokenSeq) -> TeacherForcingPair:
    """Input = ids[:-1], target = ids[1:]; requires length >= 2."""
    if len(seq) < 2:
        raise ValueError("sequence too short for teacher forcing")
    return TeacherForcingPair(seq.ids[:-1], seq.ids[1:])


def pad_batch(seqs: list[TokenSeq]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to the batch max length.

    Returns (ids, real) where ids is (B, L_max) int64 and real is (B, L_max)
    bool marking non-pad positions; losses and attention must ignore pads.
    """
    if not seqs:
        raise ValueError("empty batch")
    l_max = max(len(s) for s in seqs)
    ids = np.full((len(seqs), l_max), PAD_ID, dtype=np.int64)
    real = np.zeros((len(seqs), l_max), dtype=bool)
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = s.ids
        real[b, : len(s)] = [i != PAD_ID for i in s.ids]
    return ids, real


def strip_gt_labels(sentence: str, class_names: list[str]) -> str:
    """Remove standalone single-word sentences that exactly match a class name.

    Handles the injected "table." pattern; label words inside longer clauses
    are left alone. Surviving sentences are re-joined with single spaces.
    """
    names = {n.lower() for n in class_names}
    parts = _SENTENCE_SPLIT_RE.split(sentence)
    kept = []
    for part in parts:
        words = tokenize(part)
        if len(words) == 1 and words[0] in names:
            continue
        kept.append(part.strip())
    return " ".join(p for p in kept if p)
