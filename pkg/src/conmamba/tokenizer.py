"""Character-level multilingual vocabulary with reserved blank/BOS/EOS ids.

Characters keep CTC targets language-agnostic across Latin-script languages
and keep the artifact free of external subword models. Ids 0/1/2 are
reserved (blank, BOS, EOS); BOS/EOS never appear in CTC targets but are
part of the vocabulary for head/checkpoint compatibility.

Text normalization (NFC, optional lowercasing, punctuation stripping,
whitespace collapsing) is applied identically to references and hypotheses
so error rates are comparable.
"""

from __future__ import annotations

import hashlib
import string
import unicodedata
from dataclasses import dataclass, field

BLANK_ID = 0
BOS_ID = 1
EOS_ID = 2
RESERVED = ("<blank>", "<bos>", "<eos>")

# stripped during normalization: ASCII punctuation plus the common
# typographic variants found in European corpora
DEFAULT_PUNCTUATION = set(string.punctuation) | set("«»„“”‘’‹›¡¿–—…·")


class TokenizerError(ValueError):
    pass


class EmptyCorpusError(TokenizerError):
    pass


def normalize_text(text, lowercase=True):
    """NFC -> optional lowercase -> strip punctuation -> collapse whitespace."""
    text = unicodedata.normalize("NFC", text)
    if lowercase:
        text = text.lower()
    text = "".join(ch for ch in text if ch not in DEFAULT_PUNCTUATION)
    return " ".join(text.split())


@dataclass
class Vocab:
    symbols: tuple  # reserved markers followed by characters; index == id
    lowercase: bool = True
    sym_to_id: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.sym_to_id = {s: i for i, s in enumerate(self.symbols)}
        if len(self.sym_to_id) != len(self.symbols):
            raise TokenizerError("vocab symbols are not unique")
        if self.symbols[:3] != RESERVED:
            raise TokenizerError(f"vocab must start with the reserved triple {RESERVED}")

    def __len__(self):
        return len(self.symbols)

    @property
    def characters(self):
        return self.symbols[3:]

    def encode(self, text, utterance_id=None):
        """Character ids for (already normalized) text; OOV is an error."""
        ids = []
        for ch in text:
            if ch not in self.sym_to_id:
                where = f" in utterance {utterance_id!r}" if utterance_id else ""
                raise TokenizerError(f"character {ch!r} not in vocabulary{where}")
            ids.append(self.sym_to_id[ch])
        return ids

    def decode(self, ids):
        """Inverse of encode; reserved ids decode to the empty string."""
        chars = []
        for i in ids:
            if not (0 <= i < len(self.symbols)):
                raise TokenizerError(f"id {i} outside vocabulary of size {len(self.symbols)}")
            if i >= 3:
                chars.append(self.symbols[i])
        return "".join(chars)

    def digest(self):
        """Stable identity hash; checkpoints refuse to resume on mismatch."""
        payload = "\n".join(self.symbols).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def build_vocab(transcripts, lowercase=True):
    """Reserved ids plus the sorted unique characters of the normalized corpus.

    Deterministic: the result depends only on the set of characters, not on
    transcript order.
    """
    chars = set()
    seen_any = False
    for text in transcripts:
        seen_any = True
        chars.update(normalize_text(text, lowercase=lowercase))
    if not seen_any or not chars:
        raise EmptyCorpusError("no characters survive normalization; cannot build a vocabulary")
    symbols = RESERVED + tuple(sorted(chars))
    return Vocab(symbols=symbols, lowercase=lowercase)


def save_vocab(vocab, path):
    """One symbol per line; the 0-based line number is the id. The first
    three lines are the reserved markers."""
    with open(path, "w", encoding="utf-8") as f:
        for sym in vocab.symbols:
            f.write(sym + "\n")


def load_vocab(path, lowercase=True):
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 4:
        raise TokenizerError(f"vocab file {path} has fewer than 4 lines")
    if tuple(lines[:3]) != RESERVED:
        raise TokenizerError(f"vocab file {path} missing reserved header {RESERVED}")
    for i, sym in enumerate(lines[3:], start=3):
        if len(sym) != 1:
            raise TokenizerError(f"vocab file {path} line {i + 1}: expected a single character, got {sym!r}")
    return Vocab(symbols=tuple(lines), lowercase=lowercase)
