"""Byte-level BPE tokenizer with word alignment.

Vocabulary and merge rules live in plain text files next to the weight
container: ``vocab`` holds one token per line (line number = id), ``merges``
holds one space-separated symbol pair per line.  Word boundaries are closed
with a ``</w>`` marker on the last byte symbol of each chunk, matching the
convention the dual-encoder checkpoints were trained with.

Every encoded token remembers which whitespace-delimited word of the input
it came from, so per-token saliency can be summed back into per-word scores.
"""

import re
from dataclasses import dataclass

import numpy as np

SOT_TOKEN = "<|startoftext|>"
EOT_TOKEN = "<|endoftext|>"

# Chunking pattern: contractions, letter runs, single digits, punctuation
# runs, underscore runs.  A stdlib approximation of the usual unicode
# letter/number classes.
_CHUNK_PAT = re.compile(
    r"'s|'t|'re|'ve|'m|'ll|'d|[^\W\d_]+|\d|[^\s\w]+|_+",
    re.IGNORECASE | re.UNICODE,
)

_WORD_PAT = re.compile(r"\S+")


def bytes_to_unicode():
    """Bijection from byte values to printable unicode characters."""
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, [chr(c) for c in cs]))


def _get_pairs(word):
    return {(word[i], word[i + 1]) for i in range(len(word) - 1)}


@dataclass
class EncodedText:
    """Token ids plus the bookkeeping needed to map tokens back to words."""

    ids: np.ndarray  # int64, length = context_length, zero padded
    tokens: list  # decoded token strings, specials included
    eot_index: int  # position of the end-of-text token
    token_word: list  # per position: source word index, or None
    words: list  # whitespace-delimited words of the cleaned input
    truncated: bool = False
    text: str = ""

    @property
    def length(self):
        return self.eot_index + 1


class Tokenizer:
    def __init__(self, vocab_lines, merges_lines, context_length=77):
        self.context_length = context_length
        self.byte_encoder = bytes_to_unicode()
        self.byte_decoder = {v: k for k, v in self.byte_encoder.items()}

        tokens = [line for line in vocab_lines if line]
        self.encoder = {tok: i for i, tok in enumerate(tokens)}
        self.decoder = dict(enumerate(tokens))
        if SOT_TOKEN not in self.encoder or EOT_TOKEN not in self.encoder:
            raise ValueError("vocab is missing the start/end markers")
        self.sot_id = self.encoder[SOT_TOKEN]
        self.eot_id = self.encoder[EOT_TOKEN]

        lines = list(merges_lines)
        if lines and lines[0].startswith("#"):
            lines = lines[1:]
        merges = [tuple(line.split()) for line in lines if line.strip()]
        self.bpe_ranks = {pair: i for i, pair in enumerate(merges)}
        self._cache = {}

    @classmethod
    def from_files(cls, vocab_path, merges_path, context_length=77):
        with open(vocab_path, encoding="utf-8") as f:
            vocab_lines = [line.rstrip("\n") for line in f]
        with open(merges_path, encoding="utf-8") as f:
            merges_lines = [line.rstrip("\n") for line in f]
        return cls(vocab_lines, merges_lines, context_length=context_length)

    @property
    def vocab_size(self):
        return len(self.encoder)

    def _bpe(self, chunk):
        """Apply merge rules to one chunk (already byte-mapped)."""
        if chunk in self._cache:
            return self._cache[chunk]
        word = tuple(chunk[:-1]) + (chunk[-1] + "</w>",)
        pairs = _get_pairs(word)
        if not pairs:
            return (chunk + "</w>",)
        while True:
            best = min(pairs, key=lambda p: self.bpe_ranks.get(p, float("inf")))
            if best not in self.bpe_ranks:
                break
            first, second = best
            new_word = []
            i = 0
            while i < len(word):
                try:
                    j = word.index(first, i)
                except ValueError:
                    new_word.extend(word[i:])
                    break
                new_word.extend(word[i:j])
                i = j
                if i < len(word) - 1 and word[i + 1] == second:
                    new_word.append(first + second)
                    i += 2
                else:
                    new_word.append(word[i])
                    i += 1
            word = tuple(new_word)
            if len(word) == 1:
                break
            pairs = _get_pairs(word)
        self._cache[chunk] = word
        return word

    def encode(self, text, allow_empty=False):
        """Tokenize one string into a fixed-length id sequence.

        Raises ValueError on empty input unless allow_empty is set, in which
        case the sequence is just the start/end markers.
        """
        cleaned = " ".join(str(text).split()).lower()
        if not cleaned and not allow_empty:
            raise ValueError("cannot encode empty text")

        words = []
        word_spans = []
        for m in _WORD_PAT.finditer(cleaned):
            words.append(m.group(0))
            word_spans.append((m.start(), m.end()))

        body_ids = []
        body_tokens = []
        body_word = []
        for m in _CHUNK_PAT.finditer(cleaned):
            word_idx = None
            for wi, (ws, we) in enumerate(word_spans):
                if ws <= m.start() < we:
                    word_idx = wi
                    break
            mapped = "".join(self.byte_encoder[b] for b in m.group(0).encode("utf-8"))
            for sym in self._bpe(mapped):
                if sym not in self.encoder:
                    raise ValueError(f"token {sym!r} is not in the vocabulary")
                body_ids.append(self.encoder[sym])
                body_tokens.append(sym)
                body_word.append(word_idx)

        truncated = False
        max_body = self.context_length - 2
        if len(body_ids) > max_body:
            body_ids = body_ids[:max_body]
            body_tokens = body_tokens[:max_body]
            body_word = body_word[:max_body]
            truncated = True

        ids = np.zeros(self.context_length, dtype=np.int64)
        ids[0] = self.sot_id
        ids[1 : 1 + len(body_ids)] = body_ids
        eot_index = 1 + len(body_ids)
        ids[eot_index] = self.eot_id

        tokens = [SOT_TOKEN] + body_tokens + [EOT_TOKEN]
        token_word = [None] + body_word + [None]
        return EncodedText(
            ids=ids,
            tokens=tokens,
            eot_index=eot_index,
            token_word=token_word,
            words=words,
            truncated=truncated,
            text=cleaned,
        )

    def decode(self, ids):
        """Best-effort inverse of encode, for display and round-trip tests."""
        parts = []
        seen_eot = False
        for i in ids:
            i = int(i)
            if i == self.eot_id:
                seen_eot = True
            if seen_eot or i == self.sot_id or i not in self.decoder:
                continue
            parts.append(self.decoder[i])
        text = "".join(parts)
        # Byte-decode first; the word-end marker is plain ASCII and survives.
        raw = bytearray(self.byte_decoder[c] for c in text if c in self.byte_decoder)
        return raw.decode("utf-8", errors="replace").replace("</w>", " ").strip()


def build_vocab_lines(merges):
    """Derive the vocab implied by a merge list: all byte symbols, their
    word-final forms, each merge product in order, then the two markers."""
    base = list(bytes_to_unicode().values())
    lines = base + [c + "</w>" for c in base]
    for first, second in merges:
        lines.append(first + second)
    lines += [SOT_TOKEN, EOT_TOKEN]
    return lines
