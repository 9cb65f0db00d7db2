"""Noun-phrase extraction for region-text alignment.

A phrase is a maximal run of zero or more adjectives followed by one or
more nouns, as tagged by a small bundled lexicon.  Words the lexicon does
not know are treated as nouns when they end the sentence (captions often
end on their subject) and are otherwise skipped, which also breaks any
span in progress.  Spans longer than ``n_max`` words keep their trailing
``n_max`` words — the head nouns and their closest modifiers.
"""

import string
from dataclasses import dataclass
from importlib import resources

NOUN = "noun"
ADJ = "adj"
OTHER = "other"
_TAGS = (NOUN, ADJ, OTHER)

DEFAULT_N_MAX = 4


@dataclass(frozen=True)
class Phrase:
    text: str
    words: tuple
    start: int  # word index, inclusive
    end: int  # word index, exclusive


def load_lexicon(path=None):
    """word -> tag mapping; the bundled lexicon unless a path is given."""
    if path is None:
        text = resources.files("clipscope").joinpath("data/lexicon.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    lexicon = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in _TAGS:
            raise ValueError(f"lexicon line {lineno}: expected 'word tag', got {line!r}")
        lexicon[parts[0].lower()] = parts[1]
    return lexicon


_DEFAULT_LEXICON = None


def default_lexicon():
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = load_lexicon()
    return _DEFAULT_LEXICON


def _strip(word):
    return word.strip(string.punctuation)


def _tag(word, is_final, lexicon):
    """Phrase role of one word, or None when it cannot join a phrase."""
    key = _strip(word.lower())
    if not key:
        return None
    tag = lexicon.get(key)
    if tag == OTHER:
        return None
    if tag is None:
        return NOUN if is_final else None
    return tag


def extract_phrases(words, lexicon=None, n_max=DEFAULT_N_MAX):
    """Adjective*-noun+ spans from a word sequence, in sentence order."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if lexicon is None:
        lexicon = default_lexicon()
    words = [str(w) for w in words]
    n = len(words)
    tags = [_tag(w, i == n - 1, lexicon) for i, w in enumerate(words)]
    phrases = []
    i = 0
    while i < n:
        if tags[i] not in (ADJ, NOUN):
            i += 1
            continue
        j = i
        while j < n and tags[j] == ADJ:
            j += 1
        if j == n or tags[j] != NOUN:
            # adjectives with no noun to attach to
            i = j if j > i else i + 1
            continue
        k = j
        while k < n and tags[k] == NOUN:
            k += 1
        start = max(i, k - n_max)
        chosen = tuple(_strip(w.lower()) for w in words[start:k])
        phrases.append(Phrase(text=" ".join(chosen), words=chosen, start=start, end=k))
        i = k
    return phrases


def extract_from_text(text, lexicon=None, n_max=DEFAULT_N_MAX):
    """Phrase extraction straight from a sentence string."""
    return extract_phrases(text.split(), lexicon=lexicon, n_max=n_max)
