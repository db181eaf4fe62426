"""Caption statistics: token-length histograms and element-phrase density.

Tokenization is whitespace+punctuation splitting, lowercase. Phrase
matching is exact whole-token contiguous subsequence ("ice cream" matches
"vanilla ice cream cone", never "icecream"). A light plural-stripping
stemmer exists behind a flag and stays out of every gated comparison.
"""

from __future__ import annotations

import dataclasses
import re

ELEMENT_TYPES = (
    "animal/human", "object", "location", "activity", "color", "spatial",
    "attribute", "food", "counting", "material", "shape", "other",
)

_TOKEN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)?", re.UNICODE)


def tokenize(text):
    """Lowercased word tokens; punctuation splits, apostrophes bind."""
    return _TOKEN_RE.findall(text.lower())


def _stem(token):
    # bare plural stripping; off by default everywhere that is compared
    if len(token) > 3 and token.endswith("es"):
        return token[:-2]
    if len(token) > 2 and token.endswith("s"):
        return token[:-1]
    return token


@dataclasses.dataclass(frozen=True)
class CaptionCorpus:
    entries: tuple          # of (source, caption)

    def __post_init__(self):
        if any(not cap.strip() for _, cap in self.entries):
            raise ValueError("empty caption in corpus")

    def __len__(self):
        return len(self.entries)

    def captions(self):
        return [cap for _, cap in self.entries]


def corpus_from_captions(captions, source="corpus"):
    return CaptionCorpus(entries=tuple((source, c) for c in captions))


def load_corpus(path):
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{ln}: expected source<TAB>caption")
            source, caption = line.split("\t", 1)
            entries.append((source, caption))
    if not entries:
        raise ValueError(f"{path}: empty corpus")
    return CaptionCorpus(entries=tuple(entries))


@dataclasses.dataclass(frozen=True)
class ElementLexicon:
    phrases: dict           # type -> tuple of lowercase phrases

    def __post_init__(self):
        for typ, plist in self.phrases.items():
            for ph in plist:
                if not ph or ph != ph.lower():
                    raise ValueError(f"lexicon phrase must be lowercase non-empty: {ph!r} ({typ})")

    def types(self):
        return tuple(self.phrases)


def load_lexicon(path):
    table = {}
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{ln}: expected type<TAB>phrase")
            typ, phrase = line.split("\t", 1)
            table.setdefault(typ, []).append(phrase.strip().lower())
    if not table:
        raise ValueError(f"{path}: empty lexicon")
    return ElementLexicon(phrases={t: tuple(ps) for t, ps in table.items()})


@dataclasses.dataclass(frozen=True)
class LengthHistogram:
    bucket_width: int
    counts: dict            # bucket start -> count

    @property
    def total(self):
        return sum(self.counts.values())


def length_histogram(corpus, bucket_width=5):
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    counts = {}
    for cap in corpus.captions():
        start = (len(tokenize(cap)) // bucket_width) * bucket_width
        counts[start] = counts.get(start, 0) + 1
    return LengthHistogram(bucket_width=bucket_width, counts=counts)


def _contains_phrase(tokens, phrase_tokens):
    k = len(phrase_tokens)
    if k == 0 or k > len(tokens):
        return False
    for i in range(len(tokens) - k + 1):
        if tokens[i:i + k] == phrase_tokens:
            return True
    return False


def match_elements(corpus, lexicon, stem=False):
    """Per-type percentage of captions containing at least one phrase of
    that type. A caption counts once per type however many phrases hit."""
    if not lexicon.phrases:
        raise ValueError("empty lexicon")
    norm = (lambda ts: [_stem(t) for t in ts]) if stem else (lambda ts: ts)
    phrase_tokens = {
        typ: [norm(tokenize(ph)) for ph in plist]
        for typ, plist in lexicon.phrases.items()
    }
    hits = {typ: 0 for typ in lexicon.phrases}
    for cap in corpus.captions():
        toks = norm(tokenize(cap))
        for typ, plist in phrase_tokens.items():
            if any(_contains_phrase(toks, p) for p in plist):
                hits[typ] += 1
    n = len(corpus)
    return {typ: 100.0 * c / n for typ, c in hits.items()}


@dataclasses.dataclass(frozen=True)
class DensityReport:
    corpus_names: tuple
    per_type: dict          # type -> tuple of percentages, one per corpus
    means: tuple            # per-corpus mean over types

    def csv_lines(self):
        lines = ["type," + ",".join(self.corpus_names)]
        for typ, vals in self.per_type.items():
            lines.append(typ + "," + ",".join(f"{v:.4f}" for v in vals))
        lines.append("mean," + ",".join(f"{m:.4f}" for m in self.means))
        return lines


def density_report(corpora, lexicon, stem=False):
    """Side-by-side per-type densities for >= 2 corpora ({name: corpus})."""
    if len(corpora) < 2:
        raise ValueError("density comparison needs at least two corpora")
    names = tuple(corpora)
    cols = {name: match_elements(corpora[name], lexicon, stem=stem) for name in names}
    types = tuple(lexicon.phrases)
    per_type = {typ: tuple(cols[name][typ] for name in names) for typ in types}
    means = tuple(sum(cols[name][t] for t in types) / len(types) for name in names)
    return DensityReport(corpus_names=names, per_type=per_type, means=means)
