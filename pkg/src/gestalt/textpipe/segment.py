"""Document and sentence segmentation.

Documents are delimited by WikiText top-level headings (``= Title =``).
Sentences are split on terminal punctuation, then any sentence longer than
the token cap is re-split at the last comma/semicolon/colon before the cap,
or hard-split at the cap when no such punctuation exists.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

_HEADING_RE = re.compile(r"^\s*=\s+([^=\s](?:.*[^=\s])?)\s+=\s*$")
_BOUNDARY_RE = re.compile(r"[.!?]+[\"')\]]*(\s+)(?=[\"'(\[]?[A-Z0-9])")
_FALLBACK_PUNCT = ",;:"

ABBREVIATIONS = frozenset(
    {"mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "jr.", "sr.", "vs.", "etc.",
     "e.g.", "i.e.", "no.", "mt.", "fig.", "inc.", "ltd.", "co.", "gen.", "col."}
)


@dataclass
class Document:
    doc_id: int
    title: str
    text: str


def split_documents(corpus_text: str) -> list[Document]:
    docs: list[Document] = []
    title, lines = None, []

    def flush():
        body = "\n".join(lines).strip("\n")
        if title is not None or body.strip():
            docs.append(Document(len(docs), title or "", body))

    for line in corpus_text.splitlines():
        m = _HEADING_RE.match(line)
        if m:
            flush()
            title, lines = m.group(1), []
        else:
            lines.append(line)
    flush()
    return docs


def _primary_split(paragraph: str) -> list[str]:
    out, start = [], 0
    for m in _BOUNDARY_RE.finditer(paragraph):
        head = paragraph[start:m.start(1)]
        last_word = head.rsplit(None, 1)[-1].lower() if head.strip() else ""
        if last_word in ABBREVIATIONS:
            continue
        out.append(head.strip())
        start = m.end(1)
    out.append(paragraph[start:].strip())
    return [s for s in out if s]


def _char_offset(vocab, tokens, n):
    """Character offset of the boundary after the first ``n`` tokens, or None
    when that boundary falls inside a multi-byte character."""
    raw = vocab.decode_bytes(tokens[:n])
    try:
        return len(raw.decode("utf-8"))
    except UnicodeDecodeError:
        return None


def _cap(text: str, L_max: int, vocab) -> list[str]:
    tokens = vocab.encode(text)
    if len(tokens) <= L_max:
        return [text]
    n = L_max
    cut = _char_offset(vocab, tokens, n)
    while cut is None and n > 1:
        n -= 1
        cut = _char_offset(vocab, tokens, n)
    if cut is None or cut == 0:
        cut = 1
    split_at = None
    for i in range(cut - 1, 0, -1):
        if text[i] in _FALLBACK_PUNCT and text[: i + 1].strip():
            split_at = i + 1
            break
    if split_at is None:
        split_at = cut
    head, tail = text[:split_at].strip(), text[split_at:].strip()
    if not head:
        head, tail = text[:cut], text[cut:]
    out = _cap(head, L_max, vocab) if head else []
    if tail:
        out.extend(_cap(tail, L_max, vocab))
    return out


def split_sentences(doc_text: str, L_max: int, vocab) -> list[str]:
    """Split ``doc_text`` into sentences of at most ``L_max`` tokens each."""
    if L_max < 8:
        raise ValueError("L_max must be at least 8")
    sentences: list[str] = []
    for paragraph in doc_text.splitlines():
        paragraph = paragraph.strip()
        if not paragraph:
            continue
        for s in _primary_split(paragraph):
            sentences.extend(_cap(s, L_max, vocab))
    return sentences
