"""Document Q&A: BM25 index over chunked bridge documents plus an
LLM answer constrained to the retrieved context.

Chunks are 512 characters with 64 overlap, snapped to whitespace so words
stay whole; offsets are kept so the original documents are reconstructable
from the chunk list alone. Retrieval is plain BM25 (k1=1.2, b=0.75) with
deterministic (doc_id, offset) tie-breaking.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from ..errors import FatalError, ResolvableError
from ..llm.prompts import RAG_ANSWER_SYSTEM
from .base import SkillContext, SkillNode, SkillOutput
from ..state.registry import AlgorithmCard, InputRequirement

CHUNK_SIZE = 512
CHUNK_OVERLAP = 64
BM25_K1 = 1.2
BM25_B = 0.75

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Chunk:
    doc_id: int
    offset: int
    text: str


def chunk_document(doc_id: int, text: str) -> list[Chunk]:
    chunks: list[Chunk] = []
    start = 0
    n = len(text)
    while start < n:
        end = min(start + CHUNK_SIZE, n)
        if end < n:
            # snap back to the last whitespace so words stay whole
            cut = text.rfind(" ", start + 1, end + 1)
            for alt in ("\n", "\t"):
                cut = max(cut, text.rfind(alt, start + 1, end + 1))
            if cut > start:
                end = cut
        chunks.append(Chunk(doc_id=doc_id, offset=start, text=text[start:end]))
        if end >= n:
            break
        nxt = max(end - CHUNK_OVERLAP, start + 1)
        # snap forward to a word start inside the overlap
        m = re.search(r"\S", text[nxt:end])
        ws = text.rfind(" ", nxt, end)
        if ws >= nxt:
            nxt = ws + 1
        elif m:
            nxt = nxt + m.start()
        start = nxt
    return chunks


def reconstruct_documents(chunks: list[Chunk]) -> dict[int, str]:
    docs: dict[int, dict[int, str]] = {}
    for ch in chunks:
        docs.setdefault(ch.doc_id, {})[ch.offset] = ch.text
    out = {}
    for doc_id, parts in docs.items():
        end = max(off + len(t) for off, t in parts.items())
        buf = [" "] * end
        for off, t in sorted(parts.items()):
            buf[off:off + len(t)] = list(t)
        out[doc_id] = "".join(buf)
    return out


@dataclass
class Index:
    chunks: list[Chunk]
    doc_freq: dict[str, int] = field(default_factory=dict)
    lengths: list[int] = field(default_factory=list)
    avg_length: float = 0.0
    postings: dict[str, list[tuple[int, int]]] = field(default_factory=dict)

    @property
    def n_chunks(self) -> int:
        return len(self.chunks)

    def compute_statistics(self) -> None:
        self.doc_freq = {}
        self.lengths = []
        self.postings = {}
        for idx, chunk in enumerate(self.chunks):
            toks = tokenize(chunk.text)
            self.lengths.append(len(toks))
            for term, tf in Counter(toks).items():
                self.doc_freq[term] = self.doc_freq.get(term, 0) + 1
                self.postings.setdefault(term, []).append((idx, tf))
        self.avg_length = (sum(self.lengths) / len(self.lengths)) if self.lengths else 0.0

    # -- persistence: chunks file + statistics file -------------------------

    def save(self, directory: Union[str, Path]) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "chunks.jsonl", "w", encoding="utf-8") as fh:
            for ch in self.chunks:
                fh.write(json.dumps({"doc_id": ch.doc_id, "offset": ch.offset,
                                     "text": ch.text}, ensure_ascii=False) + "\n")
        stats = {"doc_freq": self.doc_freq, "lengths": self.lengths,
                 "avg_length": self.avg_length, "k1": BM25_K1, "b": BM25_B,
                 "n_chunks": self.n_chunks}
        (directory / "stats.json").write_text(json.dumps(stats, ensure_ascii=False),
                                              encoding="utf-8")

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "Index":
        directory = Path(directory)
        chunks = []
        with open(directory / "chunks.jsonl", "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    doc = json.loads(line)
                    chunks.append(Chunk(doc_id=int(doc["doc_id"]),
                                        offset=int(doc["offset"]), text=doc["text"]))
        index = cls(chunks=chunks)
        index.compute_statistics()
        stats = json.loads((directory / "stats.json").read_text(encoding="utf-8"))
        if stats["n_chunks"] != index.n_chunks or stats["lengths"] != index.lengths:
            raise FatalError("stored index statistics do not match the chunks file")
        return index


def build_index(documents: list[str]) -> Index:
    docs = [d for d in documents if d and d.strip()]
    if not docs:
        raise FatalError("cannot index an empty document set")
    chunks: list[Chunk] = []
    for doc_id, text in enumerate(documents):
        if text and text.strip():
            chunks.extend(chunk_document(doc_id, text))
    index = Index(chunks=chunks)
    index.compute_statistics()
    return index


def retrieve(index: Index, query: str, k: int) -> list[tuple[Chunk, float]]:
    if k < 1:
        raise ResolvableError("k must be at least 1")
    q_terms = tokenize(query)
    scores: dict[int, float] = {}
    n = index.n_chunks
    for term in set(q_terms):
        postings = index.postings.get(term)
        if not postings:
            continue
        df = index.doc_freq[term]
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for idx, tf in postings:
            norm = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * index.lengths[idx] / index.avg_length)
            scores[idx] = scores.get(idx, 0.0) + idf * tf * (BM25_K1 + 1.0) / norm
    ranked = sorted(scores.items(),
                    key=lambda kv: (-kv[1], index.chunks[kv[0]].doc_id,
                                    index.chunks[kv[0]].offset))
    return [(index.chunks[i], s) for i, s in ranked[:k]]


def answer(question: str, chunks: list[Chunk], gateway) -> str:
    if chunks:
        context = "\n\n".join(f"[passage {i + 1}]\n{c.text}" for i, c in enumerate(chunks))
    else:
        context = "(no passages matched the question)"
    user = f"Context passages:\n{context}\n\nQuestion: {question}"
    return gateway.ask(RAG_ANSWER_SYSTEM, user, temperature=0.0)


class RagNode(SkillNode):
    name = "rag"
    args_schema = {"type": "object", "properties": {"question": {"type": "string"}},
                   "required": ["question"]}

    def card(self) -> AlgorithmCard:
        return AlgorithmCard(
            node_name=self.name,
            function="Perform Q&A operations on bridge information: retrieves the most "
                     "relevant passages from the indexed bridge documents and answers "
                     "strictly from them.",
            input_requirements=[
                InputRequirement("question", "natural-language question about the bridge", "", ""),
            ],
            input_example='Ask: "What materials are the stay cables made of?"',
            output_example="a prose answer quoting the indexed documents",
        )

    def extract_args(self, instruction: str, ctx: SkillContext) -> dict[str, Any]:
        # the instruction IS the question; no argument extraction round-trip
        return {"question": instruction}

    def run(self, args: dict[str, Any], ctx: SkillContext) -> SkillOutput:
        if ctx.config is None or ctx.config.rag_index is None:
            raise FatalError("active configuration has no document index")
        hits = retrieve(ctx.config.rag_index, args["question"], k=4)
        reply = answer(args["question"], [c for c, _ in hits], ctx.gateway)
        return SkillOutput(message=reply)
