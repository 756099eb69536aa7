"""N-ary knowledge graph store.

A fact is a primary triple (s, p, o) plus zero or more attribute:value
pairs. Binary facts are the empty-attrs case. Entities and relations are
interned to integer ids through two symbol tables; attribute names live
in the relation table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

HOLE = -1


class KgError(ValueError):
    """Malformed fact data or an unusable pattern."""


class SymbolTable:
    """Insertion-ordered string interner. Ids are dense and stable."""

    def __init__(self) -> None:
        self._by_name: Dict[str, int] = {}
        self._names: List[str] = []

    def intern(self, name: str) -> int:
        if not isinstance(name, str) or name == "":
            raise KgError(f"symbol must be a non-empty string, got {name!r}")
        idx = self._by_name.get(name)
        if idx is None:
            idx = len(self._names)
            self._by_name[name] = idx
            self._names.append(name)
        return idx

    def id_of(self, name: str) -> Optional[int]:
        return self._by_name.get(name)

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def names(self) -> List[str]:
        return list(self._names)

    def copy(self) -> "SymbolTable":
        t = SymbolTable()
        t._by_name = dict(self._by_name)
        t._names = list(self._names)
        return t


def _canon_attrs(attrs: Sequence[Tuple[int, int]]) -> Tuple[Tuple[int, int], ...]:
    return tuple(sorted(attrs))


@dataclass(frozen=True)
class NAryFact:
    """(s, p, o) with attribute pairs. Attrs compare as a multiset."""

    s: int
    p: int
    o: int
    attrs: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        seen = set()
        for pair in self.attrs:
            if pair in seen:
                raise KgError(f"duplicate attribute pair {pair} in one fact")
            seen.add(pair)

    def key(self) -> Tuple:
        return (self.s, self.p, self.o, _canon_attrs(self.attrs))

    def __eq__(self, other):
        if not isinstance(other, NAryFact):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True)
class FactPattern:
    """An NAryFact with exactly one entity position replaced by HOLE.

    The hole may sit at s, at o, or at one attribute value. Predicates
    and attribute names are never holes.
    """

    s: int
    p: int
    o: int
    attrs: Tuple[Tuple[int, int], ...] = ()

    def hole_count(self) -> int:
        n = int(self.s == HOLE) + int(self.o == HOLE)
        n += sum(1 for _, v in self.attrs if v == HOLE)
        return n


class KnowledgeGraph:
    def __init__(self) -> None:
        self.entities = SymbolTable()
        self.relations = SymbolTable()
        self.facts: List[NAryFact] = []
        self._keys: Set[Tuple] = set()
        self._by_pred: Dict[int, List[int]] = {}
        self._ent_rels: Dict[int, Set[int]] = {}

    # -- construction ----------------------------------------------------

    def add(self, s: str, p: str, o: str, attrs: Sequence[Tuple[str, str]] = ()) -> Optional[NAryFact]:
        """Intern names and store the fact. Duplicates collapse to the
        first stored copy; returns None for a duplicate."""
        fact = NAryFact(
            self.entities.intern(s),
            self.relations.intern(p),
            self.entities.intern(o),
            tuple((self.relations.intern(a), self.entities.intern(v)) for a, v in attrs),
        )
        return self._add_fact(fact)

    def _add_fact(self, fact: NAryFact) -> Optional[NAryFact]:
        k = fact.key()
        if k in self._keys:
            return None
        self._keys.add(k)
        idx = len(self.facts)
        self.facts.append(fact)
        self._by_pred.setdefault(fact.p, []).append(idx)
        rels = {fact.p} | {a for a, _ in fact.attrs}
        ents = {fact.s, fact.o} | {v for _, v in fact.attrs}
        for e in ents:
            self._ent_rels.setdefault(e, set()).update(rels)
        return fact

    # -- counts ----------------------------------------------------------

    @property
    def n_facts(self) -> int:
        return len(self.facts)

    @property
    def n_entities(self) -> int:
        """Size of the entity symbol table. A table entry survives even
        when every fact mentioning it is removed, so embeddings stay
        resolvable against a corrupted copy."""
        return len(self.entities)

    def relation_counts(self) -> Tuple[int, int]:
        """(binary, nary) predicate counts. A predicate with at least one
        attributed fact counts as n-ary even if it also has plain
        triples; attribute-only relations count as neither."""
        nary = set()
        seen = set()
        for f in self.facts:
            seen.add(f.p)
            if f.attrs:
                nary.add(f.p)
        return len(seen - nary), len(nary)

    @property
    def n_binary_relations(self) -> int:
        return self.relation_counts()[0]

    @property
    def n_nary_relations(self) -> int:
        return self.relation_counts()[1]

    # -- queries ---------------------------------------------------------

    def facts_with_predicate(self, p: int) -> List[NAryFact]:
        return [self.facts[i] for i in self._by_pred.get(p, ())]

    def has_fact(self, fact: NAryFact) -> bool:
        return fact.key() in self._keys

    def entity_name(self, e: int) -> str:
        return self.entities.name(e)

    def relation_name(self, r: int) -> str:
        return self.relations.name(r)


def entity_has_relation(kg: KnowledgeGraph, e: int, r: int) -> bool:
    """True iff some stored fact contains e in any entity role (s, o or
    an attribute value) and r as its predicate or one of its attribute
    names."""
    return r in kg._ent_rels.get(e, ())


def match_fact(kg: KnowledgeGraph, pattern: FactPattern) -> Set[int]:
    """Entities that, substituted into the single hole, give a stored fact.

    Attribute pairs match as a multiset: the exact pairs must all be
    present and the one (a, HOLE) pair must account for exactly the
    remaining stored pair.
    """
    if pattern.hole_count() != 1:
        raise KgError(f"pattern must contain exactly one hole, got {pattern.hole_count()}")
    if pattern.p == HOLE or any(a == HOLE for a, _ in pattern.attrs):
        raise KgError("predicate and attribute-name positions cannot be holes")
    out: Set[int] = set()
    exact = [pair for pair in pattern.attrs if pair[1] != HOLE]
    hole_attr = next((a for a, v in pattern.attrs if v == HOLE), None)
    for f in kg.facts_with_predicate(pattern.p):
        if pattern.s != HOLE and f.s != pattern.s:
            continue
        if pattern.o != HOLE and f.o != pattern.o:
            continue
        if len(f.attrs) != len(pattern.attrs):
            continue
        remaining = list(f.attrs)
        ok = True
        for pair in exact:
            if pair in remaining:
                remaining.remove(pair)
            else:
                ok = False
                break
        if not ok:
            continue
        if hole_attr is not None:
            if len(remaining) != 1 or remaining[0][0] != hole_attr:
                continue
            out.add(remaining[0][1])
        else:
            if remaining:
                continue
            out.add(f.s if pattern.s == HOLE else f.o)
    return out


# -- serialization -------------------------------------------------------


def save_kg(kg: KnowledgeGraph, path: str) -> None:
    """UTF-8 JSON Lines: a header object carrying the full symbol
    tables, then one fact per line with keys in s, p, o, attrs order.
    The header keeps entity and relation ids stable across a round
    trip, so models trained against the graph still apply to a loaded
    copy even when some symbols appear in no fact."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"entities": list(kg.entities.names()), "relations": list(kg.relations.names())}
        fh.write(json.dumps(header, ensure_ascii=False))
        fh.write("\n")
        for f in kg.facts:
            rec = {
                "s": kg.entities.name(f.s),
                "p": kg.relations.name(f.p),
                "o": kg.entities.name(f.o),
                "attrs": [[kg.relations.name(a), kg.entities.name(v)] for a, v in f.attrs],
            }
            fh.write(json.dumps(rec, ensure_ascii=False))
            fh.write("\n")


def load_kg(path: str) -> KnowledgeGraph:
    """Parse a JSON Lines fact file. Errors carry the 1-based line number;
    duplicate lines collapse to one stored fact. A leading header object
    with "entities" and "relations" preloads the symbol tables; plain
    fact-only files intern symbols in order of first mention."""
    kg = KnowledgeGraph()
    first = True
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise KgError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise KgError(f"{path}:{lineno}: fact record must be an object")
            if first:
                first = False
                if "s" not in rec and "entities" in rec and "relations" in rec:
                    for name in rec["entities"]:
                        kg.entities.intern(name)
                    for name in rec["relations"]:
                        kg.relations.intern(name)
                    continue
            try:
                s, p, o = rec["s"], rec["p"], rec["o"]
            except KeyError as exc:
                raise KgError(f"{path}:{lineno}: missing key {exc}") from exc
            attrs = rec.get("attrs", [])
            if not isinstance(attrs, list):
                raise KgError(f"{path}:{lineno}: attrs must be a list")
            pairs = []
            for pair in attrs:
                if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
                    raise KgError(f"{path}:{lineno}: attr pair must be [name, value]")
                pairs.append((pair[0], pair[1]))
            try:
                kg.add(s, p, o, pairs)
            except KgError as exc:
                raise KgError(f"{path}:{lineno}: {exc}") from exc
    return kg


def corrupt_kg(kg: KnowledgeGraph, fraction: float, seed: int) -> KnowledgeGraph:
    """Remove floor(fraction * n_facts) facts, chosen uniformly without
    replacement. Symbol tables are preserved verbatim."""
    if not (0.0 <= fraction <= 1.0):
        raise KgError(f"fraction must be in [0, 1], got {fraction}")
    n_remove = math.floor(fraction * kg.n_facts)
    gen = np.random.default_rng(int(seed))
    drop = set(gen.choice(kg.n_facts, size=n_remove, replace=False).tolist()) if n_remove else set()
    out = KnowledgeGraph()
    out.entities = kg.entities.copy()
    out.relations = kg.relations.copy()
    for i, f in enumerate(kg.facts):
        if i not in drop:
            out._add_fact(f)
    return out
