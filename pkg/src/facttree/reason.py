"""Answer inference over a grounded fact tree.

Facts are completed bottom-up. Within a fact, a learned scorer ranks
candidate entities for the one unresolved slot; candidates already
connected to the relation the entity will serve in the fact above get
their score amplified. The chosen entity then transfers upward through
the shared placeholder, so by the root only the answer slot is open.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from . import numkit
from .construct import Placeholder
from .kg import HOLE, FactPattern, KnowledgeGraph, NAryFact, entity_has_relation, match_fact
from .locate import KgFact, KgFactTree

TOP_N_AMPLIFY = 512


class ReasonError(ValueError):
    """The fact tree cannot be completed."""


# -- fact scorer ---------------------------------------------------------


class FactScorer:
    """Validity and attribute-compatibility scorer for n-ary facts.

    score = sigmoid validity of (s, p, o) when the fact has no
    attributes, else the mean of that validity and the worst
    attribute's compatibility.
    """

    def __init__(self, n_entities: int, n_relations: int, dim: int = 50, seed: int = 0):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.dim = dim
        gen = numkit.rng(seed)
        sc = 0.1
        d = dim
        self.ent = gen.normal(0.0, sc, size=(n_entities, d))
        self.rel = gen.normal(0.0, sc, size=(n_relations, d))
        self.w1v = gen.normal(0.0, sc, size=(3 * d, 2 * d))
        self.b1v = np.zeros(2 * d)
        # zero output layers: both heads start at 0.5 where the sigmoid
        # has full slope, so the early flood of negatives cannot
        # saturate the compatibility head before it discriminates
        self.w2v = np.zeros(2 * d)
        self.b2v = 0.0
        self.w1c = gen.normal(0.0, sc, size=(5 * d, 2 * d))
        self.b1c = np.zeros(2 * d)
        self.w2c = np.zeros(2 * d)
        self.b2c = 0.0

    def params(self) -> List[np.ndarray]:
        return [self.ent, self.rel, self.w1v, self.b1v, self.w2v, np.asarray([self.b2v]),
                self.w1c, self.b1c, self.w2c, np.asarray([self.b2c])]

    def set_params(self, ps: List[np.ndarray]) -> None:
        (self.ent, self.rel, self.w1v, self.b1v, self.w2v, b2v,
         self.w1c, self.b1c, self.w2c, b2c) = ps
        self.b2v = float(np.asarray(b2v).ravel()[0])
        self.b2c = float(np.asarray(b2c).ravel()[0])

    def _forward(self, S: np.ndarray, P: np.ndarray, O: np.ndarray, AV: np.ndarray):
        """S, P, O (B,), AV (B, A, 2); returns cache with scores (B,)."""
        B = S.shape[0]
        es, ep, eo = self.ent[S], self.rel[P], self.ent[O]
        x3 = np.concatenate([es, ep, eo], axis=1)
        z1v = x3 @ self.w1v + self.b1v
        h1v = numkit.relu(z1v)
        val = numkit.sigmoid(h1v @ self.w2v + self.b2v)
        cache = {"S": S, "P": P, "O": O, "AV": AV, "x3": x3, "z1v": z1v, "h1v": h1v, "val": val}
        A = AV.shape[1]
        if A == 0:
            cache["score"] = val
            return cache
        ea = self.rel[AV[:, :, 0]]
        ev = self.ent[AV[:, :, 1]]
        x5 = np.concatenate(
            [np.repeat(x3[:, None, :], A, axis=1), ea, ev], axis=2
        )
        z1c = x5 @ self.w1c + self.b1c
        h1c = numkit.relu(z1c)
        comp = numkit.sigmoid(h1c @ self.w2c + self.b2c)
        amin = np.argmin(comp, axis=1)
        cache.update({"x5": x5, "z1c": z1c, "h1c": h1c, "comp": comp, "amin": amin})
        cache["score"] = 0.5 * val + 0.5 * comp[np.arange(B), amin]
        return cache

    def score_batch(self, S, P, O, AV) -> np.ndarray:
        S = np.asarray(S, dtype=np.int64)
        P = np.asarray(P, dtype=np.int64)
        O = np.asarray(O, dtype=np.int64)
        AV = np.asarray(AV, dtype=np.int64).reshape(S.shape[0], -1, 2)
        return self._forward(S, P, O, AV)["score"]

    def score_fact(self, s: int, p: int, o: int, attrs: Sequence[Tuple[int, int]] = ()) -> float:
        AV = np.array(list(attrs), dtype=np.int64).reshape(1, -1, 2)
        return float(self.score_batch([s], [p], [o], AV)[0])

    def _backward(self, cache, y: np.ndarray):
        """Mean BCE loss over the batch and gradients in params() order."""
        B = y.shape[0]
        score = np.clip(cache["score"], 1e-12, 1.0 - 1e-12)
        loss = -float(np.mean(y * np.log(score) + (1 - y) * np.log(1 - score)))
        dscore = (score - y) / (score * (1.0 - score)) / B
        A = cache["AV"].shape[1]
        dval = dscore if A == 0 else 0.5 * dscore

        val = cache["val"]
        dvin = dval * val * (1 - val)
        dw2v = cache["h1v"].T @ dvin
        db2v = float(dvin.sum())
        dh1v = dvin[:, None] * self.w2v
        dz1v = dh1v * (cache["z1v"] > 0)
        dw1v = cache["x3"].T @ dz1v
        db1v = dz1v.sum(axis=0)
        dx3 = dz1v @ self.w1v.T

        dent = np.zeros_like(self.ent)
        drel = np.zeros_like(self.rel)
        dw1c = np.zeros_like(self.w1c)
        db1c = np.zeros_like(self.b1c)
        dw2c = np.zeros_like(self.w2c)
        db2c = 0.0
        if A > 0:
            comp, amin = cache["comp"], cache["amin"]
            rows = np.arange(B)
            dcomp = np.zeros_like(comp)
            dcomp[rows, amin] = 0.5 * dscore
            dcin = dcomp * comp * (1 - comp)
            dw2c = np.einsum("bah,ba->h", cache["h1c"], dcin)
            db2c = float(dcin.sum())
            dh1c = dcin[:, :, None] * self.w2c
            dz1c = dh1c * (cache["z1c"] > 0)
            dw1c = np.einsum("bad,bah->dh", cache["x5"], dz1c)
            db1c = dz1c.sum(axis=(0, 1))
            dx5 = dz1c @ self.w1c.T
            d = self.dim
            dx3 = dx3 + dx5[:, :, : 3 * d].sum(axis=1)
            np.add.at(drel, cache["AV"][:, :, 0], dx5[:, :, 3 * d : 4 * d])
            np.add.at(dent, cache["AV"][:, :, 1], dx5[:, :, 4 * d :])
        d = self.dim
        np.add.at(dent, cache["S"], dx3[:, :d])
        np.add.at(drel, cache["P"], dx3[:, d : 2 * d])
        np.add.at(dent, cache["O"], dx3[:, 2 * d :])
        return loss, [dent, drel, dw1v, db1v, dw2v, np.asarray([db2v]),
                      dw1c, db1c, dw2c, np.asarray([db2c])]


@dataclass
class ScorerTrainConfig:
    dim: int = 50
    lr: float = 1e-4
    epochs: int = 200
    neg_ratio: int = 5
    val_fraction: float = 0.1
    seed: int = 0
    log_every: int = 0


def _corrupt(kg: KnowledgeGraph, fact: NAryFact, gen: np.random.Generator) -> NAryFact:
    """Replace one entity slot (subject, object or an attribute value,
    never the predicate or an attribute name) with a random entity,
    avoiding other stored facts.

    For attributed facts the value half gets probability 0.5 rather
    than a uniform share: value slots only ever appear in attributed
    facts, so a uniform slot draw starves the compatibility head of
    value corruptions and it never learns to rank them."""
    n = len(kg.entities)
    cand = fact
    for _ in range(10):
        e = int(gen.integers(n))
        if fact.attrs and gen.random() < 0.5:
            j = int(gen.integers(len(fact.attrs)))
            if e == fact.attrs[j][1] or (fact.attrs[j][0], e) in fact.attrs:
                continue
            attrs = list(fact.attrs)
            attrs[j] = (attrs[j][0], e)
            cand = NAryFact(fact.s, fact.p, fact.o, tuple(attrs))
        elif int(gen.integers(2)) == 0:
            if e == fact.s:
                continue
            cand = NAryFact(e, fact.p, fact.o, fact.attrs)
        else:
            if e == fact.o:
                continue
            cand = NAryFact(fact.s, fact.p, e, fact.attrs)
        if not kg.has_fact(cand):
            return cand
    return cand


def _group_by_attr_count(rows: Sequence[Tuple[NAryFact, float]]):
    groups: Dict[int, List[Tuple[NAryFact, float]]] = {}
    for fact, y in rows:
        groups.setdefault(len(fact.attrs), []).append((fact, y))
    out = []
    for a in sorted(groups):
        fs = groups[a]
        S = np.array([f.s for f, _ in fs], dtype=np.int64)
        P = np.array([f.p for f, _ in fs], dtype=np.int64)
        O = np.array([f.o for f, _ in fs], dtype=np.int64)
        AV = np.array([[list(pair) for pair in f.attrs] for f, _ in fs], dtype=np.int64).reshape(len(fs), a, 2)
        Y = np.array([y for _, y in fs], dtype=np.float64)
        out.append((S, P, O, AV, Y))
    return out


def _eval_loss(scorer: FactScorer, groups) -> float:
    total, n = 0.0, 0
    for S, P, O, AV, Y in groups:
        score = np.clip(scorer._forward(S, P, O, AV)["score"], 1e-12, 1 - 1e-12)
        total += float(-np.sum(Y * np.log(score) + (1 - Y) * np.log(1 - score)))
        n += len(Y)
    return total / n if n else 0.0


def train_scorer(kg: KnowledgeGraph, cfg: ScorerTrainConfig) -> Tuple[FactScorer, Dict]:
    """BCE on stored facts against per-epoch resampled corruptions;
    keeps the parameters of the best validation epoch. With
    val_fraction 0 nothing is held out and the training loss stands in,
    the right setting when every stored fact will be queried later."""
    if not kg.facts:
        raise ReasonError("empty knowledge graph")
    scorer = FactScorer(len(kg.entities), len(kg.relations), dim=cfg.dim, seed=cfg.seed)
    gen = numkit.rng(cfg.seed)
    pos = list(kg.facts)
    order = gen.permutation(len(pos))
    n_val = int(len(pos) * cfg.val_fraction) if len(pos) > 1 else 0
    val_pos = [pos[i] for i in order[:n_val]]
    train_pos = [pos[i] for i in order[n_val:]] or pos
    val_rows = [(f, 1.0) for f in val_pos]
    val_gen = numkit.rng(cfg.seed + 1)
    for f in val_pos:
        for _ in range(cfg.neg_ratio):
            val_rows.append((_corrupt(kg, f, val_gen), 0.0))
    val_groups = _group_by_attr_count(val_rows)

    state = numkit.AdamState(scorer.params())
    best_loss, best_params, best_epoch = float("inf"), [p.copy() for p in scorer.params()], 0
    history = {"loss": [], "val_loss": []}
    for epoch in range(1, cfg.epochs + 1):
        egen = numkit.rng(cfg.seed * 1_000_003 + epoch)
        rows = [(f, 1.0) for f in train_pos]
        for f in train_pos:
            for _ in range(cfg.neg_ratio):
                rows.append((_corrupt(kg, f, egen), 0.0))
        groups = _group_by_attr_count(rows)
        n_total = sum(len(g[4]) for g in groups)
        total_loss = 0.0
        grads = [np.zeros_like(p) for p in scorer.params()]
        for S, P, O, AV, Y in groups:
            cache = scorer._forward(S, P, O, AV)
            loss, gs = scorer._backward(cache, Y)
            w = len(Y) / n_total
            total_loss += loss * w
            for acc, g in zip(grads, gs):
                acc += g * w
        scorer.set_params(numkit.adam_step(state, scorer.params(), grads, cfg.lr))
        val_loss = _eval_loss(scorer, val_groups) if val_groups else total_loss
        history["loss"].append(total_loss)
        history["val_loss"].append(val_loss)
        if val_loss < best_loss:
            best_loss, best_epoch = val_loss, epoch
            best_params = [p.copy() for p in scorer.params()]
        if cfg.log_every and epoch % cfg.log_every == 0:
            print(f"[scorer] epoch {epoch} loss {total_loss:.4f} val_loss {val_loss:.4f}")
    scorer.set_params(best_params)
    history["best_val_loss"] = best_loss
    history["best_epoch"] = best_epoch
    return scorer, history


SCORER_PARAM_NAMES = ("ent", "rel", "w1v", "b1v", "w2v", "b2v", "w1c", "b1c", "w2c", "b2c")


def save_scorer(scorer: FactScorer, path: str, extra_meta: Optional[Dict] = None) -> None:
    params = dict(zip(SCORER_PARAM_NAMES, scorer.params()))
    numkit.save_checkpoint(
        path, "fact-scorer",
        {"dim": scorer.dim, "n_entities": scorer.n_entities, "n_relations": scorer.n_relations},
        params, extra_meta or {},
    )


def load_scorer(path: str) -> FactScorer:
    config, params, _meta = numkit.load_checkpoint(path, "fact-scorer")
    scorer = FactScorer(config["n_entities"], config["n_relations"], dim=config["dim"], seed=0)
    scorer.set_params([params[n] for n in SCORER_PARAM_NAMES])
    return scorer


# -- completion of a single fact -----------------------------------------


@dataclass
class Ranked:
    entity: int
    final: float
    raw: float
    amplified: bool


def infer_missing(
    scorer: FactScorer,
    kg: KnowledgeGraph,
    s: int,
    p: int,
    o: int,
    attrs: Sequence[Tuple[int, int]],
    lam: float = 1.5,
    upper_rel: Optional[int] = None,
    candidates: Optional[Sequence[int]] = None,
    top_n: int = TOP_N_AMPLIFY,
) -> List[Ranked]:
    """Rank candidate entities for the single HOLE slot.

    Scores of the top_n raw candidates already connected to upper_rel
    are multiplied by lam (>= 1). Ties order by entity name.
    """
    if lam < 1.0:
        raise ReasonError(f"amplification factor must be at least 1, got {lam}")
    holes = [v for v in (s, o, *(v for _, v in attrs)) if v == HOLE]
    if any(a == HOLE for a, _ in attrs) or p == HOLE:
        raise ReasonError("predicate and attribute names cannot be holes")
    if len(holes) != 1:
        raise ReasonError(f"exactly one hole required, got {len(holes)}")
    if candidates is None:
        cands = np.arange(len(kg.entities), dtype=np.int64)
    else:
        cands = np.asarray(sorted(set(candidates)), dtype=np.int64)
    if cands.size == 0:
        raise ReasonError("no candidate entities")
    M = cands.size
    S = np.full(M, s, dtype=np.int64)
    O = np.full(M, o, dtype=np.int64)
    AV = np.tile(np.array([[a, v] for a, v in attrs], dtype=np.int64).reshape(1, -1, 2), (M, 1, 1))
    if s == HOLE:
        S = cands
    elif o == HOLE:
        O = cands
    else:
        j = next(i for i, (_, v) in enumerate(attrs) if v == HOLE)
        AV[:, j, 1] = cands
    P = np.full(M, p, dtype=np.int64)
    raw = scorer.score_batch(S, P, O, AV)

    order = sorted(range(M), key=lambda i: (-raw[i], kg.entity_name(int(cands[i]))))
    amplify: Set[int] = set()
    if upper_rel is not None:
        for i in order[:top_n]:
            if entity_has_relation(kg, int(cands[i]), upper_rel):
                amplify.add(i)
    ranked = [
        Ranked(int(cands[i]), float(raw[i]) * (lam if i in amplify else 1.0),
               float(raw[i]), i in amplify)
        for i in range(M)
    ]
    ranked.sort(key=lambda r: (-r.final, kg.entity_name(r.entity)))
    return ranked


# -- brute-force solving -------------------------------------------------


def _unify_slot(pat, stored: int, assign: Dict[int, int]) -> Optional[Dict[int, int]]:
    if isinstance(pat, Placeholder):
        if pat.pid in assign:
            return assign if assign[pat.pid] == stored else None
        out = dict(assign)
        out[pat.pid] = stored
        return out
    return assign if pat == stored else None


def _unify_attrs(pat_attrs, stored_attrs, assign) -> List[Dict[int, int]]:
    """All assignments that match the attribute multisets exactly."""
    if len(pat_attrs) != len(stored_attrs):
        return []
    by_name: Dict[int, List[int]] = {}
    for a, v in stored_attrs:
        by_name.setdefault(a, []).append(v)
    pat_by_name: Dict[int, List] = {}
    for a, v in pat_attrs:
        pat_by_name.setdefault(a, []).append(v)
    if set(by_name) != set(pat_by_name) or any(
        len(by_name[a]) != len(pat_by_name[a]) for a in by_name
    ):
        return []
    results = [assign]
    for a, pvals in sorted(pat_by_name.items()):
        svals = by_name[a]
        next_results = []
        for cur in results:
            for perm in set(itertools.permutations(range(len(svals)))):
                trial = cur
                for pv, ix in zip(pvals, perm):
                    trial = _unify_slot(pv, svals[ix], trial)
                    if trial is None:
                        break
                if trial is not None:
                    next_results.append(trial)
        # drop duplicate assignments from symmetric permutations
        seen, dedup = set(), []
        for r in next_results:
            key = frozenset(r.items())
            if key not in seen:
                seen.add(key)
                dedup.append(r)
        results = dedup
        if not results:
            return []
    return results


def enumerate_assignments(
    kg: KnowledgeGraph, tree: KgFactTree, limit: Optional[int] = None
) -> List[Dict[int, int]]:
    """All placeholder assignments under which every fact of the tree
    is a stored fact. Backtracks fact by fact, children first."""
    facts = tree.facts_postorder()
    out: List[Dict[int, int]] = []
    seen: Set[frozenset] = set()

    def rec(ix: int, assign: Dict[int, int]):
        if limit is not None and len(out) >= limit:
            return
        if ix == len(facts):
            key = frozenset(assign.items())
            if key not in seen:
                seen.add(key)
                out.append(assign)
            return
        f = facts[ix]
        for stored in kg.facts_with_predicate(f.p):
            a1 = _unify_slot(f.s, stored.s, assign)
            if a1 is None:
                continue
            a2 = _unify_slot(f.o, stored.o, a1)
            if a2 is None:
                continue
            for a3 in _unify_attrs(f.attrs, stored.attrs, a2):
                rec(ix + 1, a3)
                if limit is not None and len(out) >= limit:
                    return

    rec(0, {})
    return out


def answer_placeholder(tree: KgFactTree) -> Placeholder:
    for f in tree.facts_preorder():
        for ph in f.placeholders():
            if ph.kind == "answer":
                return ph
    raise ReasonError("fact tree has no answer placeholder")


def brute_force_answer(kg: KnowledgeGraph, tree: KgFactTree) -> Set[int]:
    """Every entity the answer placeholder takes across all satisfying
    assignments."""
    ph = answer_placeholder(tree)
    return {a[ph.pid] for a in enumerate_assignments(kg, tree)}


# -- bottom-up reasoning -------------------------------------------------


@dataclass
class FactTrace:
    fact_index: int
    hole: Optional[str]
    upper_rel: Optional[str]
    chosen: Optional[str]
    raw: Optional[float]
    final: Optional[float]
    amplified: bool
    locally_valid: Optional[bool]
    transfer_overridden: bool
    top: List[Tuple[str, float, float, bool]] = field(default_factory=list)


@dataclass
class ReasonResult:
    answer: int
    answer_name: str
    assignment: Dict[int, int]
    trace: List[FactTrace]


def _slot_value(v, assignment):
    if isinstance(v, Placeholder):
        return assignment.get(v.pid)
    return v


def reason(
    tree: KgFactTree,
    kg: KnowledgeGraph,
    scorer: Optional[FactScorer],
    lam: float = 1.5,
    oracle_intra: bool = False,
    oracle_inter: bool = False,
    top_n: int = TOP_N_AMPLIFY,
    trace_top: int = 10,
) -> ReasonResult:
    """Complete every fact bottom-up and read off the answer.

    oracle_intra replaces each chosen entity with the scorer's best
    locally valid candidate (one whose substitution yields a stored
    fact); without a scorer the lexicographically first valid one.
    oracle_inter writes the tree's unique satisfying assignment into
    each upward transfer when one exists.
    """
    if lam < 1.0:
        raise ReasonError(f"amplification factor must be at least 1, got {lam}")
    facts = tree.facts_postorder()
    parent_of: Dict[int, Optional[KgFact]] = {id(tree.root): None}
    for f in tree.facts_preorder():
        for c in f.children:
            parent_of[id(c)] = f

    gold_assign: Optional[Dict[int, int]] = None
    if oracle_inter:
        sols = enumerate_assignments(kg, tree, limit=2)
        if len(sols) == 1:
            gold_assign = sols[0]

    ans_ph = answer_placeholder(tree)
    assignment: Dict[int, int] = {}
    traces: List[FactTrace] = []
    for ix, f in enumerate(facts):
        unresolved = [
            (role, v) for role, v in (("s", f.s), ("o", f.o))
            if isinstance(v, Placeholder) and v.pid not in assignment
        ]
        unresolved += [
            (f"v{j}", v) for j, (_, v) in enumerate(f.attrs)
            if isinstance(v, Placeholder) and v.pid not in assignment
        ]
        if len(unresolved) > 1:
            raise ReasonError(
                f"fact {ix} has {len(unresolved)} unresolved placeholders; expected at most one"
            )
        if not unresolved:
            traces.append(FactTrace(ix, None, None, None, None, None, False, None, False))
            continue
        role, ph = unresolved[0]

        s = _slot_value(f.s, assignment)
        o = _slot_value(f.o, assignment)
        attrs = [(a, _slot_value(v, assignment)) for a, v in f.attrs]
        s = HOLE if s is None else s
        o = HOLE if o is None else o
        attrs = [(a, HOLE if v is None else v) for a, v in attrs]

        upper_rel: Optional[int] = None
        parent = parent_of[id(f)]
        if parent is not None and any(b is ph for b in parent.bindings):
            if parent.s is ph or parent.o is ph:
                upper_rel = parent.p
            else:
                upper_rel = next(a for a, v in parent.attrs if v is ph)

        valid = match_fact(kg, FactPattern(s, f.p, o, tuple(attrs)))
        ranked: List[Ranked] = []
        if scorer is not None:
            ranked = infer_missing(
                scorer, kg, s, f.p, o, attrs, lam=lam, upper_rel=upper_rel, top_n=top_n
            )
            chosen = ranked[0]
        elif not oracle_intra:
            raise ReasonError(
                "no fact scorer configured and intra-fact completion is not oracled"
            )
        else:
            chosen = None

        if oracle_intra:
            if ranked:
                hit = next((r for r in ranked if r.entity in valid), None)
                chosen = hit if hit is not None else ranked[0]
            else:
                pool = valid if valid else set(range(len(kg.entities)))
                ent = min(pool, key=kg.entity_name)
                chosen = Ranked(ent, 0.0, 0.0, False)

        value = chosen.entity
        overridden = False
        if oracle_inter and gold_assign is not None and ph.pid in gold_assign and ph.kind != "answer":
            if gold_assign[ph.pid] != value:
                overridden = True
            value = gold_assign[ph.pid]
        assignment[ph.pid] = value

        traces.append(FactTrace(
            ix, role,
            kg.relation_name(upper_rel) if upper_rel is not None else None,
            kg.entity_name(value), chosen.raw, chosen.final, chosen.amplified,
            chosen.entity in valid, overridden,
            [(kg.entity_name(r.entity), r.final, r.raw, r.amplified) for r in ranked[:trace_top]],
        ))

    if ans_ph.pid not in assignment:
        raise ReasonError("the answer placeholder was never resolved")
    answer = assignment[ans_ph.pid]
    return ReasonResult(answer, kg.entity_name(answer), assignment, traces)
