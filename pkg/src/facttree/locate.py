"""Ground a natural-language fact tree in the knowledge graph.

Each fact's items are tagged with the roles subject / predicate /
object / attribute / value by a sequence labeler. Adjacent items with
the same role merge into spans. Entity spans resolve through entity
links, the entity symbol table, or the placeholder shared with the
parent fact; relation spans resolve by cosine similarity against an
embedding table.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import numkit
from .construct import NLFact, NLFactTree, Placeholder, TokenItem
from .kg import KnowledgeGraph

TAGS = ("s", "p", "o", "a", "v")
TAG_IX = {t: i for i, t in enumerate(TAGS)}
N_TAGS = len(TAGS)

PLH_LABEL = "PLH"
UNK_LABEL = "<unk>"


class LocateError(ValueError):
    """The fact tree could not be grounded in the knowledge graph."""


# -- sequence labeler ----------------------------------------------------


class CrfLabeler:
    """Bidirectional recurrent encoder with a linear-chain CRF head.

    Emission and transition scores start at zero, so a fresh model
    scores every tag sequence equally (log-likelihood -L ln 5).
    """

    def __init__(self, labels: Sequence[str], dim: int = 100, hidden: int = 50, seed: int = 0):
        vocab = list(dict.fromkeys(labels))
        for special in (PLH_LABEL, UNK_LABEL):
            if special not in vocab:
                vocab.append(special)
        self.vocab: Dict[str, int] = {lab: i for i, lab in enumerate(vocab)}
        self.dim = dim
        self.hidden = hidden
        gen = numkit.rng(seed)
        sc = 0.1
        self.emb = gen.normal(0.0, sc, size=(len(vocab), dim))
        self.wx_f = gen.normal(0.0, sc, size=(dim, hidden))
        self.wh_f = gen.normal(0.0, sc, size=(hidden, hidden))
        self.b_f = np.zeros(hidden)
        self.wx_b = gen.normal(0.0, sc, size=(dim, hidden))
        self.wh_b = gen.normal(0.0, sc, size=(hidden, hidden))
        self.b_b = np.zeros(hidden)
        self.we = np.zeros((2 * hidden, N_TAGS))
        self.be = np.zeros(N_TAGS)
        self.trans = np.zeros((N_TAGS, N_TAGS))

    def params(self) -> List[np.ndarray]:
        return [self.emb, self.wx_f, self.wh_f, self.b_f, self.wx_b, self.wh_b, self.b_b,
                self.we, self.be, self.trans]

    def set_params(self, ps: List[np.ndarray]) -> None:
        (self.emb, self.wx_f, self.wh_f, self.b_f, self.wx_b, self.wh_b, self.b_b,
         self.we, self.be, self.trans) = ps

    def label_ids(self, labels: Sequence[str]) -> np.ndarray:
        unk = self.vocab[UNK_LABEL]
        return np.array([self.vocab.get(l, unk) for l in labels], dtype=np.int64)

    def _encode(self, ids: np.ndarray):
        """ids (B, L) -> cache with emissions (B, L, n_tags)."""
        B, L = ids.shape
        X = self.emb[ids]
        Hf = np.zeros((B, L, self.hidden))
        h = np.zeros((B, self.hidden))
        for t in range(L):
            h = np.tanh(X[:, t] @ self.wx_f + h @ self.wh_f + self.b_f)
            Hf[:, t] = h
        Hb = np.zeros((B, L, self.hidden))
        h = np.zeros((B, self.hidden))
        for t in range(L - 1, -1, -1):
            h = np.tanh(X[:, t] @ self.wx_b + h @ self.wh_b + self.b_b)
            Hb[:, t] = h
        concat = np.concatenate([Hf, Hb], axis=2)
        emis = concat @ self.we + self.be
        return {"ids": ids, "X": X, "Hf": Hf, "Hb": Hb, "concat": concat, "emis": emis}

    def emissions(self, labels: Sequence[str]) -> np.ndarray:
        return self._encode(self.label_ids(labels)[None, :])["emis"][0]

    @staticmethod
    def _forward_alphas(emis: np.ndarray, trans: np.ndarray) -> np.ndarray:
        """alphas (B, L, n_tags) of the forward algorithm, in log space."""
        B, L, K = emis.shape
        alphas = np.zeros((B, L, K))
        alphas[:, 0] = emis[:, 0]
        for t in range(1, L):
            alphas[:, t] = numkit.logsumexp(alphas[:, t - 1][:, :, None] + trans[None], axis=1) + emis[:, t]
        return alphas

    def log_partition(self, labels: Sequence[str]) -> float:
        emis = self.emissions(labels)[None]
        alphas = self._forward_alphas(emis, self.trans)
        return float(numkit.logsumexp(alphas[0, -1]))

    def sequence_log_likelihood(self, labels: Sequence[str], tags: Sequence[str]) -> float:
        if len(labels) != len(tags):
            raise LocateError("labels and tags differ in length")
        emis = self.emissions(labels)
        ys = np.array([TAG_IX[t] for t in tags], dtype=np.int64)
        score = float(emis[np.arange(len(ys)), ys].sum() + self.trans[ys[:-1], ys[1:]].sum())
        alphas = self._forward_alphas(emis[None], self.trans)
        return score - float(numkit.logsumexp(alphas[0, -1]))

    def viterbi(self, labels: Sequence[str]) -> Tuple[List[str], float]:
        """Best tag sequence and its unnormalized score. Ties resolve
        to the lowest tag index at each step, deterministically."""
        if not labels:
            raise LocateError("cannot tag an empty sequence")
        emis = self.emissions(labels)
        path = _viterbi_on(emis, self.trans)
        ys = np.arange(len(path))
        best = float(emis[ys, path].sum() + self.trans[path[:-1], path[1:]].sum())
        return [TAGS[i] for i in path], best

    def predict(self, labels: Sequence[str]) -> List[str]:
        return self.viterbi(labels)[0]

    # training

    def _batch_loss_grads(self, ids: np.ndarray, tags: np.ndarray):
        """Mean negative log-likelihood over a same-length batch and
        gradients in params() order."""
        cache = self._encode(ids)
        emis = cache["emis"]
        B, L, K = emis.shape
        alphas = self._forward_alphas(emis, self.trans)
        logZ = numkit.logsumexp(alphas[:, -1], axis=1)
        betas = np.zeros((B, L, K))
        for t in range(L - 2, -1, -1):
            M = self.trans[None] + (emis[:, t + 1] + betas[:, t + 1])[:, None, :]
            betas[:, t] = numkit.logsumexp(M, axis=2)
        rows = np.arange(L)
        gold_emit = emis[np.arange(B)[:, None], rows[None, :], tags].sum(axis=1)
        gold_trans = self.trans[tags[:, :-1], tags[:, 1:]].sum(axis=1) if L > 1 else np.zeros(B)
        loss = float(np.mean(logZ - gold_emit - gold_trans))

        marg = np.exp(alphas + betas - logZ[:, None, None])
        demis = marg.copy()
        np.subtract.at(demis, (np.arange(B)[:, None], rows[None, :], tags), 1.0)
        demis /= B
        dtrans = np.zeros_like(self.trans)
        for t in range(1, L):
            pair = np.exp(
                alphas[:, t - 1][:, :, None] + self.trans[None]
                + (emis[:, t] + betas[:, t])[:, None, :] - logZ[:, None, None]
            )
            dtrans += pair.sum(axis=0)
        if L > 1:
            np.subtract.at(dtrans, (tags[:, :-1].ravel(), tags[:, 1:].ravel()), 1.0)
        dtrans /= B

        # back through the emission head and both recurrences
        dconcat = demis @ self.we.T
        dwe = np.einsum("blh,blk->hk", cache["concat"], demis)
        dbe = demis.sum(axis=(0, 1))
        dHf = dconcat[:, :, : self.hidden]
        dHb = dconcat[:, :, self.hidden:]
        X, Hf, Hb = cache["X"], cache["Hf"], cache["Hb"]
        dX = np.zeros_like(X)
        dwx_f = np.zeros_like(self.wx_f)
        dwh_f = np.zeros_like(self.wh_f)
        db_f = np.zeros_like(self.b_f)
        carry = np.zeros((B, self.hidden))
        for t in range(L - 1, -1, -1):
            dpre = (dHf[:, t] + carry) * (1.0 - Hf[:, t] ** 2)
            dwx_f += X[:, t].T @ dpre
            prev = Hf[:, t - 1] if t > 0 else np.zeros((B, self.hidden))
            dwh_f += prev.T @ dpre
            db_f += dpre.sum(axis=0)
            dX[:, t] += dpre @ self.wx_f.T
            carry = dpre @ self.wh_f.T
        dwx_b = np.zeros_like(self.wx_b)
        dwh_b = np.zeros_like(self.wh_b)
        db_b = np.zeros_like(self.b_b)
        carry = np.zeros((B, self.hidden))
        for t in range(L):
            dpre = (dHb[:, t] + carry) * (1.0 - Hb[:, t] ** 2)
            dwx_b += X[:, t].T @ dpre
            nxt = Hb[:, t + 1] if t < L - 1 else np.zeros((B, self.hidden))
            dwh_b += nxt.T @ dpre
            db_b += dpre.sum(axis=0)
            dX[:, t] += dpre @ self.wx_b.T
            carry = dpre @ self.wh_b.T
        demb = np.zeros_like(self.emb)
        np.add.at(demb, ids, dX)
        return loss, [demb, dwx_f, dwh_f, db_f, dwx_b, dwh_b, db_b, dwe, dbe, dtrans]


@dataclass
class LabelerTrainConfig:
    dim: int = 100
    hidden: int = 50
    lr: float = 2e-5
    epochs: int = 200
    seed: int = 0
    log_every: int = 0


LabelExample = Tuple[Tuple[str, ...], Tuple[str, ...]]


def _group_by_length(clf: CrfLabeler, examples: Sequence[LabelExample]):
    groups: Dict[int, List[LabelExample]] = {}
    for labels, tags in examples:
        if len(labels) != len(tags):
            raise LocateError("labels and tags differ in length")
        groups.setdefault(len(labels), []).append((labels, tags))
    out = []
    for length in sorted(groups):
        rows = groups[length]
        ids = np.stack([clf.label_ids(r[0]) for r in rows])
        ys = np.array([[TAG_IX[t] for t in r[1]] for r in rows], dtype=np.int64)
        out.append((ids, ys))
    return out


def labeler_accuracy(clf: CrfLabeler, groups) -> float:
    total = correct = 0
    for ids, ys in groups:
        emis = clf._encode(ids)["emis"]
        for b in range(ids.shape[0]):
            pred = _viterbi_on(emis[b], clf.trans)
            correct += int(np.sum(pred == ys[b]))
            total += len(pred)
    return correct / total if total else 0.0


def _viterbi_on(emis: np.ndarray, trans: np.ndarray) -> np.ndarray:
    L = emis.shape[0]
    delta = emis[0].copy()
    psi = np.zeros((L, N_TAGS), dtype=np.int64)
    for t in range(1, L):
        cand = delta[:, None] + trans
        psi[t] = np.argmax(cand, axis=0)
        delta = cand[psi[t], np.arange(N_TAGS)] + emis[t]
    path = [int(np.argmax(delta))]
    for t in range(L - 1, 0, -1):
        path.append(int(psi[t, path[-1]]))
    return np.array(path[::-1], dtype=np.int64)


def train_labeler(
    train_examples: Sequence[LabelExample],
    val_examples: Sequence[LabelExample],
    cfg: LabelerTrainConfig,
) -> Tuple[CrfLabeler, Dict]:
    """Full-batch Adam on the CRF negative log-likelihood, batched by
    sequence length; keeps the best validation epoch by tag accuracy."""
    if not train_examples:
        raise LocateError("no training examples")
    vocab = sorted({lab for ex in train_examples for lab in ex[0]})
    clf = CrfLabeler(vocab, dim=cfg.dim, hidden=cfg.hidden, seed=cfg.seed)
    train_groups = _group_by_length(clf, train_examples)
    val_groups = _group_by_length(clf, val_examples)
    state = numkit.AdamState(clf.params())
    n_total = sum(len(g[1]) for g in train_groups)
    best_acc, best_params, best_epoch = -1.0, [p.copy() for p in clf.params()], 0
    history = {"loss": [], "val_acc": []}
    for epoch in range(1, cfg.epochs + 1):
        total_loss = 0.0
        grads = [np.zeros_like(p) for p in clf.params()]
        for ids, ys in train_groups:
            loss, gs = clf._batch_loss_grads(ids, ys)
            w = len(ys) / n_total
            total_loss += loss * w
            for acc, g in zip(grads, gs):
                acc += g * w
        clf.set_params(numkit.adam_step(state, clf.params(), grads, cfg.lr))
        acc = labeler_accuracy(clf, val_groups if val_groups else train_groups)
        history["loss"].append(total_loss)
        history["val_acc"].append(acc)
        if acc > best_acc:
            best_acc, best_epoch = acc, epoch
            best_params = [p.copy() for p in clf.params()]
        if cfg.log_every and epoch % cfg.log_every == 0:
            print(f"[labeler] epoch {epoch} loss {total_loss:.4f} val_acc {acc:.4f}")
    clf.set_params(best_params)
    history["best_val_acc"] = best_acc
    history["best_epoch"] = best_epoch
    return clf, history


PARAM_NAMES = ("emb", "wx_f", "wh_f", "b_f", "wx_b", "wh_b", "b_b", "we", "be", "trans")


def save_labeler(clf: CrfLabeler, path: str, extra_meta: Optional[Dict] = None) -> None:
    params = dict(zip(PARAM_NAMES, clf.params()))
    vocab = [None] * len(clf.vocab)
    for lab, i in clf.vocab.items():
        vocab[i] = lab
    meta = {"vocab": vocab}
    meta.update(extra_meta or {})
    numkit.save_checkpoint(path, "sequence-labeler", {"dim": clf.dim, "hidden": clf.hidden}, params, meta)


def load_labeler(path: str) -> CrfLabeler:
    config, params, meta = numkit.load_checkpoint(path, "sequence-labeler")
    clf = CrfLabeler(meta["vocab"], dim=config["dim"], hidden=config["hidden"], seed=0)
    clf.set_params([params[n] for n in PARAM_NAMES])
    return clf


# -- embedding tables and relation matching ------------------------------


def save_embedding_table(path: str, table: Dict[str, np.ndarray]) -> None:
    """Text format: a `dim N` header, then one `name<TAB>floats` row per
    entry, floats space-separated with 9 significant digits."""
    if not table:
        raise LocateError("refusing to write an empty embedding table")
    dim = None
    with open(path, "w", encoding="utf-8") as fh:
        for name, vec in table.items():
            v = numkit.as_f64(vec)
            if dim is None:
                dim = v.shape[0]
                fh.write(f"dim {dim}\n")
            if v.ndim != 1 or v.shape[0] != dim:
                raise LocateError(f"entry {name!r} has wrong dimension")
            numkit.ensure_finite(f"embedding {name!r}", v)
            if "\t" in name or "\n" in name or not name:
                raise LocateError(f"bad embedding name {name!r}")
            fh.write(name + "\t" + " ".join(f"{x:.9g}" for x in v) + "\n")


def load_embedding_table(path: str) -> Dict[str, np.ndarray]:
    table: Dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2 or parts[0] != "dim":
            raise LocateError(f"{path}: expected 'dim N' header, got {header.strip()!r}")
        try:
            dim = int(parts[1])
        except ValueError:
            raise LocateError(f"{path}: bad dimension {parts[1]!r}") from None
        if dim <= 0:
            raise LocateError(f"{path}: bad dimension {dim}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if "\t" not in line:
                raise LocateError(f"{path} line {lineno}: missing tab separator")
            name, _, rest = line.rstrip("\n").partition("\t")
            if not name:
                raise LocateError(f"{path} line {lineno}: empty name")
            if name in table:
                raise LocateError(f"{path} line {lineno}: duplicate entry {name!r}")
            vals = rest.split()
            if len(vals) != dim:
                raise LocateError(f"{path} line {lineno}: expected {dim} values, got {len(vals)}")
            try:
                vec = np.array([float(x) for x in vals], dtype=np.float64)
            except ValueError:
                raise LocateError(f"{path} line {lineno}: non-numeric value") from None
            numkit.ensure_finite(f"{path} line {lineno}", vec)
            table[name] = vec
    if not table:
        raise LocateError(f"{path}: table has no entries")
    return table


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit vector per token, independent of insertion order."""
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    gen = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = gen.normal(size=dim)
    return v / np.linalg.norm(v)


def build_default_table(
    kg: KnowledgeGraph,
    synonyms: Optional[Dict[str, str]] = None,
    dim: int = 50,
    seed: int = 0,
) -> Dict[str, np.ndarray]:
    """Embedding table covering every relation name, the tokens of
    those names, and any synonym surface phrases (which share their
    target relation's vector exactly)."""
    synonyms = synonyms or {}
    table: Dict[str, np.ndarray] = {}

    def tok(t: str) -> np.ndarray:
        if t not in table:
            table[t] = _token_vector(t, dim, seed)
        return table[t]

    rel_vecs: Dict[str, np.ndarray] = {}
    for name in kg.relations.names():
        parts = name.replace("_", " ").split()
        vecs = [tok(p) for p in parts]
        v = np.mean(vecs, axis=0)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise LocateError(f"degenerate vector for relation {name!r}")
        rel_vecs[name] = v / norm
    for phrase, target in synonyms.items():
        if target not in rel_vecs:
            raise LocateError(f"synonym {phrase!r} targets unknown relation {target!r}")
        for t in phrase.split():
            tok(t)
    table.update(rel_vecs)
    for phrase, target in synonyms.items():
        if phrase not in rel_vecs:
            table[phrase] = rel_vecs[target].copy()
    return table


class RelationMatcher:
    """Cosine-similarity matcher from surface phrases to relation names."""

    def __init__(self, table: Dict[str, np.ndarray]):
        if not table:
            raise LocateError("empty embedding table")
        dim = None
        for name, vec in table.items():
            v = numkit.as_f64(vec)
            if dim is None:
                dim = v.shape[0]
            if v.ndim != 1 or v.shape[0] != dim:
                raise LocateError(f"entry {name!r} has wrong dimension")
            if np.linalg.norm(v) == 0:
                raise LocateError(f"entry {name!r} is the zero vector")
            table[name] = v
        self.table = table
        self.dim = dim

    @classmethod
    def from_file(cls, path: str) -> "RelationMatcher":
        return cls(load_embedding_table(path))

    def save(self, path: str) -> None:
        save_embedding_table(path, self.table)

    def phrase_vector(self, phrase: str) -> np.ndarray:
        if phrase in self.table:
            return self.table[phrase]
        vecs = [self.table[t] for t in phrase.split() if t in self.table]
        if not vecs:
            raise LocateError(f"no embedding for phrase {phrase!r}")
        v = np.mean(vecs, axis=0)
        if np.linalg.norm(v) == 0:
            raise LocateError(f"degenerate vector for phrase {phrase!r}")
        return v

    def match(self, phrase: str, candidates: Sequence[str]) -> Tuple[str, float]:
        """Best candidate by cosine similarity; ties break to the
        lexicographically smaller name."""
        if not candidates:
            raise LocateError(f"no candidate relations for phrase {phrase!r}")
        pv = self.phrase_vector(phrase)
        pn = np.linalg.norm(pv)
        best_name, best_cos = None, None
        for name in sorted(candidates):
            if name not in self.table:
                raise LocateError(f"candidate relation {name!r} missing from embedding table")
            cv = self.table[name]
            cos = float(pv @ cv / (pn * np.linalg.norm(cv)))
            if best_cos is None or cos > best_cos:
                best_name, best_cos = name, cos
        return best_name, best_cos


# -- knowledge-graph fact tree -------------------------------------------

Slot = Union[int, Placeholder]


class KgFact:
    """A fact with possibly unresolved entity slots.

    bindings[k] is the placeholder shared with child k; the same object
    may appear among the child's own slots.
    """

    def __init__(self, s: Slot, p: int, o: Slot, attrs: List[Tuple[int, Slot]]):
        self.s = s
        self.p = p
        self.o = o
        self.attrs = attrs
        self.children: List["KgFact"] = []
        self.bindings: List[Placeholder] = []

    def slot_values(self) -> List[Tuple[str, Slot]]:
        out = [("s", self.s), ("o", self.o)]
        out.extend(("v", v) for _, v in self.attrs)
        return out

    def placeholders(self) -> List[Placeholder]:
        return [v for _, v in self.slot_values() if isinstance(v, Placeholder)]


class KgFactTree:
    def __init__(self, root: KgFact):
        self.root = root

    def facts_preorder(self) -> List[KgFact]:
        out: List[KgFact] = []

        def rec(f: KgFact):
            out.append(f)
            for c in f.children:
                rec(c)

        rec(self.root)
        return out

    def facts_postorder(self) -> List[KgFact]:
        out: List[KgFact] = []

        def rec(f: KgFact):
            for c in f.children:
                rec(c)
            out.append(f)

        rec(self.root)
        return out

    def _ph_role(self, fact: KgFact, parent: Optional[KgFact], ph: Placeholder):
        if ph.kind == "answer":
            return ("ph", "answer")
        for k, b in enumerate(fact.bindings):
            if b is ph:
                return ("ph", "child", k)
        if parent is not None and any(b is ph for b in parent.bindings):
            return ("ph", "up")
        raise LocateError("placeholder is bound neither to a child nor to the parent")

    def signature(self, kg: KnowledgeGraph) -> Tuple:
        """Structural identity: names, roles of placeholders, attribute
        multisets, child order."""

        def slot_sig(fact, parent, v):
            if isinstance(v, Placeholder):
                return self._ph_role(fact, parent, v)
            return kg.entity_name(v)

        def rec(fact: KgFact, parent: Optional[KgFact]) -> Tuple:
            attrs = sorted(
                (kg.relation_name(a), slot_sig(fact, parent, v)) for a, v in fact.attrs
            )
            return (
                slot_sig(fact, parent, fact.s),
                kg.relation_name(fact.p),
                slot_sig(fact, parent, fact.o),
                tuple(attrs),
                tuple(rec(c, fact) for c in fact.children),
            )

        return rec(self.root, None)

    def to_json(self, kg: KnowledgeGraph) -> Dict:
        def slot_json(fact, parent, v):
            if isinstance(v, Placeholder):
                role = self._ph_role(fact, parent, v)
                if role[1] == "child":
                    return {"ph": ["child", role[2]]}
                return {"ph": role[1]}
            return kg.entity_name(v)

        def rec(fact: KgFact, parent: Optional[KgFact]) -> Dict:
            return {
                "s": slot_json(fact, parent, fact.s),
                "p": kg.relation_name(fact.p),
                "o": slot_json(fact, parent, fact.o),
                "attrs": [[kg.relation_name(a), slot_json(fact, parent, v)] for a, v in fact.attrs],
                "children": [rec(c, fact) for c in fact.children],
            }

        return rec(self.root, None)

    @classmethod
    def from_json(cls, blob: Dict, kg: KnowledgeGraph) -> "KgFactTree":
        counter = [0]

        def fresh(kind: str) -> Placeholder:
            counter[0] += 1
            return Placeholder(counter[0], kind)

        def entity_id(name) -> int:
            if name not in kg.entities:
                raise LocateError(f"unknown entity name {name!r}")
            return kg.entities.id_of(name)

        def relation_id(name) -> int:
            if name not in kg.relations:
                raise LocateError(f"unknown relation name {name!r}")
            return kg.relations.id_of(name)

        def parse_slot(v, up_ph, child_phs: Dict[int, Placeholder]):
            if isinstance(v, str):
                return entity_id(v)
            if isinstance(v, dict) and "ph" in v:
                ref = v["ph"]
                if ref == "answer":
                    return fresh("answer")
                if ref == "up":
                    if up_ph is None:
                        raise LocateError("'up' placeholder in the root fact")
                    return up_ph
                if isinstance(ref, list) and len(ref) == 2 and ref[0] == "child":
                    k = ref[1]
                    if k not in child_phs:
                        child_phs[k] = fresh("bridge")
                    return child_phs[k]
                raise LocateError(f"bad placeholder reference {ref!r}")
            raise LocateError(f"bad slot value {v!r}")

        def rec(node: Dict, up_ph: Optional[Placeholder]) -> KgFact:
            if not isinstance(node, dict):
                raise LocateError("fact node must be an object")
            child_phs: Dict[int, Placeholder] = {}
            s = parse_slot(node["s"], up_ph, child_phs)
            p = relation_id(node["p"])
            o = parse_slot(node["o"], up_ph, child_phs)
            attrs = []
            for pair in node.get("attrs", []):
                if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                    raise LocateError(f"bad attribute pair {pair!r}")
                attrs.append((relation_id(pair[0]), parse_slot(pair[1], up_ph, child_phs)))
            fact = KgFact(s, p, o, attrs)
            kids = node.get("children", [])
            if set(child_phs) - set(range(len(kids))):
                raise LocateError("placeholder binds a missing child")
            for k, child_node in enumerate(kids):
                if k not in child_phs:
                    raise LocateError(f"child {k} has no binding placeholder in its parent")
                fact.bindings.append(child_phs[k])
                fact.children.append(rec(child_node, child_phs[k]))
            return fact

        return cls(rec(blob, None))


def role_candidates(kg: KnowledgeGraph) -> Tuple[List[str], List[str]]:
    """Relation names usable as predicates and as attribute names."""
    preds = {kg.relation_name(f.p) for f in kg.facts}
    attrs = {kg.relation_name(a) for f in kg.facts for a, _ in f.attrs}
    return sorted(preds), sorted(attrs)


def fact_label_sequence(fact: NLFact) -> List[str]:
    out = []
    for it in fact.items:
        if isinstance(it, Placeholder):
            out.append(PLH_LABEL)
        else:
            out.append(it.label if it.label is not None else UNK_LABEL)
    return out


def merge_spans(tags: Sequence[str]) -> List[Tuple[str, List[int]]]:
    """Adjacent identical tags merge into one span of item indices."""
    spans: List[Tuple[str, List[int]]] = []
    for i, t in enumerate(tags):
        if t not in TAG_IX:
            raise LocateError(f"unknown tag {t!r}")
        if spans and spans[-1][0] == t:
            spans[-1][1].append(i)
        else:
            spans.append((t, [i]))
    return spans


def locate_tree(
    nl_tree: NLFactTree,
    kg: KnowledgeGraph,
    labeler: Optional[CrfLabeler],
    matcher: RelationMatcher,
    links: Optional[Dict[str, str]] = None,
    tags_override: Optional[List[Sequence[str]]] = None,
) -> KgFactTree:
    """Ground every fact of the tree.

    An entity span resolves, in order, to: a placeholder item it
    contains; a linked entity; an entity named literally; or, once per
    non-root fact, the placeholder shared with the parent. A fully
    grounded child bound at one of its parent's attribute values
    inherits that attribute pair instead.
    """
    links = links or {}
    preds, attr_names = role_candidates(kg)
    override_iter = iter(tags_override) if tags_override is not None else None

    def resolve_fact(fact: NLFact, up_ph: Optional[Placeholder]) -> KgFact:
        labels = fact_label_sequence(fact)
        if override_iter is not None:
            tags = list(next(override_iter))
            if len(tags) != len(labels):
                raise LocateError("tag override length mismatch")
        else:
            if labeler is None:
                raise LocateError("no sequence labeler configured")
            tags = labeler.predict(labels)
        by_tag: Dict[str, List[List[int]]] = {t: [] for t in TAGS}
        for t, ixs in merge_spans(tags):
            by_tag[t].append(ixs)
        for role in ("s", "p", "o"):
            if len(by_tag[role]) != 1:
                raise LocateError(
                    f"fact {fact.text()!r} needs exactly one {role} span, got {len(by_tag[role])}"
                )
        if len(by_tag["a"]) != len(by_tag["v"]):
            raise LocateError(
                f"fact {fact.text()!r} has {len(by_tag['a'])} attribute names "
                f"but {len(by_tag['v'])} values"
            )

        bridge_used = [False]

        def span_text(ixs: List[int]) -> str:
            return " ".join(
                fact.items[i].text for i in ixs if isinstance(fact.items[i], TokenItem)
            )

        def resolve_entity(ixs: List[int]) -> Slot:
            phs = [fact.items[i] for i in ixs if isinstance(fact.items[i], Placeholder)]
            if len(phs) > 1:
                raise LocateError(f"fact {fact.text()!r}: two placeholders in one span")
            if phs:
                return phs[0]
            text = span_text(ixs)
            if text in links:
                target = links[text]
                if target not in kg.entities:
                    raise LocateError(f"link target {target!r} is not a known entity")
                return kg.entities.id_of(target)
            if text in kg.entities:
                return kg.entities.id_of(text)
            if up_ph is not None and not bridge_used[0]:
                bridge_used[0] = True
                return up_ph
            raise LocateError(f"unlinkable span {text!r}")

        def resolve_relation(ixs: List[int], candidates: List[str]) -> int:
            if any(isinstance(fact.items[i], Placeholder) for i in ixs):
                raise LocateError("a placeholder cannot name a relation")
            name, _ = matcher.match(span_text(ixs), candidates)
            return kg.relations.id_of(name)

        s = resolve_entity(by_tag["s"][0])
        p = resolve_relation(by_tag["p"][0], preds)
        o = resolve_entity(by_tag["o"][0])
        attrs = [
            (resolve_relation(a_ixs, attr_names), resolve_entity(v_ixs))
            for a_ixs, v_ixs in zip(by_tag["a"], by_tag["v"])
        ]
        kf = KgFact(s, p, o, attrs)

        for k, child in enumerate(fact.children):
            ph = next(
                it for it in fact.items
                if isinstance(it, Placeholder) and it.kind == "bridge" and it.child == k
            )
            kf.bindings.append(ph)
            kf.children.append(resolve_fact(child, ph))

        # the copy rule: a grounded child bound at an attribute value
        # inherits that attribute, keeping the shared placeholder
        for k, child_kf in enumerate(kf.children):
            ph = kf.bindings[k]
            if any(v is ph for _, v in child_kf.slot_values()):
                continue
            child_attr = next((a for a, v in kf.attrs if v is ph), None)
            if child_attr is None:
                raise LocateError(
                    f"child fact {fact.children[k].text()!r} never references "
                    "the placeholder it shares with its parent"
                )
            child_kf.attrs.append((child_attr, ph))
        return kf

    root = resolve_fact(nl_tree.root, None)
    if override_iter is not None and next(override_iter, None) is not None:
        raise LocateError("more tag overrides than facts")
    return KgFactTree(root)
