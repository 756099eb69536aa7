"""Question syntax tree to natural-language fact tree.

A trained node classifier walks the internal nodes bottom-up and
right-to-left (breadth-first order, reversed) and decides, per node,
whether to splice it out. Retained grouping nodes then delimit facts:
a fact is an ordered sequence of items, each a token span or a
placeholder, and nested retained structure becomes child facts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from . import numkit
from .syntax import SynNode, preprocess

CONTEXT_RANGES = ("O", "O+F", "O+C", "O+F+C", "O+F+C+S")
DEFAULT_RANGE = "O+F+C"

WH_WORDS = {"who", "what", "when", "where", "which", "whom"}

UNK = "<unk>"


class ConstructError(ValueError):
    """Fact tree construction failed for this question."""


# -- fact tree types -----------------------------------------------------


@dataclass
class TokenItem:
    text: str
    label: Optional[str] = None


class Placeholder:
    """A slot for an entity to be inferred.

    kind "answer" marks the question's answer slot; kind "bridge" binds
    a child fact, and the same object stands for the entity shared by
    parent and child.
    """

    __slots__ = ("pid", "kind", "child")

    def __init__(self, pid: int, kind: str, child: Optional[int] = None):
        if kind not in ("answer", "bridge"):
            raise ConstructError(f"bad placeholder kind {kind!r}")
        self.pid = pid
        self.kind = kind
        self.child = child

    def __repr__(self):
        return f"PH({self.pid},{self.kind}" + (f"->{self.child})" if self.child is not None else ")")


Item = Union[TokenItem, Placeholder]


class NLFact:
    def __init__(self, items: Optional[List[Item]] = None, children: Optional[List["NLFact"]] = None):
        self.items: List[Item] = items or []
        self.children: List["NLFact"] = children or []

    def text(self) -> str:
        parts = []
        for it in self.items:
            parts.append("[]" if isinstance(it, Placeholder) else it.text)
        return " ".join(parts)


class NLFactTree:
    def __init__(self, root: NLFact):
        self.root = root

    def facts_preorder(self) -> List[NLFact]:
        out: List[NLFact] = []

        def rec(f: NLFact):
            out.append(f)
            for c in f.children:
                rec(c)

        rec(self.root)
        return out

    @property
    def n_facts(self) -> int:
        return len(self.facts_preorder())

    def placeholders(self) -> List[Placeholder]:
        out = []
        for f in self.facts_preorder():
            out.extend(it for it in f.items if isinstance(it, Placeholder))
        return out

    def answer_count(self) -> int:
        return sum(1 for p in self.placeholders() if p.kind == "answer")

    def signature(self) -> Tuple:
        """Structure plus token text, ignoring syntax labels."""

        def rec(f: NLFact) -> Tuple:
            items = []
            for it in f.items:
                if isinstance(it, Placeholder):
                    items.append(("ph", "answer" if it.kind == "answer" else it.child))
                else:
                    items.append(("tok", it.text))
            return (tuple(items), tuple(rec(c) for c in f.children))

        return rec(self.root)

    def to_json(self) -> Dict:
        def rec(f: NLFact) -> Dict:
            items = []
            for it in f.items:
                if isinstance(it, Placeholder):
                    items.append({"ph": "answer" if it.kind == "answer" else it.child})
                else:
                    items.append(it.text)
            return {"items": items, "children": [rec(c) for c in f.children]}

        return rec(self.root)

    @classmethod
    def from_json(cls, blob: Dict) -> "NLFactTree":
        counter = [0]

        def rec(node: Dict) -> NLFact:
            if not isinstance(node, dict) or "items" not in node:
                raise ConstructError("fact node must be an object with items")
            children = [rec(c) for c in node.get("children", [])]
            items: List[Item] = []
            for it in node["items"]:
                if isinstance(it, str):
                    items.append(TokenItem(it))
                elif isinstance(it, dict) and "ph" in it:
                    ref = it["ph"]
                    counter[0] += 1
                    if ref == "answer":
                        items.append(Placeholder(counter[0], "answer"))
                    elif isinstance(ref, int) and 0 <= ref < len(children):
                        items.append(Placeholder(counter[0], "bridge", child=ref))
                    else:
                        raise ConstructError(f"placeholder binds missing child {ref!r}")
                else:
                    raise ConstructError(f"bad fact item {it!r}")
            return NLFact(items, children)

        tree = cls(rec(blob))
        tree.validate()
        return tree

    def validate(self) -> None:
        for f in self.facts_preorder():
            bound = [it.child for it in f.items if isinstance(it, Placeholder) and it.kind == "bridge"]
            if sorted(bound) != list(range(len(f.children))):
                raise ConstructError("every child fact needs exactly one binding placeholder")
        if self.answer_count() != 1:
            raise ConstructError(f"tree needs exactly one answer placeholder, found {self.answer_count()}")


# -- context extraction --------------------------------------------------


def extract_context(v: SynNode, range_: str = DEFAULT_RANGE) -> Tuple[List[SynNode], np.ndarray]:
    """Context nodes for one elimination decision, central node first,
    with the original tree edges restricted to the selected nodes."""
    if range_ not in CONTEXT_RANGES:
        raise ConstructError(f"unknown context range {range_!r}")
    if v.is_leaf() or v.parent is None or v.has_leaf_child():
        raise ConstructError("context is defined for internal, non-root nodes without leaf children")
    want_f = "F" in range_.split("+")
    want_c = "C" in range_.split("+")
    want_s = "S" in range_.split("+")
    nodes: List[SynNode] = [v]
    edges: List[Tuple[int, int]] = []
    father_ix = None
    if want_f:
        father_ix = len(nodes)
        nodes.append(v.parent)
        edges.append((0, father_ix))
    if want_c:
        for c in v.children:
            edges.append((0, len(nodes)))
            nodes.append(c)
    if want_s:
        for sib in v.parent.children:
            if sib is v:
                continue
            edges.append((father_ix, len(nodes)))
            nodes.append(sib)
    n = len(nodes)
    adj = np.zeros((n, n), dtype=np.float64)
    for a, b in edges:
        adj[a, b] = 1.0
        adj[b, a] = 1.0
    return nodes, adj


def context_labels(nodes: Sequence[SynNode]) -> List[str]:
    return [nd.syntax_label for nd in nodes]


# -- classifier ----------------------------------------------------------


class GcnClassifier:
    """Three graph-convolution layers over the context, then a linear
    readout of the central node through a sigmoid.

    Per layer: H' = relu(H W0 + A H W1). With the readout weights at
    zero (the initial state) every probability is exactly 0.5, so an
    untrained model retains everything.
    """

    def __init__(self, labels: Sequence[str], dim: int = 50, n_layers: int = 3, seed: int = 0):
        vocab = list(dict.fromkeys(labels))
        if UNK not in vocab:
            vocab.append(UNK)
        self.vocab: Dict[str, int] = {lab: i for i, lab in enumerate(vocab)}
        self.dim = dim
        self.n_layers = n_layers
        gen = numkit.rng(seed)
        sc = 0.1
        self.emb = gen.normal(0.0, sc, size=(len(vocab), dim))
        self.w0 = [gen.normal(0.0, sc, size=(dim, dim)) for _ in range(n_layers)]
        self.w1 = [gen.normal(0.0, sc, size=(dim, dim)) for _ in range(n_layers)]
        self.fc_w = np.zeros(dim)
        self.fc_b = 0.0

    # parameter plumbing

    def params(self) -> List[np.ndarray]:
        return [self.emb, *self.w0, *self.w1, np.asarray(self.fc_w), np.asarray([self.fc_b])]

    def set_params(self, ps: List[np.ndarray]) -> None:
        L = self.n_layers
        self.emb = ps[0]
        self.w0 = list(ps[1 : 1 + L])
        self.w1 = list(ps[1 + L : 1 + 2 * L])
        self.fc_w = ps[1 + 2 * L]
        self.fc_b = float(ps[2 + 2 * L][0])

    def label_ids(self, labels: Sequence[str]) -> np.ndarray:
        unk = self.vocab[UNK]
        return np.array([self.vocab.get(l, unk) for l in labels], dtype=np.int64)

    # forward / backward

    def _forward(self, ids: np.ndarray, adj: np.ndarray):
        """ids (B, n), adj (n, n) -> cache with probs (B,)."""
        H = self.emb[ids]
        hs, zs, ss = [H], [], []
        for l in range(self.n_layers):
            S = np.einsum("nm,bmd->bnd", adj, H)
            Z = H @ self.w0[l] + S @ self.w1[l]
            H = numkit.relu(Z)
            ss.append(S)
            zs.append(Z)
            hs.append(H)
        h = H[:, 0, :]
        logit = h @ self.fc_w + self.fc_b
        prob = numkit.sigmoid(logit)
        return {"ids": ids, "adj": adj, "hs": hs, "zs": zs, "ss": ss, "prob": prob}

    def probs(self, ids: np.ndarray, adj: np.ndarray) -> np.ndarray:
        return self._forward(ids, adj)["prob"]

    def prob_node(self, v: SynNode, range_: str = DEFAULT_RANGE) -> float:
        nodes, adj = extract_context(v, range_)
        ids = self.label_ids(context_labels(nodes))[None, :]
        return float(self.probs(ids, adj)[0])

    def _backward(self, cache, y: np.ndarray):
        """Mean BCE loss and gradients in params() order."""
        B = y.shape[0]
        prob = np.clip(cache["prob"], 1e-12, 1.0 - 1e-12)
        loss = -np.mean(y * np.log(prob) + (1 - y) * np.log(1 - prob))
        dlogit = (prob - y) / B
        h = cache["hs"][-1][:, 0, :]
        d_fcw = dlogit @ h
        d_fcb = np.sum(dlogit)
        dH = np.zeros_like(cache["hs"][-1])
        dH[:, 0, :] = dlogit[:, None] * self.fc_w
        d_w0 = [np.zeros_like(w) for w in self.w0]
        d_w1 = [np.zeros_like(w) for w in self.w1]
        adj = cache["adj"]
        for l in range(self.n_layers - 1, -1, -1):
            dZ = dH * (cache["zs"][l] > 0)
            d_w0[l] = np.einsum("bnd,bne->de", cache["hs"][l], dZ)
            d_w1[l] = np.einsum("bnd,bne->de", cache["ss"][l], dZ)
            dH = dZ @ self.w0[l].T + np.einsum("mn,bme->bne", adj, dZ @ self.w1[l].T)
        d_emb = np.zeros_like(self.emb)
        np.add.at(d_emb, cache["ids"], dH)
        return loss, [d_emb, *d_w0, *d_w1, d_fcw, np.asarray([d_fcb])]


def classify_eliminate(clf: GcnClassifier, v: SynNode, range_: str = DEFAULT_RANGE) -> bool:
    """Eliminate iff the probability is strictly above one half; an
    exact tie retains the node."""
    return clf.prob_node(v, range_) > 0.5


# -- elimination ---------------------------------------------------------


def visit_order(root: SynNode) -> List[SynNode]:
    """Internal nodes in reversed breadth-first order (bottom-up, right
    to left), skipping the root, leaves and any node with a leaf child."""
    bfs: List[SynNode] = [root]
    i = 0
    while i < len(bfs):
        bfs.extend(bfs[i].children)
        i += 1
    out = []
    for node in reversed(bfs):
        if node is root or node.is_leaf() or node.has_leaf_child():
            continue
        out.append(node)
    return out


def eliminate_node(v: SynNode) -> None:
    """Splice v out: its children take its position under its parent."""
    if v.is_leaf() or v.parent is None:
        raise ConstructError("only internal, non-root nodes can be eliminated")
    parent = v.parent
    ix = parent.children.index(v)
    for c in v.children:
        c.parent = parent
    parent.children[ix : ix + 1] = v.children
    v.children = []
    v.parent = None


# -- post-processing into facts ------------------------------------------


def _is_leaf_unit(node: SynNode) -> bool:
    return (not node.is_leaf()) and len(node.children) > 0 and all(c.is_leaf() for c in node.children)


def _build_fact(node: SynNode, pid_counter: List[int]) -> NLFact:
    fact = NLFact()
    for ch in node.children:
        if ch.is_leaf():
            fact.items.append(TokenItem(ch.token, node.label))
        elif _is_leaf_unit(ch):
            for g in ch.children:
                fact.items.append(TokenItem(g.token, ch.label))
        else:
            sub = _build_region(ch, pid_counter)
            pid_counter[0] += 1
            fact.items.append(Placeholder(pid_counter[0], "bridge", child=len(fact.children)))
            fact.children.append(sub)
    return fact


def _build_region(node: SynNode, pid_counter: List[int]) -> NLFact:
    """One contiguous child region maps to one fact (and one shared
    placeholder in its parent), however deep the grouping node sits."""
    if node.has_leaf_child() or any(_is_leaf_unit(c) for c in node.children):
        return _build_fact(node, pid_counter)
    subs = [c for c in node.children if not c.is_leaf()]
    if len(subs) == 1:
        return _build_region(subs[0], pid_counter)
    raise ConstructError("region does not reduce to a single fact")


def tree_to_facts(root: SynNode) -> NLFactTree:
    """Read the fact structure off an eliminated tree and install the
    answer placeholder at the first interrogative-pronoun item."""
    if not root.leaves():
        raise ConstructError("no leaves, no facts")
    pid_counter = [0]
    nl_root = _build_region(root, pid_counter)
    tree = NLFactTree(nl_root)

    def first_wh(fact: NLFact) -> Optional[Tuple[NLFact, int]]:
        # question order: recurse into a child where its placeholder sits
        for i, it in enumerate(fact.items):
            if isinstance(it, TokenItem):
                if it.text.lower() in WH_WORDS:
                    return fact, i
            elif it.kind == "bridge":
                hit = first_wh(fact.children[it.child])
                if hit is not None:
                    return hit
        return None

    hit = first_wh(tree.root)
    if hit is None:
        raise ConstructError("no interrogative pronoun, no answer placeholder")
    fact, i = hit
    pid_counter[0] += 1
    fact.items[i] = Placeholder(pid_counter[0], "answer")
    tree.validate()
    return tree


def construct_fact_tree(
    tree: SynNode,
    classifier: GcnClassifier,
    range_: str = DEFAULT_RANGE,
    trace: Optional[List[Tuple[str, float, bool]]] = None,
) -> NLFactTree:
    """Run preprocessing, the elimination walk and post-processing.

    The input tree is left untouched. The visit order is fixed up front;
    decisions happen against the current, partially eliminated tree.
    """
    work = preprocess(tree)
    for v in visit_order(work):
        prob = classifier.prob_node(v, range_)
        drop = prob > 0.5
        if trace is not None:
            trace.append((v.label, prob, drop))
        if drop:
            eliminate_node(v)
    return tree_to_facts(work)


# -- gold decisions and alignment ----------------------------------------


def align_tree_leaves(tree: NLFactTree, leaves: Sequence[Tuple[str, str]]):
    """Match fact items against the question's leaf sequence.

    Token items and the answer placeholder consume one leaf each; a
    bridge placeholder consumes its child's whole contiguous region.
    Fills in missing token labels and returns {id(fact): (start, end)}
    leaf ranges.
    """
    spans: Dict[int, Tuple[int, int]] = {}
    cursor = [0]

    def rec(fact: NLFact):
        start = cursor[0]
        for it in fact.items:
            if isinstance(it, TokenItem):
                if cursor[0] >= len(leaves) or leaves[cursor[0]][0] != it.text:
                    got = leaves[cursor[0]][0] if cursor[0] < len(leaves) else "<end>"
                    raise ConstructError(f"fact item {it.text!r} does not align with leaf {got!r}")
                if it.label is None:
                    it.label = leaves[cursor[0]][1]
                cursor[0] += 1
            elif it.kind == "answer":
                if cursor[0] >= len(leaves):
                    raise ConstructError("answer placeholder has no leaf to align with")
                cursor[0] += 1
            else:
                rec(fact.children[it.child])
        spans[id(fact)] = (start, cursor[0])

    rec(tree.root)
    if cursor[0] != len(leaves):
        raise ConstructError(f"aligned {cursor[0]} of {len(leaves)} leaves")
    return spans


def derive_gold_decisions(syntax_tree: SynNode, gold: NLFactTree) -> Optional[List[bool]]:
    """Drop flags, one per visit_order entry, that reproduce the gold
    tree; None when the gold tree is not reachable.

    A node is retained iff its leaf span equals some non-root gold
    fact's span and no deeper visited node claims the same span.
    """
    work = preprocess(syntax_tree)
    leaves = work.leaves()
    leaf_ix = {id(lf): i for i, lf in enumerate(leaves)}

    def node_span(n: SynNode) -> Tuple[int, int]:
        ls = n.leaves()
        return (leaf_ix[id(ls[0])], leaf_ix[id(ls[-1])] + 1)

    gold = NLFactTree.from_json(gold.to_json())  # private copy, labels reset
    try:
        fact_spans = align_tree_leaves(gold, [(lf.token, lf.syntax_label) for lf in leaves])
    except ConstructError:
        return None
    nonroot_spans: Set[Tuple[int, int]] = {
        fact_spans[id(f)] for f in gold.facts_preorder() if f is not gold.root
    }

    claimed: Set[Tuple[int, int]] = set()
    flags: List[bool] = []
    order = visit_order(work)
    for v in order:
        span = node_span(v)
        retain = span in nonroot_spans and span not in claimed
        if retain:
            claimed.add(span)
        flags.append(not retain)

    # replay to confirm the flags actually rebuild the gold tree
    for v, drop in zip(order, flags):
        if drop:
            eliminate_node(v)
    try:
        rebuilt = tree_to_facts(work)
    except ConstructError:
        return None
    if rebuilt.signature() != gold.signature():
        return None
    return flags


# -- training ------------------------------------------------------------


@dataclass
class ClassifierTrainConfig:
    dim: int = 50
    n_layers: int = 3
    lr: float = 1e-5
    epochs: int = 200
    seed: int = 0
    range_: str = DEFAULT_RANGE
    log_every: int = 0


def _collect_examples(
    pairs: Sequence[Tuple[SynNode, NLFactTree]], range_: str
) -> Tuple[List[Tuple[Tuple[str, ...], bytes, np.ndarray, int]], int]:
    """Replay gold eliminations and record one example per visited node,
    with the context taken from the partially eliminated tree exactly as
    the classifier would see it. Returns (examples, skipped_pairs)."""
    examples = []
    skipped = 0
    for syntax_tree, gold in pairs:
        flags = derive_gold_decisions(syntax_tree, gold)
        if flags is None:
            skipped += 1
            continue
        # replay on a fresh copy so each context reflects prior decisions
        work = preprocess(syntax_tree)
        for v, drop in zip(visit_order(work), flags):
            nodes, adj = extract_context(v, range_)
            labels = tuple(context_labels(nodes))
            examples.append((labels, adj.tobytes(), adj, 1 if drop else 0))
            if drop:
                eliminate_node(v)
    return examples, skipped


def _group_examples(clf: GcnClassifier, examples) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    groups: Dict[Tuple[int, bytes], List] = {}
    for labels, adjb, adj, y in examples:
        groups.setdefault((len(labels), adjb), []).append((labels, adj, y))
    out = []
    for key in sorted(groups.keys(), key=lambda k: (k[0], k[1])):
        rows = groups[key]
        ids = np.stack([clf.label_ids(r[0]) for r in rows])
        adj = rows[0][1]
        ys = np.array([r[2] for r in rows], dtype=np.float64)
        out.append((ids, adj, ys))
    return out


def classifier_accuracy(clf: GcnClassifier, examples) -> float:
    if not examples:
        return 0.0
    correct = 0
    for ids, adj, ys in examples:
        pred = clf.probs(ids, adj) > 0.5
        correct += int(np.sum(pred == (ys > 0.5)))
    total = sum(len(g[2]) for g in examples)
    return correct / total


def node_decision_accuracy(
    clf: GcnClassifier, pairs: Sequence[Tuple[SynNode, NLFactTree]],
    range_: str = DEFAULT_RANGE,
) -> float:
    """Fraction of replayed gold eliminate/retain decisions the
    classifier reproduces under the given context range."""
    examples, _ = _collect_examples(pairs, range_)
    return classifier_accuracy(clf, _group_examples(clf, examples))


def train_classifier(
    train_pairs: Sequence[Tuple[SynNode, NLFactTree]],
    val_pairs: Sequence[Tuple[SynNode, NLFactTree]],
    cfg: ClassifierTrainConfig,
) -> Tuple[GcnClassifier, Dict]:
    """Full-batch Adam on binary cross-entropy over replayed node
    decisions; keeps the parameters of the best validation epoch."""
    raw_train, skip_tr = _collect_examples(train_pairs, cfg.range_)
    raw_val, skip_va = _collect_examples(val_pairs, cfg.range_)
    if skip_tr or skip_va:
        warnings.warn(f"skipped {skip_tr}+{skip_va} pairs whose gold tree is not reachable")
    if not raw_train:
        raise ConstructError("no usable training pairs")
    vocab = sorted({lab for ex in raw_train for lab in ex[0]})
    clf = GcnClassifier(vocab, dim=cfg.dim, n_layers=cfg.n_layers, seed=cfg.seed)
    train_groups = _group_examples(clf, raw_train)
    val_groups = _group_examples(clf, raw_val)

    state = numkit.AdamState(clf.params())
    best_acc, best_params, best_epoch = -1.0, [p.copy() for p in clf.params()], 0
    history = {"loss": [], "val_acc": [], "skipped_pairs": skip_tr + skip_va}
    n_total = sum(len(g[2]) for g in train_groups)
    for epoch in range(1, cfg.epochs + 1):
        total_loss = 0.0
        grads = [np.zeros_like(p) for p in clf.params()]
        for ids, adj, ys in train_groups:
            cache = clf._forward(ids, adj)
            loss, gs = clf._backward(cache, ys)
            w = len(ys) / n_total
            total_loss += loss * w
            for acc, g in zip(grads, gs):
                acc += g * w
        new_params = numkit.adam_step(state, clf.params(), grads, cfg.lr)
        clf.set_params(new_params)
        val_acc = classifier_accuracy(clf, val_groups) if val_groups else classifier_accuracy(clf, train_groups)
        history["loss"].append(total_loss)
        history["val_acc"].append(val_acc)
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_params = [p.copy() for p in clf.params()]
        if cfg.log_every and epoch % cfg.log_every == 0:
            print(f"[classifier] epoch {epoch} loss {total_loss:.4f} val_acc {val_acc:.4f}")
    clf.set_params(best_params)
    history["best_val_acc"] = best_acc
    history["best_epoch"] = best_epoch
    return clf, history


# -- checkpoint io -------------------------------------------------------


def save_classifier(clf: GcnClassifier, path: str, extra_meta: Optional[Dict] = None) -> None:
    params = {"emb": clf.emb, "fc_w": clf.fc_w, "fc_b": np.asarray([clf.fc_b])}
    for l in range(clf.n_layers):
        params[f"w0_{l}"] = clf.w0[l]
        params[f"w1_{l}"] = clf.w1[l]
    vocab = [None] * len(clf.vocab)
    for lab, i in clf.vocab.items():
        vocab[i] = lab
    meta = {"vocab": vocab}
    meta.update(extra_meta or {})
    numkit.save_checkpoint(
        path, "node-classifier", {"dim": clf.dim, "n_layers": clf.n_layers}, params, meta
    )


def load_classifier(path: str) -> GcnClassifier:
    config, params, meta = numkit.load_checkpoint(path, "node-classifier")
    clf = GcnClassifier(meta["vocab"], dim=config["dim"], n_layers=config["n_layers"], seed=0)
    clf.emb = params["emb"]
    clf.w0 = [params[f"w0_{l}"] for l in range(clf.n_layers)]
    clf.w1 = [params[f"w1_{l}"] for l in range(clf.n_layers)]
    clf.fc_w = params["fc_w"]
    clf.fc_b = float(params["fc_b"][0])
    return clf
