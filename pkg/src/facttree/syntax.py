"""Bracketed constituency trees and question preprocessing.

Internal nodes carry a syntax label; leaves carry a token string and
take their syntax label from their parent node. Consecutive bare tokens
inside one bracket parse as a single (possibly multi-word) leaf, which
is also how merged noun phrases serialize.
"""

from __future__ import annotations

from typing import Iterator, List, Optional, Tuple


class SyntaxError_(ValueError):
    """Malformed bracketing or an unusable tree shape."""


PUNCT_TOKENS = {".", "?", "!", ",", ";", ":"}


class SynNode:
    __slots__ = ("label", "token", "children", "parent")

    def __init__(self, label: Optional[str] = None, token: Optional[str] = None):
        if (label is None) == (token is None):
            raise SyntaxError_("node needs exactly one of label (internal) or token (leaf)")
        self.label = label
        self.token = token
        self.children: List["SynNode"] = []
        self.parent: Optional["SynNode"] = None

    def is_leaf(self) -> bool:
        return self.token is not None

    @property
    def syntax_label(self) -> str:
        """A leaf's syntax label is its parent's label."""
        if self.is_leaf():
            if self.parent is None:
                raise SyntaxError_("detached leaf has no syntax label")
            return self.parent.label  # type: ignore[return-value]
        return self.label  # type: ignore[return-value]

    def add(self, child: "SynNode") -> "SynNode":
        child.parent = self
        self.children.append(child)
        return child

    def has_leaf_child(self) -> bool:
        return any(c.is_leaf() for c in self.children)

    def leaves(self) -> List["SynNode"]:
        if self.is_leaf():
            return [self]
        out: List[SynNode] = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def walk(self) -> Iterator["SynNode"]:
        yield self
        for c in self.children:
            yield from c.walk()

    def copy(self) -> "SynNode":
        if self.is_leaf():
            return SynNode(token=self.token)
        n = SynNode(label=self.label)
        for c in self.children:
            n.add(c.copy())
        return n

    def __repr__(self) -> str:
        return f"<leaf {self.token!r}>" if self.is_leaf() else f"<{self.label} n={len(self.children)}>"


def parse_bracketed(text: str) -> SynNode:
    """Parse one bracketed tree, e.g. "(NP (DT the) (NN arena))".

    Every bracket opens with a label; bare tokens inside a bracket form
    leaves, with consecutive tokens merging into one leaf. Errors carry
    the character position.
    """
    toks: List[Tuple[str, int]] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in "()":
            toks.append((ch, i))
            i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            toks.append((text[i:j], i))
            i = j
    pos = 0

    def fail(msg: str, at: int) -> SyntaxError_:
        return SyntaxError_(f"char {at}: {msg}")

    def parse_node() -> SynNode:
        nonlocal pos
        if pos >= len(toks) or toks[pos][0] != "(":
            at = toks[pos][1] if pos < len(toks) else n
            raise fail("expected '('", at)
        open_at = toks[pos][1]
        pos += 1
        if pos >= len(toks) or toks[pos][0] in "()":
            raise fail("bracket is missing its label", open_at)
        node = SynNode(label=toks[pos][0])
        pos += 1
        pending: List[str] = []

        def flush():
            if pending:
                node.add(SynNode(token=" ".join(pending)))
                pending.clear()

        while pos < len(toks) and toks[pos][0] != ")":
            if toks[pos][0] == "(":
                flush()
                node.add(parse_node())
            else:
                pending.append(toks[pos][0])
                pos += 1
        if pos >= len(toks):
            raise fail("unbalanced '('", open_at)
        flush()
        pos += 1  # consume ')'
        if not node.children:
            raise fail(f"bracket ({node.label}) has no content", open_at)
        return node

    root = parse_node()
    if pos != len(toks):
        raise fail("trailing content after the tree", toks[pos][1])
    return root


def serialize(tree: SynNode) -> str:
    if tree.is_leaf():
        raise SyntaxError_("cannot serialize a bare leaf")
    parts = [f"({tree.label}"]
    prev_leaf = False
    for c in tree.children:
        if c.is_leaf():
            if prev_leaf:
                raise SyntaxError_("adjacent sibling leaves do not round-trip")
            parts.append(" " + c.token)
            prev_leaf = True
        else:
            parts.append(" " + serialize(c))
            prev_leaf = False
    parts.append(")")
    return "".join(parts)


def leaf_items(tree: SynNode) -> List[Tuple[str, str]]:
    """(token, syntax label) per leaf, question order."""
    return [(lf.token, lf.syntax_label) for lf in tree.leaves()]


def question_text(tree: SynNode) -> str:
    return " ".join(lf.token for lf in tree.leaves())


# -- preprocessing -------------------------------------------------------


def _postorder(node: SynNode) -> List[SynNode]:
    out: List[SynNode] = []
    for c in node.children:
        out.extend(_postorder(c))
    out.append(node)
    return out


def _drop_child(parent: SynNode, child: SynNode) -> None:
    parent.children.remove(child)
    child.parent = None


def _strip_punctuation(root: SynNode) -> None:
    for node in _postorder(root):
        if node.is_leaf() and node.token in PUNCT_TOKENS:
            parent = node.parent
            _drop_child(parent, node)
            # the dedicated punctuation preterminal goes with its leaf,
            # and so does anything left childless above it
            while parent is not root and not parent.children:
                grand = parent.parent
                _drop_child(grand, parent)
                parent = grand
    if not root.children:
        raise SyntaxError_("tree is empty after punctuation removal")


def _merge_flat_nps(root: SynNode) -> None:
    for node in _postorder(root):
        if node.is_leaf() or node.label != "NP" or not node.children:
            continue
        if any(c.is_leaf() for c in node.children):
            continue
        grandchildren: List[SynNode] = []
        flat = True
        for c in node.children:
            if not c.children or not all(g.is_leaf() for g in c.children):
                flat = False
                break
            grandchildren.extend(c.children)
        if not flat or len(grandchildren) <= 1:
            continue
        merged = " ".join(g.token for g in grandchildren)
        node.children = []
        node.add(SynNode(token=merged))


def _collapse_chains(root: SynNode) -> None:
    for node in _postorder(root):
        if node.is_leaf() or len(node.children) != 1:
            continue
        child = node.children[0]
        if child.is_leaf() or len(child.children) != 1:
            continue
        grand = child.children[0]
        if not grand.is_leaf():
            continue
        node.children = []
        node.add(grand)


def preprocess(tree: SynNode) -> SynNode:
    """Apply the three cleanup rules, each once, bottom-up:

    1. punctuation leaves and their parents are pruned;
    2. an NP whose grandchildren are all leaves (more than one) merges
       them into a single leaf directly under the NP;
    3. single-child/single-grandchild chains collapse so the leaf hangs
       from the grandparent.

    The input is not modified. The result is a fixed point of this
    function.
    """
    out = tree.copy()
    _strip_punctuation(out)
    _merge_flat_nps(out)
    _collapse_chains(out)
    return out
