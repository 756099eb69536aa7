"""Synthetic knowledge graphs and question datasets.

The generator works backwards from a fixed template inventory: a
knowledge graph is built so that every template has stored facts to
instantiate against, then questions are sampled as solutions of the
template's fact pattern and kept only when the whole pattern has exactly
one satisfying assignment given the mentioned entities.
"""

import itertools
import json
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

from . import numkit
from .kg import KnowledgeGraph
from .syntax import SynNode, parse_bracketed, preprocess, question_text, serialize, leaf_items
from .construct import (
    NLFactTree,
    Placeholder,
    align_tree_leaves,
    derive_gold_decisions,
    eliminate_node,
    tree_to_facts,
    visit_order,
)
from .locate import (
    KgFact,
    KgFactTree,
    RelationMatcher,
    build_default_table,
    fact_label_sequence,
    locate_tree,
)
from .reason import answer_placeholder, enumerate_assignments


class DataError(ValueError):
    pass


# -- template inventory --------------------------------------------------

_SLOT_RE = re.compile(r"@[a-z0-9]+")
_templates_cache: Optional[Dict] = None


def load_templates() -> Dict:
    """The packaged template file: question patterns, fact skeletons,
    gold tag strings, surface phrases and their synonym variants."""
    global _templates_cache
    if _templates_cache is None:
        text = resources.files("facttree.data").joinpath("templates.json").read_text("utf-8")
        _templates_cache = json.loads(text)
    return _templates_cache


def surface_relations() -> Dict[str, str]:
    """Phrase -> relation name, the synonym table for relation matching."""
    return dict(load_templates()["surfaces"])


def template_slots(tpl: Dict) -> List[str]:
    return sorted(set(_SLOT_RE.findall(tpl["pattern"])))


def _fact_refs(f: Dict) -> List[str]:
    return [f["s"], f["o"]] + [v for _, v in f["attrs"]]


def _children_map(tpl: Dict) -> Dict[int, List[int]]:
    """fact index -> child fact indices, from ?fK references. Fact 0 is
    the root; facts are listed in preorder."""
    facts = tpl["facts"]
    children: Dict[int, List[int]] = {i: [] for i in range(len(facts))}
    for k in range(1, len(facts)):
        ref = "?f%d" % (k + 1)
        owners = [i for i, f in enumerate(facts) if ref in _fact_refs(f)]
        if len(owners) != 1:
            raise DataError(f"template {tpl['id']}: {ref} must be bound exactly once, got {len(owners)}")
        children[owners[0]].append(k)
    return children


def build_query_tree(
    kg: KnowledgeGraph, tpl: Dict
) -> Optional[Tuple[KgFactTree, Dict[str, Placeholder]]]:
    """The template's fact pattern as a fact tree over placeholders;
    entity slots become placeholders as well so one enumeration yields
    every instantiation. None when the graph lacks a needed relation."""
    facts = tpl["facts"]
    children = _children_map(tpl)
    phs: Dict[str, Placeholder] = {}
    counter = itertools.count(1)

    def ph(ref: str) -> Placeholder:
        if ref not in phs:
            phs[ref] = Placeholder(next(counter), "answer" if ref == "?ans" else "bridge")
        return phs[ref]

    def conv(i: int, v: str):
        if v == "?up":
            return ph("?f%d" % (i + 1))
        return ph(v)

    kfs: List[KgFact] = []
    for i, f in enumerate(facts):
        p = kg.relations.id_of(f["p"])
        if p is None:
            return None
        attrs = []
        for a, v in f["attrs"]:
            aid = kg.relations.id_of(a)
            if aid is None:
                return None
            attrs.append((aid, conv(i, v)))
        kfs.append(KgFact(conv(i, f["s"]), p, conv(i, f["o"]), attrs))
    for i, kids in children.items():
        for k in kids:
            kfs[i].children.append(kfs[k])
            kfs[i].bindings.append(phs["?f%d" % (k + 1)])
    return KgFactTree(kfs[0]), phs


def gold_kg_tree_json(tpl: Dict, slot_values: Dict[str, str]) -> Dict:
    facts = tpl["facts"]
    children = _children_map(tpl)

    def conv(i: int, v: str):
        if v == "?ans":
            return {"ph": "answer"}
        if v == "?up":
            return {"ph": "up"}
        if v.startswith("?f"):
            return {"ph": ["child", children[i].index(int(v[2:]) - 1)]}
        if v.startswith("@"):
            return slot_values[v]
        raise DataError(f"template {tpl['id']}: bad slot reference {v!r}")

    def build(i: int) -> Dict:
        f = facts[i]
        return {
            "s": conv(i, f["s"]),
            "p": f["p"],
            "o": conv(i, f["o"]),
            "attrs": [[a, conv(i, v)] for a, v in f["attrs"]],
            "children": [build(k) for k in children[i]],
        }

    return build(0)


# -- filling a template --------------------------------------------------


def fill_pattern(pattern: str, slot_values: Dict[str, str]) -> str:
    def sub(m: re.Match) -> str:
        ref = m.group(0)
        if ref not in slot_values:
            raise DataError(f"no value for slot {ref}")
        return slot_values[ref]

    return _SLOT_RE.sub(sub, pattern)


def _covered_text(node: SynNode) -> str:
    return " ".join(lf.token for lf in node.leaves())


def _collect_marks(raw: SynNode) -> List[str]:
    """Strip the retained-node markers (a '*' label suffix) in place and
    return the covered text of each marked node, outermost first."""
    texts = []
    for n in raw.walk():
        if not n.is_leaf() and n.label.endswith("*"):
            n.label = n.label[:-1]
            texts.append(_covered_text(n))
    return texts


def _apply_variants(raw: SynNode, variants: Dict[str, List[str]], gen) -> List[List]:
    """Seeded synonym substitution on whole leaves; returns the swaps as
    [leaf index, replacement] pairs."""
    record = []
    for i, lf in enumerate(raw.leaves()):
        alts = variants.get(lf.token)
        if not alts:
            continue
        choices = [lf.token] + list(alts)
        pick = choices[int(gen.integers(0, len(choices)))]
        if pick != lf.token:
            lf.token = pick
            record.append([i, pick])
    return record


def realize_question(
    tpl: Dict, slot_values: Dict[str, str], variants: Dict[str, List[str]], gen
) -> Tuple[SynNode, List[str], List[List]]:
    """Fill the pattern, swap in seeded synonyms, strip the retention
    marks. Returns (raw tree, marked texts, swap record); the tree has
    clean labels and the marked texts reflect the swaps."""
    raw = parse_bracketed(fill_pattern(tpl["pattern"], slot_values))
    swaps = _apply_variants(raw, variants, gen)
    marked = _collect_marks(raw)
    if len(marked) != len(tpl["facts"]) - 1:
        raise DataError(
            f"template {tpl['id']}: {len(marked)} marked nodes for {len(tpl['facts'])} facts"
        )
    if len(set(marked)) != len(marked):
        raise DataError(f"template {tpl['id']}: marked regions must cover distinct texts")
    return raw, marked, swaps


def derive_nl_tree(raw: SynNode, marked_texts: Sequence[str]) -> NLFactTree:
    """Eliminate every visited node except those covering a marked
    region; deeper nodes claim a region first."""
    work = preprocess(raw)
    pending = set(marked_texts)
    for v in visit_order(work):
        text = _covered_text(v)
        if text in pending:
            pending.discard(text)
        else:
            eliminate_node(v)
    if pending:
        raise DataError(f"marked regions not found during the walk: {sorted(pending)}")
    return tree_to_facts(work)


# -- knowledge graph generation ------------------------------------------

CORE_BINARY = (
    "mother", "father", "child", "spouse", "sibling",
    "profession", "country", "genre", "work_for", "work_at",
    "born_in", "die", "die_in", "locate",
)
CORE_NARY = ("win", "join", "educated_at", "nominated_for")

FIRST_NAMES = (
    "Avery", "Bennett", "Clara", "Dorian", "Elena", "Felix", "Greta", "Hugo",
    "Iris", "Jonas", "Klara", "Leo", "Mira", "Nora", "Oskar", "Petra",
    "Quentin", "Rosa", "Samuel", "Talia", "Ulrich", "Vera", "Wallace", "Ximena",
    "Yara", "Zeno", "Anselm", "Beatrix", "Casimir", "Delia", "Edmund", "Flora",
    "Gideon", "Helena", "Ignatius", "Jolene", "Kasper", "Lydia", "Magnus", "Nadia",
    "Orville", "Priya", "Quinn", "Renata", "Stellan", "Tamsin", "Uma", "Viktor",
)
LAST_NAMES = (
    "Stone", "Hale", "Varga", "Lindqvist", "Okafor", "Mercer", "Thorne", "Ellison",
    "Marsh", "Novak", "Reyes", "Calloway", "Drummond", "Ferrand", "Grady", "Holloway",
    "Ivanov", "Jablonski", "Keller", "Lorimer", "Moreau", "Nakamura", "Ostrander",
    "Pellegrino", "Quirke", "Rasmussen", "Soriano", "Tanaka", "Underhill", "Vasquez",
    "Whitfield", "Xiang", "Yates", "Zielinski", "Ashworth", "Brandt", "Cormier",
    "Duval", "Ekberg", "Fontaine", "Granger", "Hargrove", "Iverson", "Juhasz",
)
PLACE_BASES = (
    "Riverton", "Ashford", "Brookmere", "Caldwell", "Dunmore", "Eastvale",
    "Fairhaven", "Glenwood", "Harborview", "Ironbridge", "Kingsford", "Larkspur",
    "Millbrook", "Maplewood", "Oakhurst", "Pinecrest", "Quarryville", "Ravenshollow",
    "Silverlake", "Thornbury", "Umberfield", "Vineland", "Westmere", "Yarrowdale",
    "Zephyrine", "Coldwater", "Stonegate", "Birchfield", "Copperhill", "Fernbrook",
)
PLACE_PREFIXES = ("North", "South", "East", "West", "New", "Old", "Port", "Upper")
TEAM_ADJECTIVES = (
    "Crimson", "Golden", "Silver", "Iron", "Emerald", "Azure",
    "Scarlet", "Obsidian", "Amber", "Cobalt", "Ivory", "Onyx",
)
TEAM_ANIMALS = (
    "Hawks", "Wolves", "Ravens", "Bison", "Otters", "Falcons", "Lynxes",
    "Herons", "Badgers", "Foxes", "Cranes", "Panthers", "Orcas", "Stags",
)
PRIZE_BASES = (
    "Meridian", "Aurora", "Pinnacle", "Beacon", "Laurel", "Zenith", "Horizon",
    "Vanguard", "Summit", "Paragon", "Luminary", "Keystone", "Argent", "Borealis",
    "Cascade", "Ember", "Frontier", "Insignia", "Obelisk", "Quasar", "Radiant",
    "Sterling", "Tempest", "Umbra", "Vertex", "Wreath", "Zodiac", "Crest",
    "Garland", "Halcyon",
)
PARTY_BASES = (
    "Unity", "Reform", "Liberty", "Progress", "Heritage", "Concord", "Alliance",
    "Federal", "Commonwealth", "Sovereign", "Plural", "Mutual", "Civic", "Forward",
)
PROFESSIONS = (
    "engineer", "painter", "chemist", "historian", "architect", "violinist",
    "surgeon", "botanist", "journalist", "sculptor", "astronomer", "linguist",
    "geologist", "novelist",
)
COUNTRIES = (
    "Norland", "Vestria", "Aldova", "Brenmark", "Caspia", "Drelland", "Estoria",
    "Forsmark", "Galdria", "Hestova", "Ithland", "Jorvia", "Kaldeen", "Lurania",
    "Meridova", "Novestra",
)
GENRES = (
    "jazz", "opera", "folk", "ballet", "satire", "noir",
    "pastoral", "baroque", "minimalism", "surrealism",
)
FIELDS = (
    "physics", "botany", "cartography", "linguistics", "archaeology",
    "meteorology", "economics", "genetics", "acoustics", "toxicology",
)


@dataclass
class KgGenConfig:
    n_entities: int = 600
    n_binary_rel: int = 35
    n_nary_rel: int = 12
    n_facts: int = 2000
    max_attrs: int = 2
    seed: int = 0


def _pool(gen, universe: List[str], n: int, fallback: str) -> List[str]:
    """n distinct names: a seeded draw from the universe, numbered
    fallbacks beyond it."""
    if n <= len(universe):
        perm = gen.permutation(len(universe))
        return [universe[int(i)] for i in perm[:n]]
    out = list(universe)
    k = 1
    while len(out) < n:
        out.append(fallback % k)
        k += 1
    return out


def _entity_pools(cfg: KgGenConfig, gen) -> Dict[str, List[str]]:
    e = cfg.n_entities
    counts = {
        "year": max(24, int(e * 0.12)),
        "person": int(e * 0.50),
        "place": max(12, int(e * 0.10)),
        "team": max(6, int(e * 0.05)),
        "prize": max(6, int(e * 0.04)),
        "school": max(4, int(e * 0.03)),
        "party": max(4, int(e * 0.015)),
        "profession": min(len(PROFESSIONS), max(6, int(e * 0.02))),
        "country": min(len(COUNTRIES), max(6, int(e * 0.02))),
        "genre": min(len(GENRES), max(4, int(e * 0.015))),
        "field": min(len(FIELDS), max(4, int(e * 0.015))),
    }
    used = sum(counts.values())
    if used > e:
        raise DataError(f"n_entities={e} is too small for the typed pools ({used} needed)")
    counts["artifact"] = e - used

    persons_all = [f"{a} {b}" for a in FIRST_NAMES for b in LAST_NAMES]
    places_all = list(PLACE_BASES) + [f"{p} {b}" for p in PLACE_PREFIXES for b in PLACE_BASES]
    teams_all = [f"the {a} {b}" for a in TEAM_ADJECTIVES for b in TEAM_ANIMALS]
    prizes_all = [f"the {b} Prize" for b in PRIZE_BASES]
    schools_all = [f"University of {b}" for b in PLACE_BASES] + [f"{b} Institute" for b in PLACE_BASES]
    parties_all = [f"the {b} Party" for b in PARTY_BASES]

    pools = {
        "year": [str(1900 + i) for i in range(counts["year"])],
        "person": _pool(gen, persons_all, counts["person"], "Person %03d"),
        "place": _pool(gen, places_all, counts["place"], "Settlement %03d"),
        "team": _pool(gen, teams_all, counts["team"], "the Team %03d"),
        "prize": _pool(gen, prizes_all, counts["prize"], "the Prize %03d"),
        "school": _pool(gen, schools_all, counts["school"], "Academy %03d"),
        "party": _pool(gen, parties_all, counts["party"], "the Party %03d"),
        "profession": _pool(gen, list(PROFESSIONS), counts["profession"], "trade %03d"),
        "country": _pool(gen, list(COUNTRIES), counts["country"], "Country %03d"),
        "genre": _pool(gen, list(GENRES), counts["genre"], "genre %03d"),
        "field": _pool(gen, list(FIELDS), counts["field"], "field %03d"),
        "artifact": [f"artifact {i:03d}" for i in range(counts["artifact"])],
    }
    all_names = [n for p in pools.values() for n in p]
    if len(set(all_names)) != cfg.n_entities:
        raise DataError("entity name pools collided")
    return pools


def _take(gen, seq: List, n: int) -> List:
    perm = gen.permutation(len(seq))
    return [seq[int(i)] for i in perm[:n]]


def generate_kg(cfg: KgGenConfig) -> KnowledgeGraph:
    """A typed graph every template can instantiate against.

    Kinship facts come from family units; places are shared between
    birth, death and team locations so cross-fact questions have
    support; attributed join/win facts draw times from a common pool of
    active years so co-occurring years exist. Uniqueness-friendly
    functional constraints (one team per place, one winner per prize and
    year, ...) are enforced during sampling.
    """
    if cfg.n_binary_rel < len(CORE_BINARY):
        raise DataError(f"n_binary_rel must be at least {len(CORE_BINARY)} (the core inventory)")
    if cfg.n_nary_rel < len(CORE_NARY):
        raise DataError(f"n_nary_rel must be at least {len(CORE_NARY)}")
    if cfg.max_attrs < 1:
        raise DataError("max_attrs must be at least 1")
    if cfg.n_entities < 100:
        raise DataError("n_entities must be at least 100")
    gen = numkit.rng(cfg.seed)
    pools = _entity_pools(cfg, gen)

    kg = KnowledgeGraph()
    for kind in (
        "person", "year", "place", "team", "prize", "school",
        "party", "profession", "country", "genre", "field", "artifact",
    ):
        for name in pools[kind]:
            kg.entities.intern(name)

    b = cfg.n_facts

    def budget_left() -> int:
        return cfg.n_facts - kg.n_facts

    def add(s, p, o, attrs=()):
        if budget_left() <= 0:
            raise DataError("fact budget exhausted in the core phase; raise n_facts")
        return kg.add(s, p, o, attrs)

    persons = _take(gen, pools["person"], len(pools["person"]))
    n_fam = min(len(persons) // 4, max(1, int(b * 0.17 / 8)))
    fathers, mothers, kids1, kids2 = [], [], [], []
    for i in range(n_fam):
        f, m, c1, c2 = persons[4 * i : 4 * i + 4]
        fathers.append(f), mothers.append(m), kids1.append(c1), kids2.append(c2)
        add(f, "spouse", m)
        add(m, "mother", c1)
        add(m, "mother", c2)
        add(f, "father", c1)
        add(f, "father", c2)
        add(c1, "child", f)
        add(c2, "child", m)
        add(c1, "sibling", c2)
    rest = persons[4 * n_fam :]

    def functional(pred: str, subjects: List[str], values: List[str], n: int,
                   value_first: bool = False):
        chosen = subjects[:n]
        for i, s in enumerate(chosen):
            v = values[int(gen.integers(0, len(values)))]
            add(v, pred, s) if value_first else add(s, pred, v)
        return chosen

    # profession and country read value-first ("X is the profession of Y"),
    # so the value is the stored subject; fathers come first among the
    # holders because their professions back the spouse-then-profession chain
    prof_subjects = functional(
        "profession", fathers + mothers + _take(gen, rest, len(rest)),
        pools["profession"], min(int(b * 0.055), len(persons)), value_first=True)
    functional("country", kids1 + _take(gen, [p for p in persons if p not in set(kids1)], len(persons) - len(kids1)),
               pools["country"], min(int(b * 0.045), len(persons)), value_first=True)
    functional("genre", _take(gen, persons, len(persons)), pools["genre"], int(b * 0.02))
    functional("work_for", _take(gen, persons, len(persons)), pools["field"], int(b * 0.025))
    functional("work_at", _take(gen, persons, len(persons)), pools["school"], int(b * 0.02))

    # one shuffled place order shared by births, team homes and deaths,
    # so prefix places support the place-pivot questions
    place_order = _take(gen, pools["place"], len(pools["place"]))
    born_subjects = fathers + [p for p in _take(gen, persons, len(persons)) if p not in set(fathers)]
    n_born = min(int(b * 0.03), len(place_order), len(born_subjects))
    for i in range(n_born):
        add(born_subjects[i], "born_in", place_order[i])

    teams = _take(gen, pools["team"], len(pools["team"]))
    for i, t in enumerate(teams):
        add(t, "locate", place_order[i % len(place_order)])

    diein_subjects = _take(gen, persons, len(persons))
    for i in range(min(int(b * 0.025), len(place_order))):
        add(diein_subjects[i], "die_in", place_order[i])

    years = pools["year"]
    active_years = _take(gen, years, max(8, min(40, len(years) // 2)))

    # join: father-heavy so spouse-then-join chains resolve
    others = _take(gen, rest, len(rest))
    join_years: List[str] = []
    used_ty, used_pt = set(), set()
    target = int(b * 0.085)
    made, tries = 0, 0
    while made < target and tries < 60 * target:
        tries += 1
        r = int(gen.integers(0, 10))
        if r < 4 and fathers:
            p = fathers[int(gen.integers(0, len(fathers)))]
        elif r < 6 and mothers:
            p = mothers[int(gen.integers(0, len(mothers)))]
        else:
            p = others[int(gen.integers(0, len(others)))] if others \
                else persons[int(gen.integers(0, len(persons)))]
        t = teams[int(gen.integers(0, len(teams)))]
        y = active_years[int(gen.integers(0, len(active_years)))]
        if (t, y) in used_ty or (p, t) in used_pt:
            continue
        if add(p, "join", t, [("time", y)]):
            used_ty.add((t, y)), used_pt.add((p, t))
            join_years.append(y)
            made += 1

    win_years: List[str] = []
    used_py, used_zy, used_pz = set(), set(), set()
    target = int(b * 0.085)
    made, tries = 0, 0
    while made < target and tries < 60 * target:
        tries += 1
        p = persons[int(gen.integers(0, len(persons)))]
        z = pools["prize"][int(gen.integers(0, len(pools["prize"])))]
        y = active_years[int(gen.integers(0, len(active_years)))]
        if (p, y) in used_py or (z, y) in used_zy or (p, z) in used_pz:
            continue
        if add(p, "win", z, [("time", y)]):
            used_py.add((p, y)), used_zy.add((z, y)), used_pz.add((p, z))
            win_years.append(y)
            made += 1

    # deaths: career-prize holders die in winning years, a second chunk
    # dies in joining years, the rest anywhere
    n_die = min(int(b * 0.06), len(persons))
    die_subjects = _take(gen, persons, n_die)
    n_winb = min(int(b * 0.012), len(pools["prize"]), n_die)
    for i, p in enumerate(die_subjects):
        if i < n_winb and win_years:
            y = win_years[int(gen.integers(0, len(win_years)))]
        elif i < n_winb + n_die // 3 and join_years:
            y = join_years[int(gen.integers(0, len(join_years)))]
        else:
            y = years[int(gen.integers(0, len(years)))]
        add(p, "die", y)
    prize_order = _take(gen, pools["prize"], len(pools["prize"]))
    for i in range(n_winb):
        add(die_subjects[i], "win", prize_order[i])

    party_subjects = _take(gen, persons, len(persons))
    for i in range(int(b * 0.03)):
        add(party_subjects[i % len(party_subjects)], "join",
            pools["party"][int(gen.integers(0, len(pools["party"])))])

    used_ps = set()
    target = int(b * 0.03)
    made, tries = 0, 0
    while made < target and tries < 60 * target:
        tries += 1
        p = persons[int(gen.integers(0, len(persons)))]
        s = pools["school"][int(gen.integers(0, len(pools["school"])))]
        if (p, s) in used_ps:
            continue
        if add(p, "educated_at", s, [("end_time", years[int(gen.integers(0, len(years)))])]):
            used_ps.add((p, s))
            made += 1
    # binary schooling backs the profession-of-the-graduate questions,
    # so its subjects come from the profession holders
    school_order = _take(gen, pools["school"], len(pools["school"]))
    for i in range(min(int(b * 0.01), len(school_order), len(prof_subjects))):
        add(prof_subjects[i], "educated_at", school_order[i])

    for i in range(int(b * 0.02)):
        p = persons[int(gen.integers(0, len(persons)))]
        z = pools["prize"][int(gen.integers(0, len(pools["prize"])))]
        y = years[int(gen.integers(0, len(years)))]
        add(p, "nominated_for", z, [("time", y)])

    # make sure no core predicate fell through the sampling cracks
    for name in CORE_BINARY + CORE_NARY:
        if kg.relations.id_of(name) is None or not kg.facts_with_predicate(kg.relations.id_of(name)):
            raise DataError(f"core relation {name!r} ended up with no facts; raise n_facts")

    # padding relations up to the configured counts
    extra_b = cfg.n_binary_rel - len(CORE_BINARY)
    extra_n = cfg.n_nary_rel - len(CORE_NARY)
    remainder = budget_left()
    if remainder < extra_b + extra_n:
        raise DataError("n_facts too small to give every padding relation a fact")
    attr_names = ["time", "end_time"] + [f"attr_{i}" for i in range(3, cfg.max_attrs + 1)]
    attr_names = attr_names[: max(cfg.max_attrs, 1)]
    pad_specs = [("relation_b%02d" % (i + 1), False) for i in range(extra_b)]
    pad_specs += [("relation_n%02d" % (i + 1), True) for i in range(extra_n)]
    if pad_specs:
        base, bump = divmod(remainder, len(pad_specs))
        for j, (name, nary) in enumerate(pad_specs):
            want = base + (1 if j < bump else 0)
            made, tries = 0, 0
            while made < want and tries < 200 * max(want, 1):
                tries += 1
                s = persons[int(gen.integers(0, len(persons)))]
                o = pools["artifact"][int(gen.integers(0, len(pools["artifact"])))] if pools["artifact"] \
                    else pools["place"][int(gen.integers(0, len(pools["place"])))]
                attrs = []
                if nary:
                    k = 1 + int(gen.integers(0, cfg.max_attrs))
                    for a in attr_names[:k]:
                        attrs.append((a, years[int(gen.integers(0, len(years)))]))
                if kg.add(s, name, o, attrs):
                    made += 1
            if made < want:
                raise DataError(f"could not place {want} facts for {name}; raise n_entities")
    else:
        # counts are exactly the core inventory: absorb the remainder
        made, tries = 0, 0
        while budget_left() > 0 and tries < 200 * max(remainder, 1):
            tries += 1
            p = persons[int(gen.integers(0, len(persons)))]
            if tries % 2:
                kg.add(p, "nominated_for", pools["prize"][int(gen.integers(0, len(pools["prize"])))],
                       [("time", years[int(gen.integers(0, len(years)))])])
            else:
                kg.add(p, "genre", pools["genre"][int(gen.integers(0, len(pools["genre"])))])

    if kg.n_facts != cfg.n_facts:
        raise DataError(f"generated {kg.n_facts} facts, wanted {cfg.n_facts}")
    if kg.relation_counts() != (cfg.n_binary_rel, cfg.n_nary_rel):
        raise DataError(f"relation counts {kg.relation_counts()} do not match the config")
    if kg.n_entities != cfg.n_entities:
        raise DataError(f"entity count {kg.n_entities} does not match the config")
    return kg


# -- question sampling ---------------------------------------------------

ENUM_CAP = 20000


@dataclass
class QaItem:
    id: str
    question: str
    tree: str
    gold_nl_tree: Dict
    gold_kg_tree: Dict
    links: Dict[str, str]
    answer: str
    n_facts: int
    gold_labels: List[str]
    meta: Dict = field(default_factory=dict)


def item_to_json(it: QaItem) -> Dict:
    return {
        "id": it.id,
        "question": it.question,
        "tree": it.tree,
        "gold_nl_tree": it.gold_nl_tree,
        "gold_kg_tree": it.gold_kg_tree,
        "links": it.links,
        "answer": it.answer,
        "n_facts": it.n_facts,
        "gold_labels": it.gold_labels,
        "meta": it.meta,
    }


_ITEM_FIELDS = ("id", "question", "tree", "gold_nl_tree", "gold_kg_tree",
                "links", "answer", "n_facts", "gold_labels")


def item_from_json(blob: Dict) -> QaItem:
    missing = [f for f in _ITEM_FIELDS if f not in blob]
    if missing:
        raise DataError(f"item is missing fields {missing}")
    return QaItem(
        id=blob["id"], question=blob["question"], tree=blob["tree"],
        gold_nl_tree=blob["gold_nl_tree"], gold_kg_tree=blob["gold_kg_tree"],
        links=dict(blob["links"]), answer=blob["answer"], n_facts=int(blob["n_facts"]),
        gold_labels=list(blob["gold_labels"]), meta=dict(blob.get("meta", {})),
    )


@dataclass
class DataGenConfig:
    n_items: int = 1000
    seed: int = 0
    mix: Tuple[float, float, float] = (0.527, 0.333, 0.140)


def _template_candidates(kg: KnowledgeGraph, tpl: Dict) -> List[Tuple[Dict[str, str], str]]:
    """Every instantiation whose mentioned entities admit exactly one
    satisfying assignment: (slot values, answer name) pairs."""
    built = build_query_tree(kg, tpl)
    if built is None:
        return []
    qtree, phs = built
    slots = template_slots(tpl)
    fact_slots = sorted({v for f in tpl["facts"] for v in _fact_refs(f) if v.startswith("@")})
    if slots != fact_slots:
        raise DataError(f"template {tpl['id']}: pattern slots {slots} != fact slots {fact_slots}")
    sols = enumerate_assignments(kg, qtree, limit=ENUM_CAP)
    if len(sols) >= ENUM_CAP:
        raise DataError(f"template {tpl['id']}: enumeration cap hit; the graph is too dense")
    groups: Dict[Tuple[int, ...], List[Dict[int, int]]] = {}
    for sol in sols:
        key = tuple(sol[phs[r].pid] for r in slots)
        groups.setdefault(key, []).append(sol)
    out = []
    for key, grp in groups.items():
        if len(grp) != 1:
            continue
        slot_values = {r: kg.entity_name(e) for r, e in zip(slots, key)}
        answer = kg.entity_name(grp[0][phs["?ans"].pid])
        # a question that names its own answer is no question
        if answer in slot_values.values():
            continue
        out.append((slot_values, answer))
    return out


def build_item(
    kg: KnowledgeGraph, tpl: Dict, slot_values: Dict[str, str], answer: str,
    item_id: str, gen,
) -> QaItem:
    variants = load_templates()["variants"]
    raw, marked, swaps = realize_question(tpl, slot_values, variants, gen)
    nl = derive_nl_tree(raw, marked)
    got = [len(f.items) for f in nl.facts_preorder()]
    want = [len(s) for s in tpl["labels"]]
    if got != want:
        raise DataError(f"template {tpl['id']}: item counts {got} do not match labels {want}")
    return QaItem(
        id=item_id,
        question=question_text(raw),
        tree=serialize(raw),
        gold_nl_tree=nl.to_json(),
        gold_kg_tree=gold_kg_tree_json(tpl, slot_values),
        links={name: name for name in slot_values.values()},
        answer=answer,
        n_facts=int(tpl["n_facts"]),
        gold_labels=list(tpl["labels"]),
        meta={"template": tpl["id"], "variants": swaps},
    )


def _largest_remainder(total: int, fracs: Sequence[float]) -> List[int]:
    s = float(sum(fracs))
    raw = [total * f / s for f in fracs]
    base = [int(math.floor(x)) for x in raw]
    order = sorted(range(len(fracs)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[: total - sum(base)]:
        base[i] += 1
    return base


def generate_dataset(kg: KnowledgeGraph, cfg: DataGenConfig) -> List[QaItem]:
    """Sample cfg.n_items questions; the mix fixes how many use one, two
    and three facts. Every item is answerable and its full assignment is
    unique. Deterministic for a given graph and seed."""
    tpls = load_templates()["templates"]
    buckets: Dict[int, List[Tuple[int, Dict]]] = {1: [], 2: [], 3: []}
    for gi, t in enumerate(tpls):
        nf = int(t["n_facts"])
        if nf not in buckets:
            raise DataError(f"template {t['id']}: unsupported fact count {nf}")
        buckets[nf].append((gi, t))
    targets = _largest_remainder(cfg.n_items, cfg.mix)

    items: List[QaItem] = []
    idx = 0
    for bi, bucket in enumerate((1, 2, 3)):
        streams: List[List] = []
        for gi, tpl in buckets[bucket]:
            cands = _template_candidates(kg, tpl)
            if not cands:
                continue
            perm = numkit.rng(cfg.seed * 1009 + gi).permutation(len(cands))
            streams.append([tpl, [cands[int(i)] for i in perm], 0])
        produced = 0
        while produced < targets[bi] and streams:
            for st in list(streams):
                if produced >= targets[bi]:
                    break
                tpl, cands, pos = st
                if pos >= len(cands):
                    streams.remove(st)
                    continue
                st[2] += 1
                slot_values, answer = cands[pos]
                g = numkit.rng(cfg.seed * 2_000_003 + idx)
                items.append(build_item(kg, tpl, slot_values, answer, f"q{idx:05d}", g))
                idx += 1
                produced += 1
        if produced < targets[bi]:
            raise DataError(
                f"only {produced} of {targets[bi]} {bucket}-fact questions are sampleable; "
                "generate a larger graph"
            )
    return items


# -- splits and io -------------------------------------------------------

SPLIT_NAMES = ("train", "valid", "test")


def split_dataset(
    items: Sequence[QaItem], seed: int, ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
) -> Dict[str, List[str]]:
    """Stratify by fact count, cut each stratum by largest remainder,
    then nudge stratum quotas until the global counts match the largest
    remainder split of the total."""
    strata: Dict[int, List[str]] = {}
    for it in items:
        strata.setdefault(it.n_facts, []).append(it.id)
    global_targets = _largest_remainder(len(items), ratios)
    gen = numkit.rng(seed)
    shuffled: Dict[int, List[str]] = {}
    quotas: Dict[int, List[int]] = {}
    for b in sorted(strata):
        ids = strata[b]
        perm = gen.permutation(len(ids))
        shuffled[b] = [ids[int(i)] for i in perm]
        quotas[b] = _largest_remainder(len(ids), ratios)

    def sums() -> List[int]:
        return [sum(quotas[b][j] for b in quotas) for j in range(3)]

    guard = 0
    while sums() != global_targets:
        guard += 1
        if guard > 1000:
            raise DataError("split reconciliation did not converge")
        cur = sums()
        over = next(j for j in range(3) if cur[j] > global_targets[j])
        under = next(j for j in range(3) if cur[j] < global_targets[j])
        donor = max(sorted(quotas), key=lambda s: quotas[s][over])
        quotas[donor][over] -= 1
        quotas[donor][under] += 1

    order = {it.id: i for i, it in enumerate(items)}
    out: Dict[str, List[str]] = {name: [] for name in SPLIT_NAMES}
    for b in sorted(strata):
        ids = shuffled[b]
        q0, q1, _ = quotas[b]
        out["train"].extend(ids[:q0])
        out["valid"].extend(ids[q0 : q0 + q1])
        out["test"].extend(ids[q0 + q1 :])
    for name in SPLIT_NAMES:
        out[name].sort(key=order.__getitem__)
    return out


def save_dataset(dir_path: str, items: Sequence[QaItem], splits: Dict[str, List[str]]) -> None:
    os.makedirs(dir_path, exist_ok=True)
    by_id = {it.id: it for it in items}
    for name in SPLIT_NAMES:
        with open(os.path.join(dir_path, f"{name}.jsonl"), "w", encoding="utf-8") as fh:
            for iid in splits[name]:
                fh.write(json.dumps(item_to_json(by_id[iid]), sort_keys=True) + "\n")
    manifest = {
        "counts": {name: len(splits[name]) for name in SPLIT_NAMES},
        "ids": {name: list(splits[name]) for name in SPLIT_NAMES},
    }
    with open(os.path.join(dir_path, "splits.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_items(path: str) -> List[QaItem]:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                items.append(item_from_json(json.loads(line)))
            except (json.JSONDecodeError, DataError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{ln}: bad item: {exc}") from exc
    return items


def load_dataset(dir_path: str) -> Dict[str, List[QaItem]]:
    out = {}
    for name in SPLIT_NAMES:
        path = os.path.join(dir_path, f"{name}.jsonl")
        if not os.path.exists(path):
            raise DataError(f"missing split file {path}")
        out[name] = load_items(path)
    return out


# -- training data extraction --------------------------------------------


def classifier_pairs(items: Sequence[QaItem]) -> List[Tuple[SynNode, NLFactTree]]:
    return [
        (parse_bracketed(it.tree), NLFactTree.from_json(it.gold_nl_tree)) for it in items
    ]


def labeler_examples(items: Sequence[QaItem]) -> List[Tuple[Tuple[str, ...], Tuple[str, ...]]]:
    """One (syntax label sequence, tag sequence) pair per gold fact."""
    out = []
    for it in items:
        nl = NLFactTree.from_json(it.gold_nl_tree)
        work = preprocess(parse_bracketed(it.tree))
        align_tree_leaves(nl, leaf_items(work))
        facts = nl.facts_preorder()
        if len(facts) != len(it.gold_labels):
            raise DataError(f"{it.id}: {len(facts)} facts but {len(it.gold_labels)} label strings")
        for f, tags in zip(facts, it.gold_labels):
            if len(f.items) != len(tags):
                raise DataError(f"{it.id}: tag string {tags!r} does not fit the fact")
            out.append((tuple(fact_label_sequence(f)), tuple(tags)))
    return out


# -- self checks ---------------------------------------------------------


def validate_templates(kg: KnowledgeGraph) -> List[str]:
    """Run every template end to end against the graph and verify the
    full gold path: the elimination walk reaches the gold fact tree,
    gold tags plus the synonym table ground it to the gold graph tree,
    and that tree pins down exactly one assignment with the stored
    answer. Returns the validated template ids; raises on any break."""
    matcher = RelationMatcher(build_default_table(kg, surface_relations()))
    checked = []
    for gi, tpl in enumerate(load_templates()["templates"]):
        tid = tpl["id"]
        cands = _template_candidates(kg, tpl)
        if not cands:
            raise DataError(f"{tid}: no sampleable instantiation in this graph")
        slot_values, answer = cands[0]
        it = build_item(kg, tpl, slot_values, answer, f"probe_{tid}", numkit.rng(gi))

        raw = parse_bracketed(it.tree)
        nl = NLFactTree.from_json(it.gold_nl_tree)
        if derive_gold_decisions(raw, nl) is None:
            raise DataError(f"{tid}: elimination walk cannot reach the gold fact tree")

        work = preprocess(raw)
        align_tree_leaves(nl, leaf_items(work))
        gold = KgFactTree.from_json(it.gold_kg_tree, kg)
        located = locate_tree(
            nl, kg, None, matcher, links=it.links,
            tags_override=[tuple(s) for s in it.gold_labels],
        )
        if located.signature(kg) != gold.signature(kg):
            raise DataError(
                f"{tid}: gold tags ground to {located.signature(kg)}, "
                f"expected {gold.signature(kg)}"
            )

        sols = enumerate_assignments(kg, gold, limit=2)
        if len(sols) != 1:
            raise DataError(f"{tid}: gold tree admits {len(sols)} assignments")
        ans_ph = answer_placeholder(gold)
        if kg.entity_name(sols[0][ans_ph.pid]) != it.answer:
            raise DataError(f"{tid}: gold tree resolves to a different answer")
        checked.append(tid)
    return checked
