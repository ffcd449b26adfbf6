"""Verb paradigms: loading, L/NL classification, frequency-conditioned
sampling, lemma-disjoint splits, and re-inflection triple generation.

A paradigm is a lemma plus a total map from the 12 present-tense cells to
surface forms (broad IPA strings). A verb is L-shaped when the 1SG.IND stem
matches every subjunctive stem while differing from the five remaining
indicative stems.
"""

from __future__ import annotations

import csv
import math
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .tags import ALL_CELLS, L_CELLS, CellTag, canonical_pair
from .util import derive_seed, rng_for

CONJ_CLASSES = ("AR", "ER", "IR")
L, NL = "L", "NL"

# Characters ignored when matching suffixes against form endings.
STRESS_MARKS = ("ˈ", "ˌ", "́", "̀", "´", "'")


class CorpusError(ValueError):
    """Raised for malformed paradigm/suffix data."""


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def strip_stress(s: str) -> str:
    s = unicodedata.normalize("NFD", s)
    return "".join(ch for ch in s if ch not in STRESS_MARKS)


def infer_conj_class(lemma: str) -> str:
    stripped = strip_stress(lemma)
    for ending, cls in (("ar", "AR"), ("er", "ER"), ("ir", "IR"),
                        ("aɾ", "AR"), ("eɾ", "ER"), ("iɾ", "IR")):
        if stripped.endswith(ending):
            return cls
    raise CorpusError(f"cannot infer conjugation class from lemma {lemma!r}")


class SuffixTable:
    """Ordered candidate suffixes per (conjugation class, cell)."""

    def __init__(self, entries: dict[tuple[str, CellTag], list[str]]):
        self._by_cell = {k: list(v) for k, v in entries.items()}
        self._by_class: dict[str, list[str]] = {}
        for (cls, _), suffixes in self._by_cell.items():
            inv = self._by_class.setdefault(cls, [])
            for s in suffixes:
                if s not in inv:
                    inv.append(s)

    def candidates(self, conj_class: str, cell: CellTag) -> list[str]:
        return self._by_cell.get((conj_class, cell), [])

    def class_inventory(self, conj_class: str) -> list[str]:
        return self._by_class.get(conj_class, [])

    def canonical_suffix(self, conj_class: str, cell: CellTag) -> str:
        cands = self.candidates(conj_class, cell)
        if not cands:
            raise CorpusError(f"no suffix for ({conj_class}, {cell.label})")
        return cands[0]

    @classmethod
    def load(cls, path) -> "SuffixTable":
        entries: dict[tuple[str, CellTag], list[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise CorpusError(f"{path}:{lineno}: expected 3 columns, got {len(parts)}")
                cls_name, tag_text, suffix = (p.strip() for p in parts)
                if cls_name not in CONJ_CLASSES:
                    raise CorpusError(f"{path}:{lineno}: unknown class {cls_name!r}")
                try:
                    cell = CellTag.parse(tag_text)
                except ValueError as exc:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from None
                entries.setdefault((cls_name, cell), []).append(suffix)
        return cls(entries)

    @classmethod
    def default(cls) -> "SuffixTable":
        ref = resources.files("morphome.data").joinpath("suffixes_es.tsv")
        with resources.as_file(ref) as path:
            return cls.load(path)

    def save(self, path) -> None:
        lines = []
        for (cls_name, cell), suffixes in sorted(
            self._by_cell.items(), key=lambda kv: (kv[0][0], kv[0][1].unimorph())
        ):
            for s in suffixes:
                lines.append(f"{cls_name}\t{cell.unimorph()}\t{s}")
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_DEFAULT_TABLE: SuffixTable | None = None


def default_suffix_table() -> SuffixTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = SuffixTable.default()
    return _DEFAULT_TABLE


def _match_suffix(form: str, suffix: str) -> str | None:
    """Longest literal tail of `form` equal to `suffix` up to stress marks.

    Returns the literal tail (so stem + tail == form) or None.
    """
    target = strip_stress(suffix)
    # Scan tails longest-first so leading stress marks join the suffix, not
    # the stem (a plain endswith check would leave them on the stem).
    for k in range(len(form), 0, -1):
        tail = form[len(form) - k:]
        if strip_stress(tail) == target:
            return tail
    return None


def extract_stem(
    form: str,
    cell: CellTag,
    conj_class: str,
    suffix_table: SuffixTable | None = None,
) -> tuple[str, bool]:
    """Strip the conjugation suffix from a form.

    Tries the cell-specific candidates first (longest match wins), then any
    suffix in the class inventory, and finally falls back to returning the
    whole form with matched=False.
    """
    table = suffix_table or default_suffix_table()
    best: str | None = None
    for cand in table.candidates(conj_class, cell):
        tail = _match_suffix(form, cand)
        if tail is not None and (best is None or len(tail) > len(best)):
            best = tail
    if best is None:
        for cand in table.class_inventory(conj_class):
            tail = _match_suffix(form, cand)
            if tail is not None and (best is None or len(tail) > len(best)):
                best = tail
    if best is None:
        return form, False
    return form[: len(form) - len(best)], True


@dataclass(frozen=True)
class Paradigm:
    """A lemma with its conjugation class and total 12-cell form map."""

    lemma: str
    conj_class: str
    forms: dict[CellTag, str]

    def __post_init__(self):
        if self.conj_class not in CONJ_CLASSES:
            raise CorpusError(f"{self.lemma}: bad conjugation class {self.conj_class!r}")
        missing = [c for c in ALL_CELLS if c not in self.forms]
        if missing:
            raise CorpusError(
                f"{self.lemma}: missing cells {', '.join(c.label for c in missing)}"
            )
        extra = set(self.forms) - set(ALL_CELLS)
        if extra:
            raise CorpusError(f"{self.lemma}: unknown cells {sorted(str(c) for c in extra)}")
        empty = [c.label for c in ALL_CELLS if not self.forms[c]]
        if empty:
            raise CorpusError(f"{self.lemma}: empty forms at {', '.join(empty)}")

    def stems(self, suffix_table: SuffixTable | None = None) -> dict[CellTag, str]:
        return {
            c: extract_stem(self.forms[c], c, self.conj_class, suffix_table)[0]
            for c in ALL_CELLS
        }


def classify_verb(paradigm: Paradigm, suffix_table: SuffixTable | None = None) -> str:
    """L iff the 1SG.IND stem equals all six subjunctive stems and differs
    from each of the five remaining indicative stems."""
    stems = paradigm.stems(suffix_table)
    pivot = stems[CellTag("IND", 1, "SG")]
    for cell in ALL_CELLS:
        if cell.mood == "SBJV" and stems[cell] != pivot:
            return NL
        if cell.mood == "IND" and cell != CellTag("IND", 1, "SG") and stems[cell] == pivot:
            return NL
    return L


def load_paradigms(path, format: str = "tsv", diagnostics: list | None = None) -> list[Paradigm]:
    """Read a paradigm TSV (lemma, conj_class, cell_tag, form; class column
    may be empty, in which case it is inferred from the lemma ending).

    Lemmas with missing cells are rejected with a diagnostic (collected into
    `diagnostics` if given, else dropped silently into the log of the caller);
    duplicate (lemma, cell) rows and malformed tags raise CorpusError.
    """
    if format != "tsv":
        raise CorpusError(f"unsupported paradigm format {format!r}")
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"paradigm file not found: {path}")

    rows: dict[str, dict[CellTag, str]] = {}
    classes: dict[str, str] = {}
    order: list[str] = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        for lineno, parts in enumerate(reader, start=1):
            if not parts or (len(parts) == 1 and not parts[0].strip()):
                continue
            if parts[0].lstrip().startswith("#"):
                continue
            if len(parts) not in (3, 4):
                raise CorpusError(f"{path}:{lineno}: expected 3 or 4 columns, got {len(parts)}")
            if len(parts) == 4:
                lemma, cls_name, tag_text, form = (p.strip() for p in parts)
            else:
                lemma, tag_text, form = (p.strip() for p in parts)
                cls_name = ""
            try:
                cell = CellTag.parse(tag_text)
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            cls_name = cls_name or infer_conj_class(lemma)
            if cls_name not in CONJ_CLASSES:
                raise CorpusError(f"{path}:{lineno}: unknown class {cls_name!r}")
            if lemma in classes and classes[lemma] != cls_name:
                raise CorpusError(f"{path}:{lineno}: {lemma}: inconsistent class")
            if lemma not in rows:
                rows[lemma] = {}
                order.append(lemma)
            if cell in rows[lemma]:
                raise CorpusError(f"{path}:{lineno}: duplicate cell {cell.label} for {lemma}")
            rows[lemma][cell] = form
            classes[lemma] = cls_name

    paradigms = []
    for lemma in order:
        forms = rows[lemma]
        missing = [c for c in ALL_CELLS if c not in forms]
        if missing:
            msg = f"{lemma}: rejected, missing cells {', '.join(c.label for c in missing)}"
            if diagnostics is not None:
                diagnostics.append(msg)
            continue
        try:
            paradigms.append(Paradigm(lemma, classes[lemma], forms))
        except CorpusError as exc:
            if diagnostics is not None:
                diagnostics.append(f"{lemma}: rejected, {exc}")
            else:
                raise
    return paradigms


def save_paradigms(paradigms: list[Paradigm], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        for p in paradigms:
            for cell in ALL_CELLS:
                writer.writerow([p.lemma, p.conj_class, cell.unimorph(), p.forms[cell]])


@dataclass(frozen=True)
class ReinflectionInstance:
    """Two (form, tag) sources plus a target tag and its gold form."""

    lemma: str
    src1_form: str
    src1_tag: CellTag
    src2_form: str
    src2_tag: CellTag
    tgt_tag: CellTag
    tgt_form: str

    def __post_init__(self):
        if self.src1_tag == self.src2_tag:
            raise CorpusError(f"{self.lemma}: identical source tags {self.src1_tag.label}")
        if self.tgt_tag in (self.src1_tag, self.src2_tag):
            raise CorpusError(f"{self.lemma}: target {self.tgt_tag.label} is also a source")
        if self.src1_tag.unimorph() > self.src2_tag.unimorph():
            raise CorpusError(
                f"{self.lemma}: sources not canonically ordered "
                f"({self.src1_tag.label} > {self.src2_tag.label})"
            )

    def key(self) -> tuple[str, str, str]:
        return (self.src1_tag.unimorph(), self.src2_tag.unimorph(), self.tgt_tag.unimorph())

    def swapped_sources(self) -> "ReinflectionInstance":
        """The same item with source display order flipped (used for wug
        ordering variants; bypasses canonical-order validation)."""
        inst = object.__new__(ReinflectionInstance)
        object.__setattr__(inst, "lemma", self.lemma)
        object.__setattr__(inst, "src1_form", self.src2_form)
        object.__setattr__(inst, "src1_tag", self.src2_tag)
        object.__setattr__(inst, "src2_form", self.src1_form)
        object.__setattr__(inst, "src2_tag", self.src1_tag)
        object.__setattr__(inst, "tgt_tag", self.tgt_tag)
        object.__setattr__(inst, "tgt_form", self.tgt_form)
        return inst


def generate_triples(paradigm: Paradigm) -> list[ReinflectionInstance]:
    """All C(12,2) x 10 = 660 (unordered source pair, target) triples."""
    out = []
    cells = sorted(ALL_CELLS, key=lambda c: c.unimorph())
    for i, a in enumerate(cells):
        for b in cells[i + 1:]:
            s1, s2 = canonical_pair(a, b)
            for tgt in ALL_CELLS:
                if tgt in (a, b):
                    continue
                out.append(
                    ReinflectionInstance(
                        lemma=paradigm.lemma,
                        src1_form=paradigm.forms[s1],
                        src1_tag=s1,
                        src2_form=paradigm.forms[s2],
                        src2_tag=s2,
                        tgt_tag=tgt,
                        tgt_form=paradigm.forms[tgt],
                    )
                )
    return out


def subsample_triples(
    instances: list[ReinflectionInstance],
    fraction: float = 0.25,
    seed: int = 0,
    per_lemma: bool = True,
) -> list[ReinflectionInstance]:
    """Uniform subsample without replacement, by default per lemma.

    Deterministic in (instance set, seed): each lemma's draw uses a seed
    derived from (seed, lemma), so it does not depend on the other lemmas.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return list(instances)

    by_lemma: dict[str, list[ReinflectionInstance]] = {}
    for inst in instances:
        by_lemma.setdefault(inst.lemma, []).append(inst)

    if not per_lemma:
        pool = sorted(instances, key=lambda i: (i.lemma,) + i.key())
        n_keep = _round_half_up(len(pool) * fraction)
        idx = rng_for(seed, "global").permutation(len(pool))[:n_keep]
        return [pool[i] for i in sorted(idx)]

    out = []
    for lemma in sorted(by_lemma):
        group = sorted(by_lemma[lemma], key=lambda i: i.key())
        n_keep = _round_half_up(len(group) * fraction)
        idx = rng_for(seed, lemma).permutation(len(group))[:n_keep]
        out.extend(group[i] for i in sorted(idx))
    return out


def sample_condition(
    pool: list[Paradigm],
    l_fraction: float,
    total: int = 332,
    seed: int = 0,
    suffix_table: SuffixTable | None = None,
) -> list[str]:
    """Sample `total` lemmas with round(l_fraction * total) L-shaped ones,
    uniformly without replacement. Returns sorted lemmas."""
    n_l = _round_half_up(l_fraction * total)
    n_nl = total - n_l
    table = suffix_table or default_suffix_table()
    l_pool = sorted(p.lemma for p in pool if classify_verb(p, table) == L)
    nl_pool = sorted(p.lemma for p in pool if classify_verb(p, table) == NL)
    if len(l_pool) < n_l:
        raise CorpusError(f"need {n_l} L-shaped lemmas, pool has {len(l_pool)}")
    if len(nl_pool) < n_nl:
        raise CorpusError(f"need {n_nl} NL-shaped lemmas, pool has {len(nl_pool)}")
    rng = rng_for(seed, "condition", l_fraction, total)
    picked_l = [l_pool[i] for i in rng.permutation(len(l_pool))[:n_l]]
    picked_nl = [nl_pool[i] for i in rng.permutation(len(nl_pool))[:n_nl]]
    return sorted(picked_l + picked_nl)


@dataclass(frozen=True)
class SplitSpec:
    """Lemma-disjoint train/dev/test partition for one condition."""

    condition: float
    train: tuple[str, ...]
    dev: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def __post_init__(self):
        sets = [set(self.train), set(self.dev), set(self.test)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise CorpusError("split parts are not disjoint")

    def to_json(self) -> dict:
        return {
            "condition": self.condition,
            "train": list(self.train),
            "dev": list(self.dev),
            "test": list(self.test),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SplitSpec":
        return cls(
            condition=obj["condition"],
            train=tuple(obj["train"]),
            dev=tuple(obj["dev"]),
            test=tuple(obj["test"]),
            seed=obj["seed"],
        )


def _largest_remainder(quotas: list[float], total: int) -> list[int]:
    base = [int(math.floor(q)) for q in quotas]
    rem = total - sum(base)
    order = sorted(range(len(quotas)), key=lambda i: (quotas[i] - base[i]), reverse=True)
    for i in order[:rem]:
        base[i] += 1
    return base


def split_lemmas(
    lemmas: list[str],
    classes: dict[str, str],
    ratios: tuple[float, float, float] = (0.70, 0.10, 0.20),
    seed: int = 0,
    condition: float | None = None,
) -> SplitSpec:
    """Class-stratified lemma-disjoint split.

    Split sizes: train = floor(r_train * n), test = floor(r_test * n),
    dev takes the remainder (332 -> 232/34/66).
    Each class is then apportioned across the three splits by largest
    remainder, keeping the L:NL ratio within one lemma everywhere.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    n = len(lemmas)
    n_train = int(math.floor(ratios[0] * n))
    n_test = int(math.floor(ratios[2] * n))
    n_dev = n - n_train - n_test
    sizes = [n_train, n_dev, n_test]

    missing = [lem for lem in lemmas if lem not in classes]
    if missing:
        raise CorpusError(f"no class for lemmas: {missing[:5]}")

    l_lemmas = sorted(lem for lem in lemmas if classes[lem] == L)
    nl_lemmas = sorted(lem for lem in lemmas if classes[lem] == NL)
    l_counts = _largest_remainder([s * len(l_lemmas) / n for s in sizes], len(l_lemmas))
    nl_counts = [sizes[i] - l_counts[i] for i in range(3)]
    if any(c < 0 for c in nl_counts):
        raise CorpusError("class apportionment failed (negative NL count)")

    rng = rng_for(seed, "split")
    l_shuffled = [l_lemmas[i] for i in rng.permutation(len(l_lemmas))]
    nl_shuffled = [nl_lemmas[i] for i in rng.permutation(len(nl_lemmas))]

    parts: list[list[str]] = []
    li = ni = 0
    for k in range(3):
        part = l_shuffled[li:li + l_counts[k]] + nl_shuffled[ni:ni + nl_counts[k]]
        li += l_counts[k]
        ni += nl_counts[k]
        parts.append(sorted(part))

    cond = condition if condition is not None else len(l_lemmas) / n
    return SplitSpec(
        condition=cond,
        train=tuple(parts[0]),
        dev=tuple(parts[1]),
        test=tuple(parts[2]),
        seed=seed,
    )


@dataclass(frozen=True)
class RunSpec:
    """One training run: a lemma split plus a triple-subsample seed."""

    split: SplitSpec
    subsample_seed: int
    triple_fraction: float = 0.25
    variant: str = "VANILLA"

    def run_id(self) -> str:
        return f"s{self.split.seed}_u{self.subsample_seed}"

    def to_json(self) -> dict:
        return {
            "split": self.split.to_json(),
            "subsample_seed": self.subsample_seed,
            "triple_fraction": self.triple_fraction,
            "variant": self.variant,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunSpec":
        return cls(
            split=SplitSpec.from_json(obj["split"]),
            subsample_seed=obj["subsample_seed"],
            triple_fraction=obj["triple_fraction"],
            variant=obj["variant"],
        )


@dataclass
class AlternationSpec:
    """Recipe for synthesizing paradigms with a controllable L-alternation.

    The L rule is either an insertion (L-cell stem = stem + insert) or a
    stem-final consonant map (used for nonce stimuli with novel alternations).
    """

    consonants: str = "ptkbdmnsfl"
    vowels: str = "aeiou"
    insert: str | None = "g"
    final_map: dict[str, str] | None = None
    stem_len: tuple[int, int] = (3, 6)
    classes: tuple[str, ...] = CONJ_CLASSES
    suffix_table: SuffixTable | None = None

    def table(self) -> SuffixTable:
        return self.suffix_table or default_suffix_table()

    def l_stem(self, stem: str) -> str:
        if self.final_map is not None:
            last = stem[-1]
            if last not in self.final_map:
                raise ValueError(f"stem {stem!r} final {last!r} not in alternation map")
            return stem[:-1] + self.final_map[last]
        if self.insert:
            return stem + self.insert
        raise ValueError("alternation spec has neither insert nor final_map")


def _random_stem(rng: np.random.Generator, spec: AlternationSpec) -> str:
    lo, hi = spec.stem_len
    length = int(rng.integers(lo, hi + 1))
    cons = spec.consonants
    vows = spec.vowels
    finals = [c for c in cons if c != (spec.insert or "")]
    if spec.final_map is not None:
        finals = [c for c in finals if c in spec.final_map]
    chars = []
    for i in range(length - 1):
        bank = cons if i % 2 == 0 else vows
        chars.append(bank[int(rng.integers(len(bank)))])
    chars.append(finals[int(rng.integers(len(finals)))])
    # A stem like "ta" + final would end CC when length is even; that's fine
    # for the broad-IPA toy language, but avoid vowel-final stems so suffix
    # boundaries stay unambiguous.
    return "".join(chars)


def _build_paradigm(lemma: str, stem: str, conj_class: str, shaped: bool,
                    spec: AlternationSpec) -> Paradigm:
    table = spec.table()
    alt = spec.l_stem(stem) if shaped else stem
    forms = {}
    for cell in ALL_CELLS:
        base = alt if (shaped and cell in L_CELLS) else stem
        forms[cell] = base + table.canonical_suffix(conj_class, cell)
    return Paradigm(lemma, conj_class, forms)


def synthesize_paradigms(
    n_l: int,
    n_nl: int,
    alternation_spec: AlternationSpec | None = None,
    seed: int = 0,
) -> list[Paradigm]:
    """Generate n_l L-shaped and n_nl NL-shaped paradigms that round-trip
    through classify_verb."""
    spec = alternation_spec or AlternationSpec()
    table = spec.table()
    rng = np.random.default_rng(derive_seed(seed, "synthesize"))
    out: list[Paradigm] = []
    seen: set[str] = set()
    want = [(True, n_l), (False, n_nl)]
    for shaped, count in want:
        made = 0
        attempts = 0
        while made < count:
            attempts += 1
            if attempts > 200 * max(count, 1):
                raise CorpusError("stem sampling stalled; enlarge the alphabet or lengths")
            stem = _random_stem(rng, spec)
            conj_class = spec.classes[int(rng.integers(len(spec.classes)))]
            lemma = stem + conj_class[0].lower() + "r"
            if lemma in seen:
                continue
            p = _build_paradigm(lemma, stem, conj_class, shaped, spec)
            got = classify_verb(p, table)
            if got != (L if shaped else NL):
                continue  # rare boundary collision; resample
            seen.add(lemma)
            out.append(p)
            made += 1
    return out
