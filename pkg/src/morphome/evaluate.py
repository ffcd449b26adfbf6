"""Metrics: sequence and stem accuracy, per-cell paradigm-shape scores with
1-D k-means clustering, and nonce-verb evaluation with human comparison."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import (
    SuffixTable,
    default_suffix_table,
    extract_stem,
    strip_stress,
)
from .tags import ALL_CELLS, L_CELLS, CellTag

VOWELS = "aeiou"


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    """One decoded test item with enough context to score it every way."""

    lemma: str
    conj_class: str
    verb_class: str
    src1_tag: CellTag
    src2_tag: CellTag
    tgt_tag: CellTag
    gold: str
    pred: str

    def __post_init__(self):
        if self.verb_class not in ("L", "NL"):
            raise EvalError(f"{self.lemma}: bad verb_class {self.verb_class!r}")


PREDICTION_COLUMNS = (
    "lemma",
    "conj_class",
    "verb_class",
    "src1_tag",
    "src2_tag",
    "tgt_tag",
    "gold",
    "pred",
)


def make_records(instances, preds, classes: dict[str, tuple[str, str]]):
    """Zip decoded forms with their instances. classes maps lemma to
    (conj_class, verb_class)."""
    if len(instances) != len(preds):
        raise EvalError(f"{len(instances)} instances vs {len(preds)} predictions")
    out = []
    for inst, pred in zip(instances, preds):
        conj, vclass = classes[inst.lemma]
        out.append(
            PredictionRecord(
                lemma=inst.lemma,
                conj_class=conj,
                verb_class=vclass,
                src1_tag=inst.src1_tag,
                src2_tag=inst.src2_tag,
                tgt_tag=inst.tgt_tag,
                gold=inst.tgt_form,
                pred=pred,
            )
        )
    return out


def save_predictions(records, path, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for k, v in (meta or {}).items():
            f.write(f"# {k}={v}\n")
        f.write("\t".join(PREDICTION_COLUMNS) + "\n")
        for r in records:
            f.write(
                "\t".join(
                    (
                        r.lemma,
                        r.conj_class,
                        r.verb_class,
                        r.src1_tag.unimorph(),
                        r.src2_tag.unimorph(),
                        r.tgt_tag.unimorph(),
                        r.gold,
                        r.pred,
                    )
                )
                + "\n"
            )


def load_predictions(path) -> list[PredictionRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        header: list[str] | None = None
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split("\t")
                if tuple(header) != PREDICTION_COLUMNS:
                    raise EvalError(f"{path}:{lineno}: unexpected columns {header}")
                continue
            parts = line.split("\t")
            if len(parts) != len(PREDICTION_COLUMNS):
                raise EvalError(f"{path}:{lineno}: expected {len(PREDICTION_COLUMNS)} fields")
            lemma, conj, vclass, s1, s2, tgt, gold, pred = parts
            records.append(
                PredictionRecord(
                    lemma=lemma,
                    conj_class=conj,
                    verb_class=vclass,
                    src1_tag=CellTag.parse(s1),
                    src2_tag=CellTag.parse(s2),
                    tgt_tag=CellTag.parse(tgt),
                    gold=gold,
                    pred=pred,
                )
            )
    return records


def _grouped_mean(records, correct_fn, group_by: str) -> dict[str, float]:
    if not records:
        raise EvalError("no records to score")
    if group_by == "overall":
        keys = lambda r: ("overall",)
    elif group_by == "verb_class":
        keys = lambda r: (r.verb_class,)
    else:
        raise EvalError(f"unknown group_by {group_by!r}")
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for r in records:
        ok = correct_fn(r)
        for k in keys(r):
            totals[k] = totals.get(k, 0) + 1
            hits[k] = hits.get(k, 0) + ok
    # empty groups are simply absent, never reported as zero
    return {k: hits[k] / totals[k] for k in totals}


def sequence_accuracy(records, group_by: str = "overall") -> dict[str, float]:
    """Exact full-form match rate, grouped."""
    return _grouped_mean(records, lambda r: r.pred == r.gold, group_by)


def stem_correct(record: PredictionRecord, suffix_table: SuffixTable | None = None) -> bool:
    table = suffix_table or default_suffix_table()
    gold_stem, _ = extract_stem(record.gold, record.tgt_tag, record.conj_class, table)
    pred_stem, _ = extract_stem(record.pred, record.tgt_tag, record.conj_class, table)
    return gold_stem == pred_stem


def stem_accuracy(
    records, suffix_table: SuffixTable | None = None, group_by: str = "overall"
) -> dict[str, float]:
    """Suffix-stripped match rate: correct iff gold and prediction share a
    stem under the target cell's suffix inventory."""
    table = suffix_table or default_suffix_table()
    return _grouped_mean(records, lambda r: stem_correct(r, table), group_by)


def transform_score(cell: CellTag, raw: float) -> float:
    """Orient a raw cell accuracy so high always means L-stem production:
    kept on L-cells, inverted elsewhere."""
    return raw if cell in L_CELLS else 1.0 - raw


@dataclass
class CellScores:
    raw: dict[CellTag, float]
    transformed: dict[CellTag, float]
    counts: dict[CellTag, int]
    missing: tuple[CellTag, ...] = ()


def paradigm_shape(records, suffix_table: SuffixTable | None = None) -> CellScores:
    """Per-cell mean stem accuracy over all records, plus the oriented
    transform. Cells with no records land in .missing and carry no score."""
    table = suffix_table or default_suffix_table()
    hits = {c: 0 for c in ALL_CELLS}
    counts = {c: 0 for c in ALL_CELLS}
    for r in records:
        counts[r.tgt_tag] += 1
        hits[r.tgt_tag] += stem_correct(r, table)
    raw, transformed = {}, {}
    missing = []
    for c in ALL_CELLS:
        if counts[c] == 0:
            missing.append(c)
            continue
        raw[c] = hits[c] / counts[c]
        transformed[c] = transform_score(c, raw[c])
    return CellScores(
        raw=raw,
        transformed=transformed,
        counts={c: n for c, n in counts.items() if n},
        missing=tuple(missing),
    )


def aggregate_cell_scores(shapes: list[CellScores]) -> dict[CellTag, float]:
    """Mean transformed score per cell across runs; a cell missing from a
    run simply contributes nothing for that run."""
    sums: dict[CellTag, float] = {}
    ns: dict[CellTag, int] = {}
    for s in shapes:
        for c, v in s.transformed.items():
            sums[c] = sums.get(c, 0.0) + v
            ns[c] = ns.get(c, 0) + 1
    return {c: sums[c] / ns[c] for c in ALL_CELLS if c in sums}


@dataclass
class ClusterAssignment:
    labels: dict[CellTag, str]
    centroids: dict[str, float]
    degenerate: bool = False
    n_iter: int = 0


def _sse(points: list[float]) -> float:
    if not points:
        return 0.0
    mu = sum(points) / len(points)
    return sum((p - mu) ** 2 for p in points)


def kmeans_cells(scores: dict[CellTag, float]) -> ClusterAssignment:
    """Two-cluster 1-D k-means over per-cell scores.

    Lloyd's algorithm, centroids initialized at (min, max), distance ties
    resolved toward the lower centroid, iterated to an assignment fixpoint.
    A Lloyd fixpoint need not be the global 1-D optimum (e.g. scores
    0,4,5,6,11 converge to {0,4,5}/{6,11} with SSE 26.5 while
    {0,4,5,6}/{11} has 20.75), so the result is checked against every contiguous
    two-partition of the sorted scores and replaced by the best one when it
    loses. Equal scores are never separated. All-identical scores collapse
    to a single cluster, flagged degenerate. The cluster with the higher
    mean score is labeled L, the other NL.
    """
    if not scores:
        raise EvalError("no scores to cluster")
    for c, v in scores.items():
        if v != v or v in (float("inf"), float("-inf")):
            raise EvalError(f"non-finite score for {c.label}")
    cells = sorted(scores, key=lambda c: (scores[c], ALL_CELLS.index(c)))
    pts = [scores[c] for c in cells]
    if pts[0] == pts[-1]:
        return ClusterAssignment(
            labels={c: "L" for c in cells},
            centroids={"L": pts[0]},
            degenerate=True,
        )

    lo, hi = pts[0], pts[-1]
    assign = None
    n_iter = 0
    while True:
        n_iter += 1
        new = [1 if abs(p - hi) < abs(p - lo) else 0 for p in pts]
        if new == assign:
            break
        assign = new
        low_pts = [p for p, a in zip(pts, assign) if a == 0]
        hi_pts = [p for p, a in zip(pts, assign) if a == 1]
        if low_pts:
            lo = sum(low_pts) / len(low_pts)
        if hi_pts:
            hi = sum(hi_pts) / len(hi_pts)

    best_cut = None
    best_sse = float("inf")
    for i in range(1, len(pts)):
        if pts[i - 1] == pts[i]:
            continue
        s = _sse(pts[:i]) + _sse(pts[i:])
        if s < best_sse - 1e-15:
            best_sse, best_cut = s, i
    lloyd_sse = _sse([p for p, a in zip(pts, assign) if a == 0]) + _sse(
        [p for p, a in zip(pts, assign) if a == 1]
    )
    if lloyd_sse > best_sse + 1e-12:
        assign = [0] * best_cut + [1] * (len(pts) - best_cut)

    low_pts = [p for p, a in zip(pts, assign) if a == 0]
    hi_pts = [p for p, a in zip(pts, assign) if a == 1]
    labels = {c: ("L" if a else "NL") for c, a in zip(cells, assign)}
    centroids = {
        "NL": sum(low_pts) / len(low_pts),
        "L": sum(hi_pts) / len(hi_pts),
    }
    return ClusterAssignment(labels=labels, centroids=centroids, n_iter=n_iter)


def expected_label(cell: CellTag) -> str:
    return "L" if cell in L_CELLS else "NL"


def compare_expected(assignment: ClusterAssignment) -> list[CellTag]:
    """Cells whose cluster disagrees with the ideal L-shape split."""
    return [
        c
        for c in ALL_CELLS
        if c in assignment.labels and assignment.labels[c] != expected_label(c)
    ]


# Nonce-verb (wug) evaluation. The stimulus TSV carries one row per test
# item: lemma, conj_class, src1_tag, src1_form, src2_tag, src2_form,
# tgt_tag, expected_stem, ordering. Targets cover the three cells probed
# in the human task; expected_stem is the alternant attested in the item's
# L-cell source.

WUG_TARGET_CELLS = (
    CellTag("IND", 1, "SG"),
    CellTag("SBJV", 2, "SG"),
    CellTag("SBJV", 3, "SG"),
)

WUG_COLUMNS = (
    "lemma",
    "conj_class",
    "src1_tag",
    "src1_form",
    "src2_tag",
    "src2_form",
    "tgt_tag",
    "expected_stem",
    "ordering",
)


@dataclass(frozen=True)
class WugItem:
    lemma: str
    conj_class: str
    src1_form: str
    src1_tag: CellTag
    src2_form: str
    src2_tag: CellTag
    tgt_tag: CellTag
    expected_stem: str
    swapped: bool

    def __post_init__(self):
        if self.tgt_tag not in WUG_TARGET_CELLS:
            raise EvalError(
                f"{self.lemma}: target {self.tgt_tag.label} is not a wug test cell"
            )
        if self.src1_tag == self.src2_tag:
            raise EvalError(f"{self.lemma}: identical source tags")


def load_wug_items(path, suffix_table: SuffixTable | None = None) -> list[WugItem]:
    """Parse a stimulus TSV; every item is validated so that expected_stem
    is attested by one of its two sources."""
    table = suffix_table or default_suffix_table()
    items = []
    with open(path, encoding="utf-8") as f:
        header: list[str] | None = None
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split("\t")
                if tuple(header) != WUG_COLUMNS:
                    raise EvalError(f"{path}:{lineno}: unexpected columns {header}")
                continue
            parts = line.split("\t")
            if len(parts) != len(WUG_COLUMNS):
                raise EvalError(f"{path}:{lineno}: expected {len(WUG_COLUMNS)} fields")
            lemma, conj, t1, f1, t2, f2, tt, stem, ordering = parts
            if ordering not in ("given", "swapped"):
                raise EvalError(f"{path}:{lineno}: bad ordering {ordering!r}")
            try:
                item = WugItem(
                    lemma=lemma,
                    conj_class=conj,
                    src1_form=f1,
                    src1_tag=CellTag.parse(t1),
                    src2_form=f2,
                    src2_tag=CellTag.parse(t2),
                    tgt_tag=CellTag.parse(tt),
                    expected_stem=stem,
                    swapped=ordering == "swapped",
                )
            except (ValueError, EvalError) as exc:
                raise EvalError(f"{path}:{lineno}: {exc}") from None
            s1, _ = extract_stem(item.src1_form, item.src1_tag, conj, table)
            s2, _ = extract_stem(item.src2_form, item.src2_tag, conj, table)
            if stem not in (s1, s2):
                raise EvalError(
                    f"{path}:{lineno}: expected stem {stem!r} matches neither "
                    f"source stem ({s1!r}, {s2!r})"
                )
            items.append(item)
    return items


def save_wug_items(items: list[WugItem], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\t".join(WUG_COLUMNS) + "\n")
        for it in items:
            f.write(
                "\t".join(
                    (
                        it.lemma,
                        it.conj_class,
                        it.src1_tag.unimorph(),
                        it.src1_form,
                        it.src2_tag.unimorph(),
                        it.src2_form,
                        it.tgt_tag.unimorph(),
                        it.expected_stem,
                        "swapped" if it.swapped else "given",
                    )
                )
                + "\n"
            )


def stems_match_relaxed(a: str, b: str) -> bool:
    """Stem equality modulo stress marks and a single vowel-quality swap.
    This is an interpretation: the strict matcher is the default and both
    get reported."""
    a, b = strip_stress(a), strip_stress(b)
    if a == b:
        return True
    if len(a) != len(b):
        return False
    diffs = [(x, y) for x, y in zip(a, b) if x != y]
    return len(diffs) == 1 and diffs[0][0] in VOWELS and diffs[0][1] in VOWELS


MATCHERS = ("exact_form", "stem", "stem_relaxed")


def wug_item_correct(
    item: WugItem,
    pred: str,
    matcher: str = "stem",
    suffix_table: SuffixTable | None = None,
) -> bool:
    table = suffix_table or default_suffix_table()
    if matcher == "exact_form":
        expected = item.expected_stem + table.canonical_suffix(
            item.conj_class, item.tgt_tag
        )
        return pred == expected
    pred_stem, _ = extract_stem(pred, item.tgt_tag, item.conj_class, table)
    if matcher == "stem":
        return pred_stem == item.expected_stem
    if matcher == "stem_relaxed":
        return stems_match_relaxed(pred_stem, item.expected_stem)
    raise EvalError(f"unknown matcher {matcher!r} (expected one of {MATCHERS})")


@dataclass
class WugReport:
    matcher: str
    overall: float
    per_cell: dict[CellTag, float]
    n_items: int
    predictions: list[str] = field(default_factory=list)


def score_wug_predictions(
    items: list[WugItem],
    preds: list[str],
    matcher: str = "stem",
    suffix_table: SuffixTable | None = None,
) -> WugReport:
    if len(items) != len(preds):
        raise EvalError(f"{len(items)} items vs {len(preds)} predictions")
    if not items:
        raise EvalError("no wug items")
    table = suffix_table or default_suffix_table()
    hits: dict[CellTag, int] = {}
    counts: dict[CellTag, int] = {}
    total = 0
    for item, pred in zip(items, preds):
        ok = wug_item_correct(item, pred, matcher, table)
        counts[item.tgt_tag] = counts.get(item.tgt_tag, 0) + 1
        hits[item.tgt_tag] = hits.get(item.tgt_tag, 0) + ok
        total += ok
    per_cell = {c: hits[c] / counts[c] for c in WUG_TARGET_CELLS if c in counts}
    return WugReport(
        matcher=matcher,
        overall=total / len(items),
        per_cell=per_cell,
        n_items=len(items),
        predictions=list(preds),
    )


def wug_evaluate(
    model,
    vocab,
    items: list[WugItem],
    matcher: str = "stem",
    suffix_table: SuffixTable | None = None,
    beam_size: int = 5,
    max_len: int = 40,
) -> WugReport:
    """Decode every stimulus item (beam top-1) and score it per matcher."""
    from .train import predict_instances

    preds = predict_instances(model, vocab, items, beam_size=beam_size, max_len=max_len)
    return score_wug_predictions(items, preds, matcher, suffix_table)


# Human wug responses arrive as a TSV of (participant, verb, cell,
# response_form, retained_flag); only retained rows are scored.

HUMAN_COLUMNS = ("participant", "verb", "cell", "response_form", "retained")


@dataclass(frozen=True)
class HumanResponse:
    participant: str
    verb: str
    cell: CellTag
    response_form: str
    retained: bool


def load_human_responses(path) -> list[HumanResponse]:
    rows = []
    with open(path, encoding="utf-8") as f:
        header: list[str] | None = None
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split("\t")
                if tuple(header) != HUMAN_COLUMNS:
                    raise EvalError(f"{path}:{lineno}: unexpected columns {header}")
                continue
            parts = line.split("\t")
            if len(parts) != len(HUMAN_COLUMNS):
                raise EvalError(f"{path}:{lineno}: expected {len(HUMAN_COLUMNS)} fields")
            participant, verb, cell, form, retained = parts
            if retained not in ("0", "1"):
                raise EvalError(f"{path}:{lineno}: retained must be 0 or 1")
            rows.append(
                HumanResponse(
                    participant=participant,
                    verb=verb,
                    cell=CellTag.parse(cell),
                    response_form=form,
                    retained=retained == "1",
                )
            )
    return rows


def human_cell_accuracy(
    responses: list[HumanResponse],
    items: list[WugItem],
    matcher: str = "stem_relaxed",
    suffix_table: SuffixTable | None = None,
) -> dict[CellTag, float]:
    """Score retained human responses against the stimulus expectations,
    giving per-cell means comparable with model wug reports."""
    table = suffix_table or default_suffix_table()
    by_key: dict[tuple[str, CellTag], WugItem] = {}
    for it in items:
        by_key.setdefault((it.lemma, it.tgt_tag), it)
    hits: dict[CellTag, int] = {}
    counts: dict[CellTag, int] = {}
    for r in responses:
        if not r.retained:
            continue
        item = by_key.get((r.verb, r.cell))
        if item is None:
            raise EvalError(f"response for unknown stimulus ({r.verb}, {r.cell.label})")
        ok = wug_item_correct(item, r.response_form, matcher, table)
        counts[r.cell] = counts.get(r.cell, 0) + 1
        hits[r.cell] = hits.get(r.cell, 0) + ok
    return {c: hits[c] / counts[c] for c in WUG_TARGET_CELLS if c in counts}


# Report CSVs. Every file starts with "# key=value" comment lines carrying
# at minimum the config hash of the run or aggregate it was built from.

def write_report_csv(path, fieldnames, rows, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for k, v in (meta or {}).items():
            f.write(f"# {k}={v}\n")
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_report_csv(path) -> tuple[dict, list[dict]]:
    meta: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        lines = f.readlines()
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
            body_start = i + 1
        else:
            break
    rows = list(csv.DictReader(lines[body_start:]))
    return meta, rows


def mean_sd(values: list[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0.0 for a single value)."""
    n = len(values)
    if n == 0:
        raise EvalError("no values")
    mu = sum(values) / n
    if n == 1:
        return mu, 0.0
    var = sum((v - mu) ** 2 for v in values) / (n - 1)
    return mu, var**0.5
