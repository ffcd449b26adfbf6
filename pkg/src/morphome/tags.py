"""Paradigm cell coordinates and the L-shaped cell inventory.

The paradigm space is present tense only: 2 moods x 3 persons x 2 numbers,
serialized UniMorph-style as ``V;<MOOD>;PRS;<PERSON>;<NUMBER>``.
"""

from __future__ import annotations

from dataclasses import dataclass

MOODS = ("IND", "SBJV")
PERSONS = (1, 2, 3)
NUMBERS = ("SG", "PL")


@dataclass(frozen=True)
class CellTag:
    """One mood x person x number coordinate of the 12-cell paradigm."""

    mood: str
    person: int
    number: str

    def __post_init__(self):
        if self.mood not in MOODS:
            raise ValueError(f"unknown mood {self.mood!r} (expected one of {MOODS})")
        if self.person not in PERSONS:
            raise ValueError(f"unknown person {self.person!r} (expected one of {PERSONS})")
        if self.number not in NUMBERS:
            raise ValueError(f"unknown number {self.number!r} (expected one of {NUMBERS})")

    def unimorph(self) -> str:
        """UniMorph serialization, e.g. ``V;IND;PRS;1;SG``."""
        return f"V;{self.mood};PRS;{self.person};{self.number}"

    @property
    def label(self) -> str:
        """Compact display form, e.g. ``1SG.IND``."""
        return f"{self.person}{self.number}.{self.mood}"

    @property
    def subtags(self) -> tuple[str, ...]:
        """The five whitespace-separated subtag tokens of the bundle."""
        return ("V", self.mood, "PRS", str(self.person), self.number)

    @classmethod
    def parse(cls, text: str) -> "CellTag":
        """Parse either the UniMorph form or the compact label form."""
        text = text.strip()
        if ";" in text:
            parts = text.split(";")
            if len(parts) != 5 or parts[0] != "V" or parts[2] != "PRS":
                raise ValueError(f"malformed cell tag {text!r}")
            _, mood, _, person, number = parts
        elif "." in text:
            coord, mood = text.split(".", 1)
            person, number = coord[0], coord[1:]
        else:
            raise ValueError(f"malformed cell tag {text!r}")
        try:
            return cls(mood=mood, person=int(person), number=number)
        except ValueError as exc:
            raise ValueError(f"malformed cell tag {text!r}: {exc}") from None

    def __str__(self) -> str:
        return self.unimorph()


# Display/iteration order follows the paradigm table: per mood, singulars
# then plurals, persons 1..3.
ALL_CELLS: tuple[CellTag, ...] = tuple(
    CellTag(mood=m, person=p, number=n) for m in MOODS for n in NUMBERS for p in PERSONS
)

# The L-shape: 1SG.IND plus every subjunctive cell (7 of 12).
L_CELLS: frozenset[CellTag] = frozenset(
    [CellTag("IND", 1, "SG")] + [c for c in ALL_CELLS if c.mood == "SBJV"]
)

# All distinct subtag tokens across the 12 bundles (9 of them).
ALL_SUBTAGS: tuple[str, ...] = ("V", "IND", "SBJV", "PRS", "1", "2", "3", "SG", "PL")


def canonical_pair(tag_a: CellTag, tag_b: CellTag) -> tuple[CellTag, CellTag]:
    """Fixed order for an unordered source-tag pair: lexicographic on the
    UniMorph serialization."""
    if tag_a == tag_b:
        raise ValueError(f"source tags must differ, got {tag_a} twice")
    if tag_a.unimorph() <= tag_b.unimorph():
        return tag_a, tag_b
    return tag_b, tag_a
