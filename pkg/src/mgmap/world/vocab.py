"""Instruction vocabulary and the fixed template grammar."""
from __future__ import annotations

from dataclasses import dataclass

WALL_CATEGORY = 0
CATEGORY_NAMES = ("wall", "chair", "table", "sofa", "bed", "plant", "cabinet", "monitor")
# larger naming preset for configurations with more categories
CATEGORY_PRESET_27 = (
    "wall", "chair", "door", "table", "picture", "cabinet", "cushion", "window", "sofa", "bed",
    "curtain", "chest", "plant", "sink", "stairs", "ceiling", "toilet", "stool", "towel", "mirror",
    "monitor", "shower", "column", "bathtub", "counter", "fireplace", "lighting",
)
COLORS = ("red", "green", "blue")
MATERIALS = ("wooden", "metal")
GRAMMAR = ("go", "past", "the", "and", "then", "stop", "near")
PAD = "<pad>"


def category_names(k: int) -> tuple[str, ...]:
    if k <= len(CATEGORY_NAMES):
        return CATEGORY_NAMES[:k]
    if k <= len(CATEGORY_PRESET_27):
        return CATEGORY_PRESET_27[:k]
    return CATEGORY_PRESET_27 + tuple(f"thing{i}" for i in range(len(CATEGORY_PRESET_27), k))


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != PAD:
            raise ValueError("token 0 must be the padding token")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens")

    @classmethod
    def build(cls, n_categories: int = 8) -> "Vocab":
        words = [PAD, *GRAMMAR, *COLORS, *MATERIALS]
        words += [w for w in category_names(n_categories) if w not in words]
        return cls(tuple(words))

    @property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        idx = self.index
        try:
            return [idx[w] for w in text.split()]
        except KeyError as exc:
            raise ValueError(f"word {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids if i != 0)


def landmark_phrase(color: str, material: str, category: str) -> str:
    return f"the {color} {material} {category}"


def instruction_text(passed: list[tuple[str, str, str]], final: tuple[str, str, str]) -> str:
    """``go past the <attr> <cat> [and the ...] then stop near the <attr> <cat>``."""
    parts = ["go past " + " and ".join(landmark_phrase(*p) for p in passed)] if passed else ["go"]
    return " ".join(parts) + " then stop near " + landmark_phrase(*final)
