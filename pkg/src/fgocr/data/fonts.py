"""Font groups and the Gothic/Roman super-groups."""

from __future__ import annotations

import enum


class FontGroup(enum.IntEnum):
    ANTIQUA = 0
    BASTARDA = 1
    FRAKTUR = 2
    GOTICO_ANTIQUA = 3
    ITALIC = 4
    ROTUNDA = 5
    SCHWABACHER = 6
    TEXTURA = 7

    @property
    def label(self) -> str:
        return _NAMES[self]

    @property
    def short(self) -> str:
        return _SHORT[self]

    @classmethod
    def parse(cls, name: "str | int | FontGroup") -> "FontGroup":
        if isinstance(name, FontGroup):
            return name
        if isinstance(name, int):
            return cls(name)
        key = name.strip().lower().replace("_", "-").replace(" ", "-").rstrip(".")
        for g in cls:
            if key in (_NAMES[g].lower(), _SHORT[g].lower().rstrip("."), g.name.lower().replace("_", "-")):
                return g
        raise ValueError(f"unknown font group {name!r}")


_NAMES = {
    FontGroup.ANTIQUA: "Antiqua",
    FontGroup.BASTARDA: "Bastarda",
    FontGroup.FRAKTUR: "Fraktur",
    FontGroup.GOTICO_ANTIQUA: "Gotico-Antiqua",
    FontGroup.ITALIC: "Italic",
    FontGroup.ROTUNDA: "Rotunda",
    FontGroup.SCHWABACHER: "Schwabacher",
    FontGroup.TEXTURA: "Textura",
}

_SHORT = {
    FontGroup.ANTIQUA: "Ant.",
    FontGroup.BASTARDA: "Bas.",
    FontGroup.FRAKTUR: "Fra.",
    FontGroup.GOTICO_ANTIQUA: "G.-A.",
    FontGroup.ITALIC: "Ita.",
    FontGroup.ROTUNDA: "Rot.",
    FontGroup.SCHWABACHER: "Schw.",
    FontGroup.TEXTURA: "Tex.",
}

GOTHIC = frozenset(
    {FontGroup.BASTARDA, FontGroup.FRAKTUR, FontGroup.ROTUNDA, FontGroup.SCHWABACHER, FontGroup.TEXTURA}
)
ROMAN = frozenset({FontGroup.ITALIC, FontGroup.ANTIQUA})

# Fine-tuning set for the extended Gotico-Antiqua model: its own lines plus
# the two groups judged visually closest.
GOTICO_ANTIQUA_PLUS = (FontGroup.GOTICO_ANTIQUA, FontGroup.ANTIQUA, FontGroup.ROTUNDA)


def super_group(group: FontGroup) -> str | None:
    """``"gothic"``, ``"roman"`` or None (Gotico-Antiqua belongs to neither)."""
    if group in GOTHIC:
        return "gothic"
    if group in ROMAN:
        return "roman"
    return None
