"""Crop geometry read from the tracker's key=value config files.

The exporter shares config files with the tracker so exported crops line up
exactly with what the tracker would extract itself. Only the geometry keys
matter here; every other tracker tunable is accepted and ignored.
"""

from dataclasses import dataclass, field

from .errors import ParseError

_GEOMETRY_KEYS = ("padding", "patch_w", "patch_h")


@dataclass(frozen=True)
class Geometry:
    padding: float = 2.2
    patch_w: int = 240
    patch_h: int = 160
    explicit: frozenset = field(default_factory=frozenset)

    def validate(self) -> "Geometry":
        if self.padding <= 0:
            raise ParseError("padding must be positive")
        if self.patch_w <= 0 or self.patch_h <= 0:
            raise ParseError("patch dimensions must be positive")
        return self


def parse_geometry_text(text: str) -> Geometry:
    """Parse key=value lines ('#' comments and blanks ignored)."""
    values = {}
    seen = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {raw_line.strip()!r}", lineno)
        key, _, raw_value = line.partition("=")
        key = key.strip()
        if key not in _GEOMETRY_KEYS:
            continue            # a tracker tunable the exporter does not use
        seen.add(key)
        caster = float if key == "padding" else int
        try:
            values[key] = caster(raw_value.strip())
        except ValueError:
            raise ParseError(f"bad value for {key}: {raw_value.strip()!r}",
                             lineno) from None
    return Geometry(explicit=frozenset(seen), **values).validate()


def read_geometry(path: str | None) -> Geometry:
    if path is None:
        return Geometry()
    with open(path, "r", encoding="utf-8") as fh:
        return parse_geometry_text(fh.read())
