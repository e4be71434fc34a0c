"""Unit registry: affine unit conversions within a physical dimension.

Conversions are stored as directed (from, to) -> (factor, offset) pairs with
``converted = value * factor + offset``. The registry derives the inverse of
every declared pair and composes multi-hop paths by breadth-first search, so
a->b and b->c imply a->c. Pairs never cross dimensions.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .diagnostics import Diagnostic, MilaError, Stage, error


class UnitDimension(str, Enum):
    MASS_CONCENTRATION = "mass_concentration"
    MOLAR_CONCENTRATION = "molar_concentration"
    PRESSURE = "pressure"
    COUNT = "count"
    DIMENSIONLESS = "dimensionless"
    TIME = "time"


@dataclass(frozen=True)
class UnitRegistry:
    dimensions: dict[str, UnitDimension]
    conversions: dict[tuple[str, str], tuple[float, float]]

    def dimension_of(self, unit: str) -> UnitDimension | None:
        return self.dimensions.get(unit)

    def find_conversion(self, from_unit: str, to_unit: str) -> tuple[float, float] | None:
        """Affine pair for from->to, composed over multiple hops if needed."""
        if from_unit == to_unit:
            return (1.0, 0.0)
        if self.dimension_of(from_unit) is None or self.dimension_of(to_unit) is None:
            return None
        if self.dimensions[from_unit] is not self.dimensions[to_unit]:
            return None
        direct = self.conversions.get((from_unit, to_unit))
        if direct is not None:
            return direct
        # BFS over declared pairs; sorted neighbor order keeps the composed
        # path (and therefore the floating-point result) deterministic.
        adjacency: dict[str, list[str]] = {}
        for a, b in self.conversions:
            adjacency.setdefault(a, []).append(b)
        for neighbors in adjacency.values():
            neighbors.sort()
        frontier: deque[str] = deque([from_unit])
        reached: dict[str, tuple[float, float]] = {from_unit: (1.0, 0.0)}
        while frontier:
            here = frontier.popleft()
            f1, o1 = reached[here]
            for nxt in adjacency.get(here, ()):
                if nxt in reached:
                    continue
                f2, o2 = self.conversions[(here, nxt)]
                reached[nxt] = (f1 * f2, o1 * f2 + o2)
                if nxt == to_unit:
                    return reached[nxt]
                frontier.append(nxt)
        return None

    def convert(self, value: float, from_unit: str, to_unit: str) -> float:
        pair = self.find_conversion(from_unit, to_unit)
        if pair is None:
            raise MilaError(
                "VDL_NO_CONVERSION",
                f"no conversion from {from_unit!r} to {to_unit!r}",
            )
        factor, offset = pair
        return value * factor + offset


def convert_units(value: float, from_unit: str, to_unit: str, registry: UnitRegistry) -> float:
    """Convert ``value`` between units of one dimension (exact affine step)."""
    return registry.convert(value, from_unit, to_unit)


def load_registry(text: str) -> tuple[UnitRegistry | None, list[Diagnostic]]:
    """Parse a registry document; never raises on malformed input."""
    diags: list[Diagnostic] = []

    def fail(code: str, msg: str, path: str) -> tuple[None, list[Diagnostic]]:
        diags.append(error(code, msg, path, Stage.AVAILABILITY))
        return None, diags

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        return fail("VDL_SYNTAX", f"not valid JSON: {exc}", "")
    if not isinstance(raw, dict):
        return fail("VDL_SYNTAX", "registry root must be an object", "")

    dims_raw = raw.get("dimensions")
    if not isinstance(dims_raw, dict):
        return fail("VDL_SYNTAX", "registry needs a 'dimensions' map", "/dimensions")
    dimensions: dict[str, UnitDimension] = {}
    for unit, dim in dims_raw.items():
        try:
            dimensions[unit] = UnitDimension(dim)
        except ValueError:
            diags.append(
                error(
                    "VDL_SYNTAX",
                    f"unknown dimension {dim!r} for unit {unit!r}",
                    f"/dimensions/{unit}",
                    Stage.AVAILABILITY,
                )
            )

    conversions: dict[tuple[str, str], tuple[float, float]] = {}
    conv_raw = raw.get("conversions", [])
    if not isinstance(conv_raw, list):
        return fail("VDL_SYNTAX", "'conversions' must be a list", "/conversions")
    for i, entry in enumerate(conv_raw):
        path = f"/conversions/{i}"
        if not isinstance(entry, dict):
            diags.append(error("VDL_SYNTAX", "conversion must be an object", path, Stage.AVAILABILITY))
            continue
        a, b = entry.get("from"), entry.get("to")
        factor, offset = entry.get("factor"), entry.get("offset", 0.0)
        if not isinstance(a, str) or not isinstance(b, str):
            diags.append(error("VDL_SYNTAX", "conversion needs 'from' and 'to' units", path, Stage.AVAILABILITY))
            continue
        missing = [u for u in (a, b) if u not in dimensions]
        if missing:
            diags.append(
                error(
                    "VDL_UNKNOWN_UNIT",
                    f"conversion references units without a dimension: {missing}",
                    path,
                    Stage.AVAILABILITY,
                )
            )
            continue
        if dimensions[a] is not dimensions[b]:
            diags.append(
                error(
                    "VDL_NO_CONVERSION",
                    f"conversion {a!r}->{b!r} spans dimensions "
                    f"{dimensions[a].value} and {dimensions[b].value}",
                    path,
                    Stage.AVAILABILITY,
                )
            )
            continue
        if not isinstance(factor, (int, float)) or isinstance(factor, bool) or factor == 0:
            diags.append(error("VDL_SYNTAX", "factor must be a nonzero number", f"{path}/factor", Stage.AVAILABILITY))
            continue
        if not isinstance(offset, (int, float)) or isinstance(offset, bool):
            diags.append(error("VDL_SYNTAX", "offset must be a number", f"{path}/offset", Stage.AVAILABILITY))
            continue
        conversions[(a, b)] = (float(factor), float(offset))

    if any(d.severity.value == "error" for d in diags):
        return None, diags

    # Closure under inversion: (a->b)=(f,o) implies (b->a)=(1/f, -o/f) unless
    # the inverse direction was declared explicitly.
    for (a, b), (factor, offset) in list(conversions.items()):
        if (b, a) not in conversions:
            conversions[(b, a)] = (1.0 / factor, -offset / factor)

    return UnitRegistry(dimensions=dimensions, conversions=conversions), diags


def default_registry() -> UnitRegistry:
    text = resources.files("mila").joinpath("data/workspace/registry.json").read_text("utf-8")
    registry, diags = load_registry(text)
    if registry is None:  # pragma: no cover - bundled data is validated by tests
        raise MilaError("VDL_SYNTAX", f"bundled registry is invalid: {diags}")
    return registry
