"""Bundled example scenarios. The walled multi-subgroup layouts are desk-scale
reconstructions of the environments the method targets, not measured data."""

from importlib import resources
from pathlib import Path


def builtin_path(name: str) -> Path:
    """Filesystem path of a bundled scenario JSON, e.g. builtin_path("two_rooms_40")."""
    if not name.endswith(".json"):
        name = name + ".json"
    ref = resources.files(__package__) / name
    with resources.as_file(ref) as p:
        return Path(p)


def available() -> list[str]:
    return sorted(
        p.name[: -len(".json")]
        for p in resources.files(__package__).iterdir()
        if p.name.endswith(".json")
    )
