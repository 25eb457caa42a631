"""Labelled store of scaling-constant sets."""

import json
import logging
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Union

from dotenv import load_dotenv

from .errors import DomainError, ImmutableEntryError, UnknownLabelError
from .laws import PUBLISHED_CONSTANTS, ScalingConstants

logger = logging.getLogger(__name__)

ENV_REGISTRY_DIR = "MOESCALE_REGISTRY_DIR"
DEFAULT_REGISTRY_DIR = "~/.config/moescale/constants"
BUILTIN_LABEL = "paper-table-5"
_LABEL_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


@dataclass
class RegistryEntry:
    """A constants set with where it came from."""

    label: str
    constants: ScalingConstants
    provenance: Dict[str, str] = field(default_factory=dict)
    builtin: bool = False

    def to_dict(self) -> Dict:
        """Label, constants and provenance as stored on disk."""
        return {
            "label": self.label,
            "constants": self.constants.to_dict(),
            "provenance": dict(self.provenance),
        }


BUILTIN_ENTRIES: Dict[str, RegistryEntry] = {
    BUILTIN_LABEL: RegistryEntry(
        label=BUILTIN_LABEL,
        constants=PUBLISHED_CONSTANTS,
        provenance={"source": "published joint-law fit"},
        builtin=True,
    )
}


def resolve_registry_dir(registry_dir: Union[str, Path, None] = None) -> Path:
    """Flag value, else $MOESCALE_REGISTRY_DIR (``.env`` honoured), else the per-user default."""
    if registry_dir:
        return Path(registry_dir).expanduser()
    load_dotenv()
    env_dir = os.environ.get(ENV_REGISTRY_DIR)
    if env_dir:
        return Path(env_dir).expanduser()
    return Path(DEFAULT_REGISTRY_DIR).expanduser()


def load_constants_file(path: Union[str, Path]) -> ScalingConstants:
    """Read a flat constants JSON object, or a registry/fit document containing one."""
    with open(path, "r") as f:
        data = json.load(f)
    if "constants" in data and isinstance(data["constants"], dict):
        data = data["constants"]
    return ScalingConstants.from_dict(data)


class ConstantsRegistry:
    """Manage labelled constants sets, one JSON document per label."""

    def __init__(self, registry_dir: Union[str, Path, None] = None):
        """Initialize the registry."""
        self.registry_dir = resolve_registry_dir(registry_dir)

    def _ensure_registry_dir(self):
        """Ensure the registry directory exists."""
        self.registry_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, label: str) -> Path:
        return self.registry_dir / f"{label}.json"

    @staticmethod
    def _validate_label(label: str):
        if not _LABEL_RE.match(label or ""):
            raise DomainError(f"Invalid label '{label}'", "label matches [A-Za-z0-9][A-Za-z0-9._-]*")

    def save(self, label: str, constants: ScalingConstants, provenance: Optional[Dict[str, str]] = None) -> RegistryEntry:
        """Store ``constants`` under ``label``, replacing any previous user entry."""
        self._validate_label(label)
        if label in BUILTIN_ENTRIES:
            raise ImmutableEntryError(label)
        provenance = dict(provenance or {})
        provenance.setdefault("saved_at", datetime.now(timezone.utc).isoformat())
        entry = RegistryEntry(label=label, constants=constants, provenance=provenance)
        self._ensure_registry_dir()
        path = self._path(label)
        tmp = path.with_suffix(".json.tmp")
        with open(tmp, "w") as f:
            json.dump(entry.to_dict(), f, indent=2)
        os.replace(tmp, path)
        logger.info(f"Constants '{label}' saved to {path}")
        return entry

    def get(self, label: str) -> RegistryEntry:
        """Get an entry by label."""
        if label in BUILTIN_ENTRIES:
            return BUILTIN_ENTRIES[label]
        self._validate_label(label)
        path = self._path(label)
        if not path.exists():
            raise UnknownLabelError(label)
        with open(path, "r") as f:
            data = json.load(f)
        return RegistryEntry(
            label=label,
            constants=ScalingConstants.from_dict(data["constants"]),
            provenance=data.get("provenance", {}),
        )

    def load(self, label: str) -> ScalingConstants:
        """Constants stored under ``label``."""
        return self.get(label).constants

    def remove(self, label: str):
        """Remove a user entry."""
        if label in BUILTIN_ENTRIES:
            raise ImmutableEntryError(label)
        self._validate_label(label)
        path = self._path(label)
        if not path.exists():
            raise UnknownLabelError(label)
        path.unlink()
        logger.info(f"Constants '{label}' removed")

    def list_entries(self) -> List[RegistryEntry]:
        """Built-in entries first, then user entries by label."""
        entries = list(BUILTIN_ENTRIES.values())
        if self.registry_dir.is_dir():
            for path in sorted(self.registry_dir.glob("*.json")):
                try:
                    entries.append(self.get(path.stem))
                except (json.JSONDecodeError, KeyError, DomainError) as e:
                    logger.error(f"Error loading constants from {path}: {e}")
        return entries

    def resolve(self, label_or_path: str) -> ScalingConstants:
        """Constants for a registry label, or from a JSON file path."""
        if label_or_path in BUILTIN_ENTRIES:
            return BUILTIN_ENTRIES[label_or_path].constants
        candidate = Path(label_or_path).expanduser()
        if candidate.suffix == ".json" or os.sep in label_or_path:
            if candidate.is_file():
                return load_constants_file(candidate)
        return self.load(label_or_path)
