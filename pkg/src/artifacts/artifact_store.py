"""
Artifact Store
Reads and writes JSON / CSV run artifacts and the run manifest
"""

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Type, TypeVar, Union

from pydantic import BaseModel

from artifacts.schemas import (
    ManifestDocument,
    ManifestEntry,
    MenuDocument,
    PathDocument,
    ReductionSetDocument,
)
from mechanism_engine.connectivity import ReductionSet
from mechanism_engine.menu_core import Menu, MenuPath

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

DocumentT = TypeVar("DocumentT", bound=BaseModel)


def canonical_json(payload: Any) -> str:
    """Sorted keys, fixed indentation, trailing newline"""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_document(path: Union[str, Path], model: Type[DocumentT]) -> DocumentT:
    """Parse a JSON file into `model`; json / pydantic errors propagate to the caller"""
    return model.model_validate_json(Path(path).read_text(encoding="utf-8"))


def read_menu(path: Union[str, Path]) -> Menu:
    return load_document(path, MenuDocument).to_menu()


def read_path(path: Union[str, Path]) -> MenuPath:
    return load_document(path, PathDocument).to_path()


def read_reduction_set(path: Union[str, Path]) -> ReductionSet:
    return load_document(path, ReductionSetDocument).to_set()


class ArtifactStore:
    """
    Output directory of one run

    Every file written through the store is listed in the manifest with its
    sha256, in the order written.
    """

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[str] = []

    def _target(self, name: str) -> Path:
        if name not in self.written:
            self.written.append(name)
        return self.out_dir / name

    def write_json(self, name: str, payload: Any) -> Path:
        target = self._target(name)
        target.write_text(canonical_json(payload), encoding="utf-8")
        logger.debug(f"Wrote {target}")
        return target

    def write_csv(self, name: str, rows: Iterable[Dict[str, Any]], columns: Sequence[str]) -> Path:
        target = self._target(name)
        with open(target, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(columns), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({column: _csv_cell(row.get(column, "")) for column in columns})
        logger.debug(f"Wrote {target}")
        return target

    def write_menu(self, name: str, menu: Menu) -> Path:
        return self.write_json(name, MenuDocument.from_menu(menu))

    def write_path(self, name: str, path: MenuPath) -> Path:
        return self.write_json(name, PathDocument.from_path(path))

    def write_reduction_set(self, name: str, reduction: ReductionSet) -> Path:
        return self.write_json(name, ReductionSetDocument.from_set(reduction))

    def write_manifest(self, command: str, seed: int, config_payload: Any) -> Path:
        """manifest.json: produced files with sha256 and the hash of the canonical config"""
        entries = [ManifestEntry(name=name, sha256=sha256_file(self.out_dir / name)) for name in self.written]
        manifest = ManifestDocument(
            command=command,
            seed=seed,
            config_sha256=sha256_text(canonical_json(config_payload)),
            files=entries,
        )
        target = self.out_dir / MANIFEST_NAME
        target.write_text(canonical_json(manifest), encoding="utf-8")
        return target


def _csv_cell(value: Any) -> Any:
    # repr keeps floats round-trippable
    if isinstance(value, float):
        return repr(value)
    return value


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def resolve(base: Optional[Union[str, Path]], name: Union[str, Path]) -> Path:
    """Resolve a config-relative file reference"""
    path = Path(name)
    if path.is_absolute() or base is None:
        return path
    return Path(base) / path
