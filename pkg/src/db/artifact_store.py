import csv
import hashlib
import json
import logging
import platform
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np
import scipy
import pydantic
from pydantic import BaseModel

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


class ArtifactStore:
    def __init__(self, root: Union[str, Path], run_name: str):
        """
        Owns one run directory of CSV and JSON artifacts.

        Args:
            root (str | Path): Output directory.
            run_name (str): Prefix of every artifact, e.g. "solve-lattice_7".
        """
        if not run_name:
            raise ValueError("run_name cannot be empty.")
        self.root = Path(root)
        self.run_name = run_name
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"Cannot create output directory {self.root}: {e}")
            raise
        self.artifacts: List[Path] = []
        logger.info(f"Writing artifacts of {run_name} to {self.root}")

    def path(self, name: str) -> Path:
        return self.root / f"{self.run_name}_{name}"

    def write_csv(
        self,
        name: str,
        header: Sequence[str],
        rows: Iterable[Sequence[Any]],
    ) -> Path:
        """
        CSV with '.' decimals and LF endings; floats go through
        repr, which round-trips exactly.
        """
        target = self.path(f"{name}.csv")
        count = 0
        with open(target, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_plain(v) for v in row])
                count += 1
        self._record(target)
        logger.info(f"Wrote {count} rows to {target.name}")
        return target

    def write_json(
        self, name: str, payload: Union[BaseModel, Dict[str, Any]]
    ) -> Path:
        target = self.path(f"{name}.json")
        if isinstance(payload, BaseModel):
            text = payload.model_dump_json(indent=2, by_alias=True)
        else:
            text = json.dumps(
                payload, indent=2, sort_keys=True, default=_plain
            )
        with open(target, "w", encoding="utf-8", newline="\n") as f:
            f.write(text + "\n")
        self._record(target)
        logger.info(f"Wrote {target.name}")
        return target

    def _record(self, target: Path) -> None:
        if target not in self.artifacts:
            self.artifacts.append(target)

    @staticmethod
    def sha256(target: Path) -> str:
        digest = hashlib.sha256()
        with open(target, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 16), b""):
                digest.update(chunk)
        return digest.hexdigest()

    def write_manifest(
        self,
        config_json: str,
        wall_time: float,
        status: str,
        extra: Union[Dict[str, Any], None] = None,
    ) -> Path:
        """
        Lists every artifact with its content hash next to the config
        hash and the library versions.
        """
        manifest = {
            "run": self.run_name,
            "status": status,
            "config_sha256": hashlib.sha256(
                config_json.encode("utf-8")
            ).hexdigest(),
            "wall_time_seconds": wall_time,
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pydantic": pydantic.VERSION,
            },
            "artifacts": [
                {"file": target.name, "sha256": self.sha256(target)}
                for target in self.artifacts
            ],
        }
        if extra:
            manifest["summary"] = extra
        target = self.path(MANIFEST_NAME)
        with open(target, "w", encoding="utf-8", newline="\n") as f:
            f.write(
                json.dumps(manifest, indent=2, sort_keys=True, default=_plain)
                + "\n"
            )
        logger.info(
            f"Manifest lists {len(self.artifacts)} artifacts for "
            f"{self.run_name}"
        )
        return target
