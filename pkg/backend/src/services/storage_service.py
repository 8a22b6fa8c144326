from abc import ABC, abstractmethod
from pathlib import Path

import pandas as pd
import structlog

from core.exceptions import OutputPathError

logger = structlog.get_logger(__name__)


class StorageInterface(ABC):
    """Abstract output storage"""

    @abstractmethod
    def save_text(self, content: str, filename: str | Path) -> Path:
        """Write text and return the final path"""
        pass

    @abstractmethod
    def save_frame(self, frame: pd.DataFrame, filename: str | Path, **csv_options) -> Path:
        """Write a DataFrame as CSV and return the final path"""
        pass


class LocalStorage(StorageInterface):
    """Local file system storage; relative names resolve against ``root``"""

    def __init__(self, root: str | Path = "."):
        self.root = Path(root)

    def _prepare(self, filename: str | Path) -> Path:
        path = Path(filename)
        if not path.is_absolute():
            path = self.root / path
        if path.is_dir():
            raise OutputPathError(f"output path is a directory: {path}")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OutputPathError(f"cannot create {path.parent}: {e}")
        return path

    def save_text(self, content: str, filename: str | Path) -> Path:
        path = self._prepare(filename)
        try:
            path.write_text(content, encoding="utf-8")
        except OSError as e:
            raise OutputPathError(f"cannot write {path}: {e}")
        logger.debug("file_written", path=str(path), size=len(content))
        return path

    def save_frame(self, frame: pd.DataFrame, filename: str | Path, **csv_options) -> Path:
        path = self._prepare(filename)
        try:
            frame.to_csv(path, index=False, lineterminator="\n", **csv_options)
        except OSError as e:
            raise OutputPathError(f"cannot write {path}: {e}")
        logger.debug("file_written", path=str(path), rows=len(frame))
        return path


def get_storage(root: str | Path = ".") -> StorageInterface:
    """Return the storage implementation for output files"""
    return LocalStorage(root)
