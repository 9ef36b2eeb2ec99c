import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

logger = logging.getLogger(__name__)


@dataclass
class CacheEntry:
    """One validated backend reply"""
    prompt_hash: str
    response_text: str
    timestamp: float


def prompt_hash(prompt: str) -> str:
    """Cache key: SHA-256 of the prompt bytes"""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ClassificationCache:
    """
    Append-only JSON-lines log of backend replies keyed by prompt hash.

    The last entry for a hash wins. Entries are flushed as they are written,
    so an interrupted batch keeps everything classified before the kill.
    Without a path the cache lives in memory only.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = Path(path) if path else None
        self.entries: Dict[str, CacheEntry] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            self._load()

    def _load(self):
        self._drop_partial_tail()
        skipped = 0
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    entry = CacheEntry(record["prompt_hash"], record["response_text"],
                                       float(record.get("timestamp", 0.0)))
                except (ValueError, KeyError, TypeError):
                    # corrupted or hand-edited line
                    skipped += 1
                    continue
                self.entries[entry.prompt_hash] = entry
        if skipped:
            logger.warning("Skipped %d unreadable cache lines in %s", skipped, self.path)
        logger.info("Loaded %d cached replies from %s", len(self.entries), self.path)

    def _drop_partial_tail(self):
        """Repair a last line left without its newline, cutting it if it is not whole JSON"""
        with open(self.path, "rb+") as fh:
            data = fh.read()
            if not data or data.endswith(b"\n"):
                return
            keep = data.rfind(b"\n") + 1
            try:
                json.loads(data[keep:])
            except ValueError:
                fh.truncate(keep)
                logger.warning("Dropped a truncated trailing cache entry in %s", self.path)
            else:
                fh.write(b"\n")

    def get(self, key: str) -> Optional[str]:
        entry = self.entries.get(key)
        return entry.response_text if entry else None

    def put(self, key: str, response_text: str):
        entry = CacheEntry(key, response_text, time.time())
        with self._lock:
            self.entries[key] = entry
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({
                        "prompt_hash": entry.prompt_hash,
                        "response_text": entry.response_text,
                        "timestamp": entry.timestamp,
                    }, ensure_ascii=False) + "\n")
                    fh.flush()

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)
