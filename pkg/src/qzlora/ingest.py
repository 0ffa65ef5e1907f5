"""Candidate-image ingestion: source listing, validated download, corpus store.

On-disk layout per topic:

    corpus/<topic_id>/<index>.<ext>    image bytes (jpg/png/webp)
    corpus/<topic_id>/<index>.txt     caption of matching index (may be empty)
    corpus/<topic_id>/manifest.json   records with content hashes and filenames
"""

from __future__ import annotations

import io
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

from PIL import Image

from .errors import NoImagesFound, SourceUnavailable, UnknownTopic
from .storage import atomic_write_bytes, atomic_write_text, read_json, sha256_hex, write_json
from .topics import Topic

log = logging.getLogger(__name__)

DEFAULT_FETCH_CAP = 55
CAPTION_MAX_CHARS = 512
MIN_DIMENSION = 256  # training runs at 512x512; tiny inputs are skipped
ACCEPTED_FORMATS = {"JPEG": ".jpg", "PNG": ".png", "WEBP": ".webp"}
RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = 1.0


@dataclass(frozen=True)
class CandidateImage:
    image_id: str
    topic_id: str
    content_hash: str
    source_url: str
    caption: str
    width: int
    height: int
    fetch_index: int
    corrupt: bool = False


@dataclass(frozen=True)
class SourceEntry:
    url: str
    description: str = ""


class ImageSource(Protocol):
    """Listing + file-fetch contract; a Wikimedia-Commons-style source."""

    def list_entries(self, topic: Topic) -> list[SourceEntry]: ...

    def fetch(self, url: str) -> bytes: ...


def _with_retries(fn: Callable[[], bytes], what: str, *, sleep=time.sleep) -> bytes:
    delay = RETRY_BACKOFF_S
    last: Exception | None = None
    for attempt in range(RETRY_ATTEMPTS):
        try:
            return fn()
        except Exception as exc:
            last = exc
            if attempt + 1 < RETRY_ATTEMPTS:
                sleep(delay)
                delay *= 2
    raise SourceUnavailable(f"{what}: {last}") from last


class LocalDirectorySource:
    """Directory-backed source for tests and offline runs.

    Layout: <root>/<topic_id>/ holds the image files; an optional
    captions.json in the same directory maps filename -> description.
    Listing order is the sorted filename order.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.fetch_count = 0

    def list_entries(self, topic: Topic) -> list[SourceEntry]:
        topic_dir = self.root / topic.topic_id
        if not topic_dir.is_dir():
            raise SourceUnavailable(f"no source directory for {topic.topic_id}")
        captions = {}
        captions_path = topic_dir / "captions.json"
        if captions_path.exists():
            captions = read_json(captions_path)
        entries = []
        for path in sorted(topic_dir.iterdir()):
            if path.name == "captions.json" or not path.is_file():
                continue
            entries.append(SourceEntry(url=str(path), description=captions.get(path.name, "")))
        return entries

    def fetch(self, url: str) -> bytes:
        self.fetch_count += 1
        return Path(url).read_bytes()


class WikimediaCommonsSource:
    """Commons API source: category listing plus direct file GETs."""

    def __init__(self, api_url: str, session, *, page_size: int = 100, sleep=time.sleep):
        self.api_url = api_url
        self.session = session
        self.page_size = page_size
        self._sleep = sleep

    def list_entries(self, topic: Topic) -> list[SourceEntry]:
        entries: list[SourceEntry] = []
        params = {
            "action": "query",
            "format": "json",
            "generator": "categorymembers",
            "gcmtitle": f"Category:{topic.topic_id}",
            "gcmtype": "file",
            "gcmlimit": self.page_size,
            "prop": "imageinfo",
            "iiprop": "url|extmetadata",
        }
        cont: dict = {}
        while True:
            payload = self._get_json({**params, **cont})
            pages = payload.get("query", {}).get("pages", {})
            for _, page in sorted(pages.items(), key=lambda kv: int(kv[0])):
                info = (page.get("imageinfo") or [{}])[0]
                url = info.get("url")
                if not url:
                    continue
                meta = info.get("extmetadata") or {}
                description = (meta.get("ImageDescription") or {}).get("value", "")
                entries.append(SourceEntry(url=url, description=description))
            cont = payload.get("continue") or {}
            if not cont:
                break
        return entries

    def fetch(self, url: str) -> bytes:
        def _get() -> bytes:
            resp = self.session.get(url, timeout=60)
            resp.raise_for_status()
            return resp.content

        return _with_retries(_get, f"GET {url}", sleep=self._sleep)

    def _get_json(self, params: dict) -> dict:
        def _get() -> bytes:
            resp = self.session.get(self.api_url, params=params, timeout=60)
            resp.raise_for_status()
            return resp.content

        return json.loads(_with_retries(_get, f"list {params.get('gcmtitle')}", sleep=self._sleep))


def _strip_markup(text: str) -> str:
    # Commons descriptions arrive as HTML fragments; keep the visible text.
    return re.sub(r"<[^>]+>", "", text or "").strip()


def _validate_image(data: bytes) -> tuple[str, int, int] | None:
    """(extension, width, height) when acceptable, None when skipped."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            fmt = img.format or ""
            width, height = img.size
    except Exception:
        return None
    ext = ACCEPTED_FORMATS.get(fmt)
    if ext is None:
        log.info("skipping image: format %s not accepted", fmt)
        return None
    if width < MIN_DIMENSION or height < MIN_DIMENSION:
        log.info("skipping image: %dx%d below %d", width, height, MIN_DIMENSION)
        return None
    return ext, width, height


def corpus_dir(store_root: Path, topic_id: str) -> Path:
    return Path(store_root) / "corpus" / topic_id


def _manifest_path(store_root: Path, topic_id: str) -> Path:
    return corpus_dir(store_root, topic_id) / "manifest.json"


def _load_manifest(store_root: Path, topic_id: str) -> list[dict]:
    path = _manifest_path(store_root, topic_id)
    if not path.exists():
        raise UnknownTopic(topic_id)
    return read_json(path)["images"]


def fetch_candidates(
    topic: Topic,
    source: ImageSource,
    store_root: Path,
    cap: int = DEFAULT_FETCH_CAP,
    parallelism: int = 4,
) -> list[CandidateImage]:
    """Download, validate, and store up to `cap` images for a topic.

    Listing order defines fetch_index; the cap counts stored images.
    Re-runs skip entries whose stored bytes still match the recorded hash,
    and the resulting store is identical for any parallelism level.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    try:
        entries = source.list_entries(topic)
    except SourceUnavailable:
        raise
    except Exception as exc:
        raise SourceUnavailable(f"listing failed for {topic.topic_id}: {exc}") from exc
    if not entries:
        raise NoImagesFound(topic.topic_id)

    topic_dir = corpus_dir(store_root, topic.topic_id)
    manifest_path = _manifest_path(store_root, topic.topic_id)
    stored_by_url: dict[str, dict] = {}
    if manifest_path.exists():
        for item in read_json(manifest_path)["images"]:
            stored_by_url[item["source_url"]] = item

    def _intact(item: dict) -> bool:
        path = topic_dir / item["file"]
        return path.exists() and sha256_hex(path.read_bytes()) == item["content_hash"]

    reusable = {url: item for url, item in stored_by_url.items() if _intact(item)}
    to_download = [e for e in entries if e.url not in reusable]

    downloads: dict[str, bytes | Exception] = {}
    if to_download:
        def _grab(entry: SourceEntry):
            try:
                return entry.url, source.fetch(entry.url)
            except Exception as exc:
                return entry.url, exc

        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for url, result in pool.map(_grab, to_download):
                downloads[url] = result

    # Acceptance runs strictly in listing order so any parallelism level
    # produces the same store.
    items: list[dict] = []
    topic_dir.mkdir(parents=True, exist_ok=True)
    for entry in entries:
        if len(items) >= cap:
            break
        index = len(items)
        prior = reusable.get(entry.url)
        if prior is not None:
            ext = Path(prior["file"]).suffix
            filename = f"{index:04d}{ext}"
            if prior["file"] != filename:
                atomic_write_bytes(topic_dir / filename, (topic_dir / prior["file"]).read_bytes())
                atomic_write_text(topic_dir / f"{index:04d}.txt", prior["caption"])
            items.append({**prior, "file": filename, "fetch_index": index,
                          "image_id": f"{topic.topic_id}-{index:04d}"})
            continue
        result = downloads[entry.url]
        if isinstance(result, Exception):
            if isinstance(result, SourceUnavailable):
                raise result
            raise SourceUnavailable(f"fetch {entry.url}: {result}") from result
        validated = _validate_image(result)
        if validated is None:
            continue
        ext, width, height = validated
        caption = _strip_markup(entry.description)[:CAPTION_MAX_CHARS]
        filename = f"{index:04d}{ext}"
        atomic_write_bytes(topic_dir / filename, result)
        atomic_write_text(topic_dir / f"{index:04d}.txt", caption)
        items.append({
            "image_id": f"{topic.topic_id}-{index:04d}",
            "topic_id": topic.topic_id,
            "content_hash": sha256_hex(result),
            "source_url": entry.url,
            "caption": caption,
            "width": width,
            "height": height,
            "fetch_index": index,
            "file": filename,
        })

    # Drop files beyond the live index range left over from earlier runs.
    live = {item["file"] for item in items} | {f"{i:04d}.txt" for i in range(len(items))}
    live.add("manifest.json")
    for path in topic_dir.iterdir():
        if path.is_file() and path.name not in live:
            path.unlink()

    write_json(manifest_path, {"topic_id": topic.topic_id, "images": items})
    return [_to_candidate(item) for item in items]


def _to_candidate(item: dict, corrupt: bool = False) -> CandidateImage:
    return CandidateImage(
        image_id=item["image_id"],
        topic_id=item["topic_id"],
        content_hash=item["content_hash"],
        source_url=item["source_url"],
        caption=item["caption"],
        width=item["width"],
        height=item["height"],
        fetch_index=item["fetch_index"],
        corrupt=corrupt,
    )


def load_corpus(store_root: Path, topic_id: str) -> list[CandidateImage]:
    """All stored candidates sorted by fetch_index; hash-mismatched files are
    flagged corrupt so downstream selection can exclude them."""
    records = []
    topic_dir = corpus_dir(store_root, topic_id)
    for item in _load_manifest(store_root, topic_id):
        path = topic_dir / item["file"]
        intact = path.exists() and sha256_hex(path.read_bytes()) == item["content_hash"]
        records.append(_to_candidate(item, corrupt=not intact))
    return sorted(records, key=lambda r: r.fetch_index)


def image_path(store_root: Path, topic_id: str, image_id: str) -> Path:
    for item in _load_manifest(store_root, topic_id):
        if item["image_id"] == image_id:
            return corpus_dir(store_root, topic_id) / item["file"]
    raise UnknownTopic(f"{topic_id}: no image {image_id}")


def image_bytes(store_root: Path, topic_id: str, image_id: str) -> bytes:
    return image_path(store_root, topic_id, image_id).read_bytes()
