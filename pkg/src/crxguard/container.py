"""Extension packages: CRX2/CRX3/ZIP containers, manifest model, script bundle.

CRX headers are skipped, never verified. The bundle concatenates the
background side (service worker or MV2 background scripts) first, then the
content scripts in declaration order, each wrapped in its own block so that
top-level ``const``/``let`` names cannot collide across files.
"""

from __future__ import annotations

import io
import json
import logging
import posixpath
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from crxguard.catalog import PermissionCatalog, default_catalog
from crxguard.errors import (
    BadMagic,
    CrxGuardError,
    InvalidJson,
    MissingManifestVersion,
    NoScripts,
    TruncatedHeader,
    UnreadablePackage,
    UnsupportedVersion,
)

log = logging.getLogger(__name__)

CRX_MAGIC = b"Cr24"
ZIP_MAGIC = b"PK\x03\x04"
JS_SUFFIXES = (".js", ".mjs")


@dataclass(frozen=True)
class CrxArchive:
    format: str  # "crx2" | "crx3" | "zip"
    zip_payload: bytes
    declared_header_length: int = 0


@dataclass(frozen=True)
class ContentScript:
    matches: tuple[str, ...]
    js: tuple[str, ...]


@dataclass(frozen=True)
class Manifest:
    manifest_version: int
    api_permissions: frozenset[str] = frozenset()
    host_permissions: frozenset[str] = frozenset()
    content_scripts: tuple[ContentScript, ...] = ()
    background_scripts: tuple[str, ...] = ()
    service_worker: str | None = None

    @property
    def worker_files(self) -> tuple[str, ...]:
        if self.service_worker:
            return (self.service_worker,)
        return self.background_scripts

    @property
    def cs_matches(self) -> frozenset[str]:
        return frozenset(m for cs in self.content_scripts for m in cs.matches)


@dataclass(frozen=True)
class ScriptBundle:
    concatenated_source: str
    part_count: int
    part_boundaries: tuple[tuple[str, int], ...]

    @property
    def data(self) -> bytes:
        return self.concatenated_source.encode("utf-8")


@dataclass(frozen=True)
class PackageWarning:
    id: str
    code: str
    detail: str

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "code": self.code, "detail": self.detail}, sort_keys=True)


@dataclass
class ExtensionPackage:
    id: str
    archive: CrxArchive
    manifest: Manifest | None
    files: dict[str, int]
    script_bundle: ScriptBundle | None = None
    manifest_error: str | None = None
    crx_size: int = 0
    warnings: list[PackageWarning] = field(default_factory=list)

    @property
    def file_count(self) -> int:
        return len(self.files)

    @property
    def js_files(self) -> dict[str, int]:
        return {p: s for p, s in self.files.items() if p.lower().endswith(JS_SUFFIXES)}

    @property
    def js_size(self) -> int:
        return sum(self.js_files.values())


# ---------------------------------------------------------------- CRX


def parse_crx(data: bytes) -> CrxArchive:
    if not data:
        raise BadMagic("empty input")
    if data[:4] == ZIP_MAGIC:
        return CrxArchive("zip", bytes(data), 0)
    if data[:4] != CRX_MAGIC:
        raise BadMagic(f"unrecognised magic {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedHeader("header shorter than 12 bytes")
    (version,) = struct.unpack_from("<I", data, 4)
    if version == 2:
        if len(data) < 16:
            raise TruncatedHeader("CRX2 header shorter than 16 bytes")
        key_len, sig_len = struct.unpack_from("<II", data, 8)
        offset = 16 + key_len + sig_len
    elif version == 3:
        (header_len,) = struct.unpack_from("<I", data, 8)
        offset = 12 + header_len
    else:
        raise UnsupportedVersion(f"CRX version {version}")
    if offset > len(data):
        raise TruncatedHeader(f"declared header length {offset} exceeds input length {len(data)}")
    payload = bytes(data[offset:])
    if payload[:4] != ZIP_MAGIC:
        raise BadMagic("payload after CRX header is not a ZIP")
    return CrxArchive(f"crx{version}", payload, offset)


def write_crx(zip_payload: bytes, fmt: str = "crx3", *, public_key: bytes = b"",
              signature: bytes = b"", header: bytes = b"") -> bytes:
    """Serialise a container; inverse of :func:`parse_crx`."""
    if fmt == "zip":
        return bytes(zip_payload)
    if fmt == "crx2":
        head = CRX_MAGIC + struct.pack("<III", 2, len(public_key), len(signature))
        return head + public_key + signature + zip_payload
    if fmt == "crx3":
        return CRX_MAGIC + struct.pack("<II", 3, len(header)) + header + zip_payload
    raise UnsupportedVersion(fmt)


def make_zip(files: dict[str, bytes], compress=True) -> bytes:
    """Deterministic ZIP: sorted entries, fixed timestamps.

    ``compress`` is a bool or a predicate on the entry name.
    """
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name in sorted(files):
            info = zipfile.ZipInfo(name, date_time=(2020, 1, 1, 0, 0, 0))
            deflate = compress(name) if callable(compress) else compress
            info.compress_type = zipfile.ZIP_DEFLATED if deflate else zipfile.ZIP_STORED
            info.external_attr = 0o644 << 16
            zf.writestr(info, files[name])
    return buf.getvalue()


def zip_directory(root: Path) -> bytes:
    files = {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }
    return make_zip(files)


# ---------------------------------------------------------------- manifest


def is_host_pattern(value: str) -> bool:
    return "://" in value or value == "<all_urls>" or value.startswith("chrome://")


def _strings(value: object) -> list[str]:
    if not isinstance(value, list):
        return []
    return [v for v in value if isinstance(v, str) and v]


def parse_manifest(json_text: str | bytes, catalog: PermissionCatalog | None = None) -> Manifest:
    if isinstance(json_text, bytes):
        json_text = json_text.decode("utf-8", errors="replace")
    json_text = json_text.lstrip("﻿")
    try:
        doc = json.loads(json_text)
    except (ValueError, RecursionError) as exc:
        raise InvalidJson(str(exc)) from None
    if not isinstance(doc, dict):
        raise InvalidJson("manifest root is not an object")
    mv = doc.get("manifest_version")
    if isinstance(mv, bool) or mv not in (2, 3):
        raise MissingManifestVersion(f"manifest_version={mv!r}")
    catalog = catalog or default_catalog()

    perms = _strings(doc.get("permissions"))
    if mv == 3:
        api = frozenset(perms)
        hosts = frozenset(_strings(doc.get("host_permissions")))
    else:
        api = frozenset(p for p in perms if p in catalog)
        hosts = frozenset(p for p in perms if is_host_pattern(p))

    scripts = []
    raw_cs = doc.get("content_scripts")
    for entry in raw_cs if isinstance(raw_cs, list) else []:
        if isinstance(entry, dict):
            scripts.append(ContentScript(tuple(_strings(entry.get("matches"))), tuple(_strings(entry.get("js")))))

    background = doc.get("background")
    background = background if isinstance(background, dict) else {}
    worker = None
    bg_scripts: tuple[str, ...] = ()
    if mv == 3:
        sw = background.get("service_worker")
        worker = sw if isinstance(sw, str) and sw else None
    else:
        bg_scripts = tuple(_strings(background.get("scripts")))

    return Manifest(int(mv), api, hosts, tuple(scripts), bg_scripts, worker)


# ---------------------------------------------------------------- bundle


def _norm(path: str) -> str:
    path = path.replace("\\", "/").lstrip("/")
    norm = posixpath.normpath(path)
    return "" if norm == "." else norm


def _zip_index(zf: zipfile.ZipFile) -> dict[str, zipfile.ZipInfo]:
    return {_norm(i.filename): i for i in zf.infolist() if not i.is_dir()}


def script_paths(manifest: Manifest) -> list[str]:
    """Worker side first, then content scripts in declaration order; deduplicated."""
    out: list[str] = []
    seen = set()
    for p in list(manifest.worker_files) + [js for cs in manifest.content_scripts for js in cs.js]:
        key = _norm(p)
        if key and key not in seen:
            seen.add(key)
            out.append(key)
    return out


def assemble_bundle(parts: Iterable[tuple[str, str]]) -> ScriptBundle:
    chunks = []
    bounds = []
    offset = 0
    for path, text in parts:
        chunk = "{\n" + text + "\n}\n"
        bounds.append((path, offset))
        offset += len(chunk.encode("utf-8"))
        chunks.append(chunk)
    if not chunks:
        raise NoScripts("no resolvable script file")
    return ScriptBundle("".join(chunks), len(chunks), tuple(bounds))


def _decode(raw: bytes) -> str:
    return raw.decode("utf-8", errors="replace").lstrip("﻿")


def build_script_bundle(archive: CrxArchive, manifest: Manifest, *, pkg_id: str = "",
                        warnings: list[PackageWarning] | None = None, root: str = "") -> ScriptBundle:
    with zipfile.ZipFile(io.BytesIO(archive.zip_payload)) as zf:
        index = _zip_index(zf)
        parts = []
        for path in script_paths(manifest):
            info = index.get(_norm(posixpath.join(root, path)))
            if info is None:
                if warnings is not None:
                    warnings.append(PackageWarning(pkg_id, "missing_script", path))
                continue
            parts.append((path, _decode(zf.read(info))))
    return assemble_bundle(parts)


# ---------------------------------------------------------------- package


def _find_manifest(index: dict[str, zipfile.ZipInfo]) -> str | None:
    if "manifest.json" in index:
        return "manifest.json"
    nested = sorted((p for p in index if p.endswith("/manifest.json")), key=lambda p: (p.count("/"), p))
    return nested[0] if nested else None


def load_package(data: bytes, pkg_id: str, catalog: PermissionCatalog | None = None) -> ExtensionPackage:
    """Parse container bytes into a package; manifest problems are recorded, not raised."""
    try:
        archive = parse_crx(data)
        zf = zipfile.ZipFile(io.BytesIO(archive.zip_payload))
    except CrxGuardError:
        raise
    except (zipfile.BadZipFile, OSError, ValueError) as exc:
        raise UnreadablePackage(f"{pkg_id}: {exc}") from None

    warnings: list[PackageWarning] = []
    with zf:
        index = _zip_index(zf)
        files = {p: i.file_size for p, i in index.items()}
        mpath = _find_manifest(index)
        manifest = None
        error = None
        if mpath is None:
            error = "missing manifest.json"
        else:
            try:
                manifest = parse_manifest(zf.read(index[mpath]), catalog)
            except (InvalidJson, MissingManifestVersion) as exc:
                error = f"{exc.code}: {exc}"
    if error:
        warnings.append(PackageWarning(pkg_id, "invalid_manifest", error))

    bundle = None
    if manifest is not None:
        root = posixpath.dirname(mpath or "")
        try:
            bundle = build_script_bundle(archive, manifest, pkg_id=pkg_id, warnings=warnings, root=root)
        except NoScripts:
            warnings.append(PackageWarning(pkg_id, "no_scripts", "no resolvable script file"))
    for w in warnings:
        log.debug("%s", w.to_json())
    return ExtensionPackage(pkg_id, archive, manifest, files, bundle, error, len(data), warnings)


def is_eligible(pkg: ExtensionPackage) -> bool:
    return pkg.manifest is not None and pkg.script_bundle is not None and pkg.script_bundle.part_count > 0


def write_warnings(warnings: Iterable[PackageWarning], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in warnings:
            fh.write(w.to_json() + "\n")
