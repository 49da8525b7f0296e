"""Small builders shared by the test modules."""

from __future__ import annotations

import datetime as dt
import json

from crxguard.container import load_package, make_zip, write_crx
from crxguard.corpus import ExtensionRecord

LISTING_MANIFEST = {
    "name": "Example",
    "version": "1.0",
    "manifest_version": 3,
    "permissions": ["downloads", "history"],
    "host_permissions": ["https://example.com/*"],
    "background": {"service_worker": "service_worker.js"},
    "content_scripts": [{"matches": ["<all_urls>"], "js": ["script.js"]}],
}


def package_bytes(manifest: dict | str, files: dict[str, str] | None = None, fmt: str = "crx3") -> bytes:
    text = manifest if isinstance(manifest, str) else json.dumps(manifest)
    entries = {"manifest.json": text.encode()}
    for name, body in (files or {}).items():
        entries[name] = body.encode()
    return write_crx(make_zip(entries), fmt, header=b"\x01\x02\x03\x04")


def make_record(pkg_id: str = "a" * 32, manifest: dict | None = None, files: dict[str, str] | None = None,
                label: str = "benign", when: dt.date = dt.date(2020, 6, 1), **fields) -> ExtensionRecord:
    manifest = manifest if manifest is not None else LISTING_MANIFEST
    if files is None:
        files = {"service_worker.js": "var x = 1;", "script.js": "document.title = 'hi';"}
    pkg = load_package(package_bytes(manifest, files), pkg_id)
    return ExtensionRecord(pkg=pkg, label=label, last_update=when, **fields)


# filled by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
