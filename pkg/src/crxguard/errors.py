"""Exception hierarchy. Every error carries a short machine-readable ``code``."""

from __future__ import annotations


class CrxGuardError(Exception):
    code = "error"

    def to_json(self) -> dict:
        return {"error": self.code, "detail": str(self)}


# container
class BadMagic(CrxGuardError):
    code = "bad_magic"


class TruncatedHeader(CrxGuardError):
    code = "truncated_header"


class UnsupportedVersion(CrxGuardError):
    code = "unsupported_version"


class InvalidJson(CrxGuardError):
    code = "invalid_json"


class MissingManifestVersion(CrxGuardError):
    code = "missing_manifest_version"


class NoScripts(CrxGuardError):
    code = "no_scripts"


# corpus
class MissingSidecar(CrxGuardError):
    code = "missing_sidecar"


class UnreadablePackage(CrxGuardError):
    code = "unreadable_package"


class EmptyCorpus(CrxGuardError):
    code = "empty_corpus"


class InvalidRatio(CrxGuardError):
    code = "invalid_ratio"


class EmptySide(CrxGuardError):
    code = "empty_side"


class InvalidConfig(CrxGuardError):
    code = "invalid_config"


# features / models
class SchemaMismatch(CrxGuardError):
    code = "schema_mismatch"


class DegenerateData(CrxGuardError):
    code = "degenerate_data"


class DegenerateFold(CrxGuardError):
    code = "degenerate_fold"


class DimMismatch(CrxGuardError):
    code = "dim_mismatch"


class VersionMismatch(CrxGuardError):
    code = "version_mismatch"


class DigestMismatch(CrxGuardError):
    code = "digest_mismatch"


# evaluation
class UnlabeledRecord(CrxGuardError):
    code = "unlabeled_record"


class IdSetMismatch(CrxGuardError):
    code = "id_set_mismatch"


# cluster
class EmptyInput(CrxGuardError):
    code = "empty_input"


# cli
class ConfigError(CrxGuardError):
    code = "config_error"


class StageInputMissing(CrxGuardError):
    code = "stage_input_missing"
