"""Materializing locked environments into prefix directories.

A prefix holds package payloads at their archive-relative paths plus one
metadata file, ``conda-meta/installed.json``, recording every package and
every file (with its sha256) in install order. Installs are staged next to
the prefix and swapped in only after every archive has been verified and
extracted, so a failure leaves the previous state untouched.
"""

from __future__ import annotations

import os
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, TextIO

from filelock import FileLock

from .errors import ClobberError, IntegrityError, PrefixError
from .lockfile import Lockfile
from .packager.archive import payload, read_archive
from .repodata import PackageRecord, _atomic_write, canonical_decode, canonical_encode, sha256_hex
from .tasks import eval_command
from .transport.client import ChannelClient

META_DIR = "conda-meta"
INSTALLED = f"{META_DIR}/installed.json"
LOCK_FILE = ".pakrat-lock"
STAGING = ".pakrat-staging"
# entries pakrat itself keeps in a prefix; never reported as drift
RESERVED = {META_DIR, LOCK_FILE, STAGING}


def prefix_path(project_root: Path | str, env_name: str) -> Path:
    return Path(project_root) / ".pakrat" / "envs" / env_name


@dataclass
class InstallReport:
    installed: list[str] = field(default_factory=list)
    bytes_fetched: int = 0
    cache_hits: int = 0
    files_changed: int = 0
    seconds: float = 0.0
    unchanged: bool = False

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DriftReport:
    modified: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    extra: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.modified or self.missing or self.extra)

    def __str__(self) -> str:
        if self.ok:
            return "prefix matches its installed manifest"
        parts = []
        for label in ("modified", "missing", "extra"):
            paths = getattr(self, label)
            if paths:
                parts.append(f"{label}: {', '.join(paths)}")
        return "; ".join(parts)


def read_installed(prefix: Path | str) -> dict | None:
    path = Path(prefix) / INSTALLED
    try:
        return canonical_decode(path.read_bytes())
    except FileNotFoundError:
        return None


def _payload_files(prefix: Path) -> list[str]:
    found = []
    for dirpath, dirnames, filenames in os.walk(prefix):
        rel = Path(dirpath).relative_to(prefix)
        if rel == Path("."):
            dirnames[:] = [d for d in dirnames if d not in RESERVED]
            filenames = [f for f in filenames if f not in RESERVED]
        for name in filenames:
            found.append((rel / name).as_posix())
    return sorted(found)


def prefix_check(prefix: Path | str) -> DriftReport:
    """Re-hash every file of ``prefix`` against its installed manifest."""
    prefix = Path(prefix)
    meta = read_installed(prefix)
    if meta is None:
        raise PrefixError(f"{prefix} is not a pakrat prefix (no {INSTALLED})")
    expected = {f["path"]: f["sha256"] for pkg in meta["packages"] for f in pkg["files"]}
    on_disk = set(_payload_files(prefix))
    report = DriftReport()
    for path, digest in sorted(expected.items()):
        target = prefix / path
        if path not in on_disk:
            report.missing.append(path)
        elif sha256_hex(target.read_bytes()) != digest:
            report.modified.append(path)
    report.extra = sorted(on_disk - set(expected))
    return report


def _same_install(meta: dict | None, records: Sequence[PackageRecord], platform: str) -> bool:
    if meta is None or meta.get("platform") != platform:
        return False
    have = [(p["filename"], p["sha256"]) for p in meta["packages"]]
    return have == [(r.filename, r.sha256) for r in records]


def install_records(
    records: Sequence[PackageRecord],
    prefix: Path | str,
    client: ChannelClient,
    platform: str,
    env_name: str = "default",
    parallel: int = 8,
) -> InstallReport:
    """Install exactly ``records`` (in order) into ``prefix``, replacing what was there."""
    started = time.monotonic()
    prefix = Path(prefix)
    prefix.mkdir(parents=True, exist_ok=True)
    before = client.metrics.as_dict()
    with FileLock(str(prefix / LOCK_FILE)):
        meta = read_installed(prefix)
        if meta is None and _payload_files(prefix):
            raise PrefixError(f"{prefix} is not empty and was not created by pakrat; refusing to install into it")
        report = InstallReport()
        if _same_install(meta, records, platform) and prefix_check(prefix).ok:
            report.unchanged = True
            report.seconds = time.monotonic() - started
            return report
        for record in records:
            if record.subdir not in (platform, "noarch"):
                raise PrefixError(f"{record.filename} is built for {record.subdir}, not {platform}")

        with ThreadPoolExecutor(max_workers=max(1, parallel)) as pool:
            archives = list(pool.map(client.fetch_package, records))

        staging = prefix / STAGING
        shutil.rmtree(staging, ignore_errors=True)
        staging.mkdir()
        try:
            packages, owners = [], {}
            for record, archive in zip(records, archives):
                files = _extract(record, archive, staging, owners)
                packages.append({
                    "filename": record.filename,
                    "url": record.url,
                    "sha256": record.sha256,
                    "files": files,
                })
            new_meta = {"environment": env_name, "platform": platform, "packages": packages}
            _swap(prefix, staging, meta)
            _atomic_write(prefix / INSTALLED, canonical_encode(new_meta))
            # the metadata file gets a reproducible mtime too
            stamp = max((r.timestamp for r in records), default=0) / 1000
            os.utime(prefix / INSTALLED, (stamp, stamp))
        finally:
            shutil.rmtree(staging, ignore_errors=True)

        after = client.metrics.as_dict()
        report.installed = [r.filename for r in records]
        report.bytes_fetched = after["bytes_downloaded"] - before["bytes_downloaded"]
        report.cache_hits = after["cache_hits"] - before["cache_hits"]
        report.files_changed = len(owners)
        report.seconds = time.monotonic() - started
        return report


def _extract(record: PackageRecord, archive: Path, staging: Path, owners: dict[str, str]) -> list[dict]:
    data = archive.read_bytes()
    if sha256_hex(data) != record.sha256:
        raise IntegrityError(f"cached archive for {record.filename} changed on disk")
    files = []
    mtime = record.timestamp / 1000
    for member in payload(read_archive(data)):
        if member.path.split("/", 1)[0] in RESERVED:
            raise IntegrityError(f"{record.filename} ships reserved path {member.path}")
        if member.path in owners:
            raise ClobberError(f"{member.path} is shipped by both {owners[member.path]} and {record.filename}")
        owners[member.path] = record.filename
        target = staging / member.path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(member.data)
        os.chmod(target, member.mode)
        os.utime(target, (mtime, mtime))
        files.append({"path": member.path, "sha256": sha256_hex(member.data)})
    return files


def _swap(prefix: Path, staging: Path, old_meta: dict | None) -> None:
    """Replace the previous payload with the staged tree."""
    if old_meta is not None:
        for pkg in old_meta["packages"]:
            for f in pkg["files"]:
                (prefix / f["path"]).unlink(missing_ok=True)
        _prune_empty_dirs(prefix)
    for dirpath, _, filenames in os.walk(staging):
        rel = Path(dirpath).relative_to(staging)
        (prefix / rel).mkdir(parents=True, exist_ok=True)
        for name in filenames:
            target = prefix / rel / name
            if target.is_dir():
                shutil.rmtree(target)
            os.replace(Path(dirpath) / name, target)


def _prune_empty_dirs(prefix: Path) -> None:
    for dirpath, _, _ in sorted(os.walk(prefix), key=lambda w: -len(w[0])):
        path = Path(dirpath)
        if path == prefix or path.name in RESERVED and path.parent == prefix:
            continue
        try:
            path.rmdir()
        except OSError:
            pass


def install(
    lockfile: Lockfile,
    env_name: str,
    platform: str,
    prefix: Path | str,
    client: ChannelClient,
) -> InstallReport:
    """Install the locked (environment, platform) closure into ``prefix``."""
    env = lockfile.environments.get(env_name)
    if env is None:
        raise PrefixError(f"environment {env_name!r} is not in the lockfile")
    if platform not in env.packages:
        locked = ", ".join(sorted(env.packages)) or "none"
        raise PrefixError(f"environment {env_name!r} is not locked for {platform} (locked: {locked})")
    return install_records(lockfile.records(env_name, platform), prefix, client, platform, env_name)


def environment_for(prefix: Path | str, activation: Mapping[str, str], base_env: Mapping[str, str] | None = None) -> dict[str, str]:
    env = dict(os.environ if base_env is None else base_env)
    env.update(activation)
    bin_dir = str(Path(prefix) / "bin")
    env["PATH"] = bin_dir + (os.pathsep + env["PATH"] if env.get("PATH") else "")
    env["CONDA_PREFIX"] = str(prefix)
    return env


def run_in_env(
    prefix: Path | str,
    command: str | Sequence[str],
    activation: Mapping[str, str],
    cwd: Path | str,
    stdout: TextIO | None = None,
    stderr: TextIO | None = None,
) -> int:
    """Run ``command`` with the environment activated; returns its exit status."""
    prefix = Path(prefix)
    if read_installed(prefix) is None:
        raise PrefixError(f"environment at {prefix} is not installed; run `pakrat install` first")
    env = environment_for(prefix, activation)
    return eval_command(command, env, cwd, stdout or sys.stdout, stderr or sys.stderr)
