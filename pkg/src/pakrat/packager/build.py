"""The build pipeline: render, fetch sources, prepare, run, normalize, assemble, check.

The archive produced for a recipe is a pure function of the rendered recipe,
the source bytes and the source date epoch. Scripts may create files in any
order, at any wall-clock time, in any working directory: assembly sorts the
members, pins timestamps and owners, and rewrites the absolute build paths
that leak into text files to the ``$PREFIX`` token.
"""

from __future__ import annotations

import hashlib
import io
import os
import shutil
import sys
import tarfile
import tempfile
import urllib.request
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath
from typing import Any, Mapping

from ..errors import BuildError, PakratError, RecipeError
from ..manifest import MANIFEST_NAME, load_manifest
from ..repodata import (
    MonolithicRepodata,
    PackageRecord,
    _atomic_write,
    canonical_encode,
    load_subdir,
    sha256_hex,
    write_subdir,
)
from ..tasks import eval_command
from ..transport.client import channel_url
from .archive import FILES_LIST, INDEX_JSON, RENDERED_RECIPE, ArchiveDifference, Member, diff_archives, write_archive
from .render import RenderedRecipe, render

RECIPE_NAME = "recipe.yaml"
ARCHIVE_SOURCE_SUFFIXES = (".tar.gz", ".tgz", ".tar.bz2", ".tar.xz", ".tar", ".zip")
# never copied from a local source directory
SKIP_SOURCE_NAMES = {".git", ".pakrat", "__pycache__"}
PREFIX_TOKEN = b"$PREFIX"


@dataclass
class PackageArtifact:
    archive: bytes
    record: PackageRecord
    files: list[str]
    rendered: RenderedRecipe
    log: str = ""
    notices: list[str] = field(default_factory=list)

    @property
    def filename(self) -> str:
        return self.record.filename

    def write_to(self, directory: Path | str) -> Path:
        path = Path(directory) / self.filename
        _atomic_write(path, self.archive)
        return path


# -- stage 2: sources --------------------------------------------------------


def _fetch_url(url: str) -> bytes:
    try:
        with urllib.request.urlopen(url, timeout=60) as resp:
            return resp.read()
    except (OSError, ValueError) as exc:
        raise BuildError("source acquisition", f"cannot fetch {url}: {exc}") from None


def _unpack(data: bytes, name: str, dest: Path) -> None:
    """Extract a source archive, dropping a single shared top-level directory."""
    tmp = dest.parent / (dest.name + ".unpack")
    tmp.mkdir()
    try:
        if name.endswith(".zip"):
            with zipfile.ZipFile(io.BytesIO(data)) as zf:
                for info in zf.infolist():
                    _safe_rel(info.filename)
                zf.extractall(tmp)
        else:
            with tarfile.open(fileobj=io.BytesIO(data), mode="r:*") as tf:
                members = [m for m in tf.getmembers() if m.isreg() or m.isdir()]
                for m in members:
                    _safe_rel(m.name)
                tf.extractall(tmp, members=members)
        entries = list(tmp.iterdir())
        root = entries[0] if len(entries) == 1 and entries[0].is_dir() else tmp
        shutil.copytree(root, dest, dirs_exist_ok=True)
    except (tarfile.TarError, zipfile.BadZipFile, OSError) as exc:
        raise BuildError("source acquisition", f"cannot unpack {name}: {exc}") from None
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _safe_rel(path: str) -> None:
    pure = PurePosixPath(path)
    if pure.is_absolute() or ".." in pure.parts:
        raise BuildError("source acquisition", f"source archive member escapes the source directory: {path}")


def _verify(data: bytes, expected: str | None, what: str) -> None:
    if expected and sha256_hex(data) != expected.lower():
        raise BuildError("source acquisition", f"sha256 mismatch for {what}: expected {expected}, got {sha256_hex(data)}")


def _ignore(_dir: str, names: list[str]) -> set[str]:
    return {n for n in names if n in SKIP_SOURCE_NAMES}


def acquire_sources(rendered: RenderedRecipe, src_dir: Path, recipe_dir: Path | None) -> int:
    """Populate ``src_dir``; returns the newest mtime among local source files."""
    src_dir.mkdir(parents=True, exist_ok=True)
    newest = 0
    for i, source in enumerate(rendered.sources):
        if "url" in source:
            url = source["url"]
            data = _fetch_url(url)
            _verify(data, source.get("sha256"), url)
            name = url.rsplit("/", 1)[-1] or f"source-{i}"
            if name.endswith(ARCHIVE_SOURCE_SUFFIXES):
                _unpack(data, name, src_dir)
            else:
                (src_dir / name).write_bytes(data)
            continue
        raw = Path(source["path"])
        if not raw.is_absolute():
            if recipe_dir is None:
                raise BuildError("source acquisition", f"relative source path {raw} needs a recipe directory")
            raw = recipe_dir / raw
        if not raw.exists():
            raise BuildError("source acquisition", f"source path {raw} does not exist")
        if raw.is_dir():
            if source.get("sha256"):
                raise BuildError("source acquisition", f"sha256 given for directory source {raw}")
            shutil.copytree(raw, src_dir, dirs_exist_ok=True, ignore=_ignore)
            for dirpath, dirnames, filenames in os.walk(raw):
                dirnames[:] = [d for d in dirnames if d not in SKIP_SOURCE_NAMES]
                for fn in filenames:
                    newest = max(newest, int(os.stat(os.path.join(dirpath, fn)).st_mtime))
        else:
            data = raw.read_bytes()
            _verify(data, source.get("sha256"), str(raw))
            newest = max(newest, int(raw.stat().st_mtime))
            if raw.name.endswith(ARCHIVE_SOURCE_SUFFIXES):
                _unpack(data, raw.name, src_dir)
            else:
                shutil.copy2(raw, src_dir / raw.name)
    return newest


# -- stage 3: build environment ---------------------------------------------


def prepare_environment(rendered: RenderedRecipe, build_prefix: Path, provider, client) -> list[str]:
    specs = rendered.requirements("build") + rendered.requirements("host")
    build_prefix.mkdir(parents=True, exist_ok=True)
    if not specs:
        return []
    if provider is None:
        raise BuildError(
            "environment preparation",
            f"recipe requires {', '.join(specs)} but no package provider was given",
        )
    from ..env import install_records
    from ..solver import solve
    from ..transport import CacheStore, ChannelClient

    try:
        solution = solve(specs, provider)
        client = client or getattr(provider, "client", None) or ChannelClient(CacheStore())
        records = solution.records()
        install_records(records, build_prefix, client, rendered.platform, env_name="build")
    except PakratError as exc:
        raise BuildError("environment preparation", str(exc)) from None
    return [r.filename for r in records]


# -- stage 5: binary preparation ---------------------------------------------


def _path_variants(*paths: Path) -> list[bytes]:
    variants = set()
    for p in paths:
        for form in (str(p), os.path.realpath(p)):
            variants.add(form.encode())
    # longest first so a prefix of a longer path does not win
    return sorted(variants, key=len, reverse=True)


def collect_payload(prefix: Path, strip: list[bytes]) -> list[Member]:
    members = []
    for dirpath, dirnames, filenames in os.walk(prefix, followlinks=False):
        dirnames.sort()
        for fn in sorted(filenames) + sorted(d for d in dirnames if os.path.islink(os.path.join(dirpath, d))):
            full = Path(dirpath) / fn
            rel = full.relative_to(prefix).as_posix()
            if rel == "info" or rel.startswith("info/"):
                raise BuildError("binary preparation", f"{rel}: the info/ directory is reserved for package metadata")
            if full.is_symlink():
                target = os.path.realpath(full)
                if not target.startswith(os.path.realpath(prefix) + os.sep) or not os.path.isfile(target):
                    raise BuildError("binary preparation", f"{rel}: symlink points outside the package or is dangling")
            data = full.read_bytes()
            if b"\0" not in data:
                for needle in strip:
                    data = data.replace(needle, PREFIX_TOKEN)
            executable = bool(os.stat(full).st_mode & 0o111)
            members.append(Member(rel, data, executable))
    return members


# -- stage 7: quality assurance ----------------------------------------------


def check_package_contents(rendered: RenderedRecipe, paths: list[str]) -> list[str]:
    """Human-readable descriptions of every expected path that is absent."""
    wanted = rendered.package_contents()
    present = set(paths)
    windows = rendered.platform.startswith("win")
    missing = []
    for name in wanted["lib"]:
        stem = name if not windows else name.removeprefix("lib")
        found = any(
            p.startswith(("lib/", "bin/")) and (PurePosixPath(p).name == stem or PurePosixPath(p).name.startswith(stem + "."))
            for p in present
        )
        if not found:
            missing.append(f"lib/{name}.*")
    for name in wanted["include"]:
        if f"include/{name}" not in present:
            missing.append(f"include/{name}")
    for name in wanted["bin"]:
        candidates = [f"bin/{name}"] + ([f"bin/{name}.exe", f"bin/{name}.bat"] if windows else [])
        if not present.intersection(candidates):
            missing.append(f"bin/{name}")
    return missing


# -- the pipeline ------------------------------------------------------------


def resolve_source_date_epoch(explicit: int | None, newest_source: int) -> int:
    if explicit is not None:
        return int(explicit)
    env = os.environ.get("SOURCE_DATE_EPOCH")
    if env:
        try:
            return int(env)
        except ValueError:
            raise BuildError("source acquisition", f"SOURCE_DATE_EPOCH={env!r} is not an integer") from None
    return newest_source


def build(
    rendered: RenderedRecipe,
    workdir: Path | str | None = None,
    source_date_epoch: int | None = None,
    provider=None,
    recipe_dir: Path | str | None = None,
    client=None,
    keep_workdir: bool = False,
) -> PackageArtifact:
    """Run stages 2-7 for an already rendered recipe."""
    owned = workdir is None
    work = Path(tempfile.mkdtemp(prefix="pakrat-build-")) if owned else Path(workdir)
    work.mkdir(parents=True, exist_ok=True)
    recipe_dir = Path(recipe_dir).resolve() if recipe_dir is not None else None
    try:
        src_dir, prefix, build_prefix = work / "src", work / "prefix", work / "build_env"
        for d in (src_dir, prefix, build_prefix):
            shutil.rmtree(d, ignore_errors=True)
        newest = acquire_sources(rendered, src_dir, recipe_dir)
        epoch = resolve_source_date_epoch(source_date_epoch, newest)

        build_env = prepare_environment(rendered, build_prefix, provider, client)

        prefix.mkdir()
        env = dict(os.environ)
        env.update({
            "PREFIX": str(prefix),
            "SRC_DIR": str(src_dir),
            "BUILD_PREFIX": str(build_prefix),
            "PKG_NAME": rendered.name,
            "PKG_VERSION": rendered.version,
            "PKG_BUILDNUM": str(rendered.build_number),
            "SOURCE_DATE_EPOCH": str(epoch),
            "PYTHON": sys.executable,
            "target_platform": rendered.platform,
        })
        env["PATH"] = str(build_prefix / "bin") + os.pathsep + env.get("PATH", "")
        captured = io.StringIO()
        for line in rendered.script:
            try:
                status = eval_command(line, env, src_dir, captured, captured)
            except PakratError as exc:
                raise BuildError("build execution", f"{line!r}: {exc}", captured.getvalue()) from None
            if status != 0:
                raise BuildError("build execution", f"{line!r} exited with status {status}", captured.getvalue())

        members = collect_payload(prefix, _path_variants(prefix, build_prefix, src_dir, work))
        paths = sorted(m.path for m in members)

        document = dict(rendered.document)
        document["build_environment"] = build_env
        final = RenderedRecipe(document, rendered.notices)
        record = PackageRecord(
            name=rendered.name,
            version=rendered.version,
            build=rendered.build_string,
            build_number=rendered.build_number,
            subdir=rendered.subdir,
            depends=tuple(rendered.requirements("run")),
            timestamp=epoch * 1000,
            license=rendered.license,
            sha256="0" * 64,
        )
        index = {k: v for k, v in record.to_dict().items() if k not in ("sha256", "size", "md5")}
        if rendered.noarch:
            index["noarch"] = rendered.noarch
        meta = [
            Member(INDEX_JSON, canonical_encode(index)),
            Member(FILES_LIST, "".join(p + "\n" for p in paths).encode("utf-8")),
            Member(RENDERED_RECIPE, final.to_yaml().encode("utf-8")),
        ]
        archive = write_archive(members + meta, epoch)

        missing = check_package_contents(rendered, paths)
        if missing:
            raise BuildError("quality assurance", "package_contents: missing " + ", ".join(missing), captured.getvalue())

        record = replace(record, sha256=sha256_hex(archive), md5=hashlib.md5(archive).hexdigest(), size=len(archive))
        return PackageArtifact(archive, record, paths, final, captured.getvalue(), list(rendered.notices))
    finally:
        if owned and not keep_workdir:
            shutil.rmtree(work, ignore_errors=True)


def build_recipe_file(
    recipe_path: Path | str,
    platform: str,
    overrides: Mapping[str, str] | None = None,
    **kwargs: Any,
) -> PackageArtifact:
    recipe_path = Path(recipe_path)
    try:
        text = recipe_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise RecipeError(f"cannot read recipe {recipe_path}: {exc}") from None
    rendered = render(text, platform, overrides)
    kwargs.setdefault("recipe_dir", recipe_path.parent)
    return build(rendered, **kwargs)


# -- reproducibility ---------------------------------------------------------


@dataclass
class ReproReport:
    digests: list[str]
    difference: ArchiveDifference | None = None

    @property
    def ok(self) -> bool:
        return len(set(self.digests)) == 1

    def __str__(self) -> str:
        if self.ok:
            return f"reproducible: {len(self.digests)} builds, sha256 {self.digests[0]}"
        return f"NOT reproducible: {self.difference}"


def verify_reproducible(
    recipe: str | RenderedRecipe,
    platform: str = "linux-64",
    n: int = 2,
    recipe_dir: Path | str | None = None,
    source_date_epoch: int | None = None,
    provider=None,
    client=None,
) -> ReproReport:
    """Build ``n`` times in fresh working directories and compare the archives."""
    if n < 2:
        raise ValueError("need at least two builds to compare")
    archives = []
    for i in range(n):
        rendered = render(recipe, platform) if isinstance(recipe, str) else recipe
        with tempfile.TemporaryDirectory(prefix=f"pakrat-repro-{i}-") as work:
            art = build(rendered, Path(work) / f"w{i}", source_date_epoch, provider, recipe_dir, client)
        archives.append(art.archive)
    digests = [sha256_hex(a) for a in archives]
    report = ReproReport(digests)
    for other in archives[1:]:
        diff = diff_archives(archives[0], other)
        if diff is not None:
            report.difference = diff
            break
    return report


# -- path dependencies and local channels ------------------------------------


def recipe_from_package_table(table: Mapping[str, Any]) -> dict[str, Any]:
    """Translate a manifest ``[package]`` table into an equivalent recipe document."""
    if "name" not in table or "version" not in table:
        raise RecipeError("[package] needs 'name' and 'version'")
    build_table = table.get("build") or {}
    if not isinstance(build_table, dict):
        raise RecipeError("[package.build] must be a table")
    script = build_table.get("script")
    if not script:
        raise RecipeError("[package.build] needs a 'script'")
    doc: dict[str, Any] = {
        "package": {"name": str(table["name"]), "version": str(table["version"])},
        "source": [{"path": "."}],
        "build": {"number": str(build_table.get("number", 0)), "script": script if isinstance(script, list) else [script]},
    }
    if build_table.get("noarch"):
        doc["build"]["noarch"] = str(build_table["noarch"])
    for key in ("requirements", "tests", "about", "context"):
        if key in table:
            doc[key] = _stringify(table[key])
    return doc


def _stringify(node: Any) -> Any:
    if isinstance(node, dict):
        return {str(k): _stringify(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_stringify(v) for v in node]
    if isinstance(node, bool):
        return "true" if node else "false"
    return str(node)


def render_path_dependency(directory: Path | str, platform: str) -> RenderedRecipe:
    """The script backend: a ``recipe.yaml``, or a manifest with a ``[package]`` table."""
    directory = Path(directory)
    recipe = directory / RECIPE_NAME
    if recipe.is_file():
        return render(recipe.read_text(encoding="utf-8"), platform)
    manifest_path = directory / MANIFEST_NAME
    if manifest_path.is_file():
        manifest = load_manifest(manifest_path)
        if manifest.package is not None:
            return render(recipe_from_package_table(manifest.package), platform)
    raise RecipeError(f"{directory} has neither {RECIPE_NAME} nor a {MANIFEST_NAME} with a [package] table")


def build_path_dependency(
    directory: Path | str,
    platform: str,
    provider=None,
    source_date_epoch: int | None = None,
    client=None,
) -> PackageArtifact:
    directory = Path(directory)
    if not directory.is_dir():
        raise RecipeError(f"path dependency {directory} is not a directory")
    rendered = render_path_dependency(directory, platform)
    return build(rendered, None, source_date_epoch, provider, directory, client)


def publish(artifact: PackageArtifact, channel_dir: Path | str) -> PackageRecord:
    """Add an artifact to a local channel directory and regenerate its index."""
    channel_dir = Path(channel_dir)
    subdir = artifact.record.subdir
    subdir_dir = channel_dir / subdir
    artifact.write_to(subdir_dir)
    existing = load_subdir(subdir_dir).packages if (subdir_dir / "repodata.json").exists() else {}
    packages = dict(existing)
    packages[artifact.filename] = artifact.record
    write_subdir(subdir_dir, MonolithicRepodata.from_records(subdir, packages.values()))
    return artifact.record.with_channel(channel_url(str(channel_dir)))
