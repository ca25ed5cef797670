"""The ``pakrat`` command line.

Every command returns a JSON-serializable payload; ``--json`` prints it
as-is, otherwise a short human summary is printed. Errors map to exit codes:
0 ok, 1 user or configuration error, 2 unsatisfiable, 3 integrity, 4 internal.
``pakrat run`` returns the exit status of the command or task it ran.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform as host
import shlex
import sys
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .bench import PRESETS, run_bench
from .env import environment_for, install, prefix_check, prefix_path, read_installed, run_in_env
from .errors import LockfileError, ManifestError, PakratError, TaskFailedError
from .lockfile import (
    LOCK_NAME,
    Lockfile,
    check_closure,
    load_lockfile,
    lock,
    verify_sync,
    write_lockfile,
)
from .manifest import (
    DEFAULT_ENV,
    MANIFEST_NAME,
    Manifest,
    activation_env,
    add_dependency,
    find_manifest,
    flatten,
    load_manifest,
    starter_manifest,
)
from .packager import build_path_dependency, build_recipe_file, publish, verify_reproducible
from .repodata import PLATFORMS, PackageRecord, _atomic_write, load_subdir, shard_channel, write_subdir
from .tasks import TaskRunner
from .transport import MONOLITHIC, SHARDED, CacheStore, ChannelClient, ChannelProvider, channel_url, serve

log = logging.getLogger("pakrat")

LOCAL_CHANNEL = Path(".pakrat") / "local-channel"


def host_platform() -> str:
    system = sys.platform
    machine = host.machine().lower()
    arm = machine in ("arm64", "aarch64")
    if system.startswith("linux"):
        return "linux-aarch64" if arm else "linux-64"
    if system == "darwin":
        return "osx-arm64" if arm else "osx-64"
    if system in ("win32", "cygwin"):
        return "win-64"
    raise PakratError(f"unsupported host platform {system}/{machine}; pass --platform")


# -- project session -----------------------------------------------------------


class Session:
    """State shared by the commands of one invocation: manifest, client, output."""

    def __init__(self, args: argparse.Namespace, out=None):
        self.args = args
        self.out = out or sys.stdout
        self.client = ChannelClient(CacheStore())
        self.mode = MONOLITHIC if getattr(args, "monolithic", False) else SHARDED
        self._manifest: Manifest | None = None

    # manifest and paths

    @property
    def manifest_path(self) -> Path:
        if self.args.manifest_path:
            path = Path(self.args.manifest_path)
            return path / MANIFEST_NAME if path.is_dir() else path
        return find_manifest(Path.cwd())

    @property
    def manifest(self) -> Manifest:
        if self._manifest is None:
            self._manifest = load_manifest(self.manifest_path)
            for warning in self._manifest.warnings:
                log.warning(warning)
        return self._manifest

    @property
    def root(self) -> Path:
        return self.manifest_path.resolve().parent

    @property
    def lock_path(self) -> Path:
        return self.root / LOCK_NAME

    @property
    def local_channel(self) -> Path:
        return self.root / LOCAL_CHANNEL

    @property
    def platform(self) -> str:
        wanted = self.args.platform or host_platform()
        if wanted not in self.manifest.platforms:
            raise ManifestError(
                f"platform {wanted} is not listed in the workspace platforms ({', '.join(self.manifest.platforms)})"
            )
        return wanted

    @property
    def environment(self) -> str:
        name = self.args.environment or DEFAULT_ENV
        if name not in self.manifest.environment_names():
            raise ManifestError(f"unknown environment {name!r} (known: {', '.join(self.manifest.environment_names())})")
        return name

    def provider(self, channels: list[str], platform: str) -> ChannelProvider:
        return ChannelProvider(channels, platform, self.client, self.mode)

    def say(self, text: str) -> None:
        if not self.args.json:
            print(text, file=self.out, flush=True)

    # path dependencies

    def build_local(self, platforms: list[str] | None = None, epochs: dict[str, int] | None = None) -> list[PackageRecord]:
        """Build every path dependency for ``platforms`` into the project's local channel.

        ``epochs`` pins SOURCE_DATE_EPOCH per package, which is how a fresh
        checkout rebuilds exactly the archive its lockfile recorded.
        """
        epochs = epochs or {}
        deps = self.manifest.path_dependencies()
        records: dict[str, PackageRecord] = {}
        for platform in platforms or self.manifest.platforms:
            for name, dep in sorted(deps.items()):
                directory = (self.root / dep.path).resolve()
                channels = [channel_url(c, self.root) for c in self.manifest.channels]
                artifact = build_path_dependency(
                    directory, platform, self.provider(channels, platform), epochs.get(name), client=self.client
                )
                if artifact.record.name != name:
                    raise ManifestError(f"path dependency {name!r} at {dep.path} builds a package named {artifact.record.name!r}")
                record = publish(artifact, self.local_channel)
                records[record.filename] = record
                self.say(f"built {record.filename} from {dep.path}")
        return list(records.values())

    # locking

    def relock(self) -> tuple[Lockfile, bool]:
        local = self.build_local() if self.manifest.path_dependencies() else []
        result = lock(self.manifest, self.provider, local_records=local)
        text = write_lockfile(result)
        old = self.lock_path.read_text(encoding="utf-8") if self.lock_path.exists() else None
        changed = old != text
        if changed:
            _atomic_write(self.lock_path, text.encode("utf-8"))
        return result, changed

    def current_lock(self, auto_lock: bool, locked: bool = False) -> Lockfile:
        if not self.lock_path.exists():
            if not auto_lock:
                raise LockfileError(f"no {LOCK_NAME} next to {self.manifest_path.name}; run `pakrat lock` first or pass --auto-lock")
            self.say(f"no {LOCK_NAME} yet; locking")
            return self.relock()[0]
        current = load_lockfile(self.lock_path)
        status = verify_sync(self.manifest, current)
        if status.fresh:
            return current
        if locked:
            raise LockfileError(f"{LOCK_NAME} is out of date and --locked was given\n{status}")
        self.say(f"{LOCK_NAME} is out of date; relocking")
        return self.relock()[0]

    # installing

    def ensure_installed(self, env_name: str, platform: str, auto_lock: bool, locked: bool = False):
        current = self.current_lock(auto_lock, locked)
        records = current.records(env_name, platform)
        local_uri = self.local_channel.resolve().as_uri()
        missing = [r for r in records if r.url and r.url.startswith(local_uri + "/") and not _file_of(r.url).exists()]
        if missing:
            # a fresh checkout: rebuild path dependencies at their locked epoch;
            # a build that still differs fails the digest check at install time
            self.build_local([platform], {r.name: r.timestamp // 1000 for r in missing})
        prefix = prefix_path(self.root, env_name)
        report = install(current, env_name, platform, prefix, self.client)
        return prefix, report


def _file_of(url: str) -> Path:
    from urllib.parse import urlparse
    from urllib.request import url2pathname

    return Path(url2pathname(urlparse(url).path))


# -- commands ------------------------------------------------------------------


def cmd_init(s: Session) -> dict:
    directory = Path(s.args.path or ".").resolve()
    target = directory / MANIFEST_NAME
    if target.exists():
        raise ManifestError(f"{target} already exists")
    directory.mkdir(parents=True, exist_ok=True)
    platforms = s.args.platforms or [s.args.platform or host_platform()]
    channels = s.args.channels or ["conda-forge"]
    _atomic_write(target, starter_manifest(s.args.name or directory.name.lower(), channels, platforms).encode())
    s.say(f"created {target}")
    return {"manifest": str(target)}


def cmd_add(s: Session) -> dict:
    path = s.manifest_path
    original = path.read_text(encoding="utf-8")
    text = original
    for spec in s.args.specs:
        text = add_dependency(text, spec, s.args.feature, s.args.target)
    _atomic_write(path, text.encode("utf-8"))
    locked = False
    if not s.args.no_lock:
        try:
            s._manifest = None
            s.relock()
            locked = True
        except PakratError:
            # leave the project as it was when the new requirement cannot be locked
            _atomic_write(path, original.encode("utf-8"))
            raise
    s.say(f"added {', '.join(s.args.specs)} to {path.name}" + (" and relocked" if locked else ""))
    return {"added": list(s.args.specs), "manifest": str(path), "locked": locked}


def _lock_summary(result: Lockfile) -> dict:
    return {env: {plat: len(urls) for plat, urls in sorted(e.packages.items())} for env, e in sorted(result.environments.items())}


def cmd_lock(s: Session) -> dict:
    result, changed = s.relock()
    summary = _lock_summary(result)
    for env, plats in summary.items():
        for plat, n in plats.items():
            s.say(f"{env} / {plat}: {n} packages")
    s.say(f"{'wrote' if changed else 'unchanged'} {s.lock_path}")
    return {"lockfile": str(s.lock_path), "changed": changed, "environments": summary}


def cmd_install(s: Session) -> dict:
    env_name, platform = s.environment, s.platform
    prefix, report = s.ensure_installed(env_name, platform, s.args.auto_lock, s.args.locked)
    if report.unchanged:
        s.say(f"{env_name} is up to date at {prefix}")
    else:
        s.say(f"installed {len(report.installed)} packages into {prefix} ({report.bytes_fetched} bytes fetched, {report.cache_hits} from cache)")
    return {"environment": env_name, "platform": platform, "prefix": str(prefix), **report.as_dict()}


def cmd_run(s: Session) -> dict:
    env_name, platform = s.environment, s.platform
    prefix, _ = s.ensure_installed(env_name, platform, s.args.auto_lock, s.args.locked)
    ctx = flatten(s.manifest, env_name, platform)
    act = activation_env(ctx, s.root)
    name, extra = s.args.task, s.args.args
    if name in ctx.tasks:
        tasks = dict(ctx.tasks)
        if extra:
            task = tasks[name]
            cmd = task.cmd + tuple(extra) if isinstance(task.cmd, tuple) else task.cmd + " " + " ".join(map(shlex.quote, extra))
            tasks[name] = replace(task, cmd=cmd)
        runner = TaskRunner(tasks, s.root, env=environment_for(prefix, act))
        try:
            reports = runner.run(name, force=s.args.force)
        except TaskFailedError as exc:
            return {"task": name, "exit_code": exc.status, "tasks": [_task_doc(r) for r in exc.report]}
        return {"task": name, "exit_code": 0, "tasks": [_task_doc(r) for r in reports]}
    status = run_in_env(prefix, [name, *extra], act, Path.cwd())
    return {"command": [name, *extra], "exit_code": status}


def _task_doc(report) -> dict:
    return {"name": report.name, "status": report.status, "exit_code": report.exit_code}


def cmd_build(s: Session) -> dict:
    recipe = Path(s.args.recipe)
    if recipe.is_dir():
        recipe = recipe / "recipe.yaml"
    platform = s.args.platform or host_platform()
    provider = None
    if s.args.channels:
        provider = ChannelProvider([channel_url(c, Path.cwd()) for c in s.args.channels], platform, s.client, s.mode)
    overrides = dict(v.split("=", 1) for v in s.args.define or ())
    artifact = build_recipe_file(
        recipe, platform, overrides, source_date_epoch=s.args.source_date_epoch, provider=provider, client=s.client
    )
    for notice in artifact.notices:
        log.warning(notice)
    output = Path(s.args.output_dir)
    record = publish(artifact, output)
    path = output / record.subdir / record.filename
    s.say(f"built {path} (sha256 {record.sha256})")
    payload: dict[str, Any] = {"artifact": str(path), "record": record.to_dict(), "channel": record.channel}
    if s.args.check_reproducible:
        text = recipe.read_text(encoding="utf-8")
        report = verify_reproducible(text, platform, recipe_dir=recipe.parent, source_date_epoch=s.args.source_date_epoch, provider=provider, client=s.client)
        s.say(str(report))
        payload["reproducible"] = report.ok
        payload["difference"] = str(report.difference) if report.difference else None
        if not report.ok:
            payload["exit_code"] = 1
    return payload


def cmd_shard(s: Session) -> dict:
    source = Path(s.args.repodata)
    mono = load_subdir(source.parent) if source.name == "repodata.json" else None
    if mono is None:
        raise ManifestError(f"{source} is not a repodata.json file")
    output = Path(s.args.output) if s.args.output else source.parent
    index = write_subdir(output, mono)
    _, shards = shard_channel(mono)
    payload = {
        "subdir": mono.subdir,
        "names": len(index.shards),
        "records": len(mono.packages),
        "repodata_bytes": len(mono.encode()),
        "index_bytes": len(index.encode()),
        "shard_bytes": sum(len(sh.encode()) for sh in shards.values()),
        "output": str(output),
    }
    s.say(f"{mono.subdir}: {payload['records']} records in {payload['names']} shards written to {output}")
    return payload


def cmd_serve(s: Session) -> dict:
    server = serve(Path(s.args.directory), host=s.args.host, port=s.args.port, token=s.args.token)
    if s.args.json:
        print(json.dumps({"url": server.url}), file=s.out, flush=True)
    else:
        s.say(f"serving {s.args.directory} at {server.url} (Ctrl-C to stop)")
    try:
        server.wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return {"url": server.url}


def cmd_bench(s: Session) -> dict:
    modes = (SHARDED, MONOLITHIC) if s.args.mode == "both" else (s.args.mode,)
    reports = run_bench(s.args.preset, modes, s.args.runs)
    for r in reports:
        s.say(
            f"{r.preset:6} {r.mode:10} run {r.run} ({'warm' if r.warm else 'cold'}): "
            f"{r.bytes_downloaded:>9} bytes, {r.requests:>3} requests, {r.shard_gets:>3} shard GETs, "
            f"{r.selected} packages, solve {r.solve_seconds:.3f}s"
        )
    cold = {r.mode: r.bytes_downloaded for r in reports if not r.warm}
    payload: dict[str, Any] = {"reports": [r.as_dict() for r in reports]}
    if cold.get(SHARDED) and cold.get(MONOLITHIC):
        payload["byte_ratio"] = round(cold[MONOLITHIC] / cold[SHARDED], 2)
        s.say(f"monolithic / sharded bytes (cold): {payload['byte_ratio']}x")
    return payload


def cmd_check(s: Session) -> dict:
    problems = 0
    if not s.lock_path.exists():
        raise LockfileError(f"no {LOCK_NAME}; run `pakrat lock` first")
    current = load_lockfile(s.lock_path)
    status = verify_sync(s.manifest, current)
    problems += len(status.reasons)
    s.say(f"lockfile: {status}")
    violations = check_closure(current)
    problems += len(violations)
    for v in violations:
        s.say(f"closure: {v}")
    prefixes = {}
    envs_dir = s.root / ".pakrat" / "envs"
    for env_dir in sorted(envs_dir.iterdir()) if envs_dir.is_dir() else ():
        if read_installed(env_dir) is None:
            continue
        drift = prefix_check(env_dir)
        prefixes[env_dir.name] = {"modified": drift.modified, "missing": drift.missing, "extra": drift.extra}
        problems += 0 if drift.ok else 1
        s.say(f"prefix {env_dir.name}: {drift}")
    ok = problems == 0
    return {
        "ok": ok,
        "sync": {"fresh": status.fresh, "reasons": status.reasons},
        "closure": [str(v) for v in violations],
        "prefixes": prefixes,
        "exit_code": 0 if ok else 1,
    }


COMMANDS: dict[str, Callable[[Session], dict]] = {
    "init": cmd_init,
    "add": cmd_add,
    "lock": cmd_lock,
    "install": cmd_install,
    "run": cmd_run,
    "build": cmd_build,
    "shard": cmd_shard,
    "serve": cmd_serve,
    "bench": cmd_bench,
    "check": cmd_check,
}


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the flags appear before or after the subcommand
    common.add_argument("--manifest-path", default=argparse.SUPPRESS, help="path to pakrat.toml or its directory")
    common.add_argument("--platform", default=argparse.SUPPRESS, choices=PLATFORMS, help="target platform (default: this machine)")
    common.add_argument("-e", "--environment", default=argparse.SUPPRESS, help="environment name (default: default)")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")
    common.add_argument("--monolithic", action="store_true", default=argparse.SUPPRESS, help="fetch repodata.json instead of shards")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="pakrat", parents=[common], description="Reproducible environments from a manifest and a lockfile.")
    parser.add_argument("--version", action="version", version=f"pakrat {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("init", parents=[common], help="write a starter manifest")
    p.add_argument("path", nargs="?")
    p.add_argument("--name")
    p.add_argument("-c", "--channel", dest="channels", action="append")
    p.add_argument("--platforms", nargs="+", choices=PLATFORMS)

    p = sub.add_parser("add", parents=[common], help="add dependencies and relock")
    p.add_argument("specs", nargs="+", metavar="SPEC")
    p.add_argument("--feature")
    p.add_argument("--target", choices=PLATFORMS, help="add to [target.<platform>.dependencies]")
    p.add_argument("--no-lock", action="store_true")

    sub.add_parser("lock", parents=[common], help="solve every environment and write pakrat.lock")

    for name, helptext in (("install", "install an environment from the lockfile"), ("run", "run a task or command in an environment")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--auto-lock", action="store_true", help="create the lockfile if it is missing")
        p.add_argument("--locked", action="store_true", help="fail instead of relocking when the lockfile is stale")
        if name == "run":
            p.add_argument("--force", action="store_true", help="ignore the task cache")
            p.add_argument("task")
            p.add_argument("args", nargs=argparse.REMAINDER)

    p = sub.add_parser("build", parents=[common], help="build a package from a recipe")
    p.add_argument("recipe")
    p.add_argument("--output-dir", default="output", help="local channel to publish into (default: ./output)")
    p.add_argument("--source-date-epoch", type=int)
    p.add_argument("-c", "--channel", dest="channels", action="append", help="channel for build requirements")
    p.add_argument("-D", "--define", action="append", metavar="VAR=VALUE", help="override a context variable")
    p.add_argument("--check-reproducible", action="store_true", help="build twice more and compare")

    p = sub.add_parser("shard", parents=[common], help="split a repodata.json into content-addressed shards")
    p.add_argument("repodata")
    p.add_argument("--output", help="subdir directory to write (default: next to the input)")

    p = sub.add_parser("serve", parents=[common], help="serve a channel directory over HTTP")
    p.add_argument("directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--token")

    p = sub.add_parser("bench", parents=[common], help="compare sharded and monolithic metadata fetching")
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("--mode", choices=(SHARDED, MONOLITHIC, "both"), default="both")
    p.add_argument("--runs", type=int, default=2)

    sub.add_parser("check", parents=[common], help="verify lockfile sync, closure and installed prefixes")
    return parser


def _defaults(args: argparse.Namespace) -> argparse.Namespace:
    for key, value in (("manifest_path", None), ("platform", None), ("environment", None), ("json", False), ("monolithic", False), ("verbose", 0)):
        if not hasattr(args, key):
            setattr(args, key, value)
    return args


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = _defaults(parser.parse_args(argv))
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 1
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    session = Session(args, out)
    try:
        payload = COMMANDS[args.command](session)
        code = int(payload.pop("exit_code", 0)) if args.command in ("run", "check", "build") else 0
        if args.command == "run":
            payload["exit_code"] = code
        if args.json and args.command != "serve":
            print(json.dumps(payload, indent=2, sort_keys=True, default=str), file=out, flush=True)
        return code
    except PakratError as exc:
        return _report_error(args, out, exc, exc.exit_code)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error code
        if args.verbose:
            traceback.print_exc()
        return _report_error(args, out, exc, 4, internal=True)


def _report_error(args, out, exc: BaseException, code: int, internal: bool = False) -> int:
    if args.json:
        doc = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
        print(json.dumps(doc, indent=2, sort_keys=True), file=out, flush=True)
    else:
        prefix = "internal error" if internal else "error"
        print(f"{prefix}: {exc}", file=sys.stderr, flush=True)
    return code


if __name__ == "__main__":
    sys.exit(main())
