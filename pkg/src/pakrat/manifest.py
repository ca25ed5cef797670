"""Workspace manifest (``pakrat.toml``): parsing, validation and flattening.

A manifest declares dependencies at four levels of specificity. When the same
package name appears at several of them the most specific one wins::

    feature-target  >  feature  >  workspace-target  >  workspace

Target keys are either a concrete platform (``linux-64``) or a platform family
(``linux``, ``osx``, ``win``, ``unix``); a family entry is less specific than a
concrete platform entry at the same level.
"""

from __future__ import annotations

import logging
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import tomlkit

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ManifestError, VersionError
from .repodata import PLATFORMS
from .version import MatchSpec, parse_spec

log = logging.getLogger(__name__)

MANIFEST_NAME = "pakrat.toml"
DEFAULT_ENV = "default"

KNOWN_TABLES = (
    "workspace",
    "project",
    "dependencies",
    "target",
    "tasks",
    "feature",
    "environments",
    "activation",
    "system-requirements",
    "package",
)
WORKSPACE_KEYS = {
    "name", "version", "description", "authors", "channels", "platforms", "preview",
    "license", "readme", "homepage", "repository", "documentation",
}
TASK_KEYS = {"cmd", "depends-on", "depends_on", "inputs", "outputs", "env", "cwd", "description"}
FAMILIES = {
    "linux": lambda p: p.startswith("linux-"),
    "osx": lambda p: p.startswith("osx-"),
    "win": lambda p: p.startswith("win-"),
    "unix": lambda p: p.startswith(("linux-", "osx-")),
}
_NAME_RE = re.compile(r"[a-z0-9_][a-z0-9_.\-]*\Z")
_VAR_RE = re.compile(r"\$(?:\{([A-Za-z_][A-Za-z0-9_]*)\}|([A-Za-z_][A-Za-z0-9_]*))")


# -- data model ----------------------------------------------------------------


@dataclass(frozen=True)
class Dependency:
    """A manifest dependency: a match spec, or a path to a locally built package."""

    name: str
    spec: MatchSpec
    path: str | None = None

    @property
    def is_path(self) -> bool:
        return self.path is not None

    def to_toml(self) -> Any:
        if self.path is None:
            return self.spec.constraint_text()
        out = {"path": self.path}
        if self.spec.constraints:
            out["version"] = self.spec.constraint_text()
        return out


@dataclass(frozen=True)
class TaskDef:
    cmd: str | tuple[str, ...]
    depends_on: tuple[str, ...] = ()
    inputs: tuple[str, ...] | None = None
    outputs: tuple[str, ...] | None = None
    env: tuple[tuple[str, str], ...] = ()
    cwd: str | None = None
    description: str | None = None

    @property
    def env_map(self) -> dict[str, str]:
        return dict(self.env)

    def to_document(self) -> dict[str, Any]:
        """Plain-data form, used for serialization and for task cache keys."""
        doc: dict[str, Any] = {"cmd": list(self.cmd) if isinstance(self.cmd, tuple) else self.cmd}
        if self.depends_on:
            doc["depends-on"] = list(self.depends_on)
        if self.inputs is not None:
            doc["inputs"] = list(self.inputs)
        if self.outputs is not None:
            doc["outputs"] = list(self.outputs)
        if self.env:
            doc["env"] = dict(self.env)
        if self.cwd is not None:
            doc["cwd"] = self.cwd
        if self.description is not None:
            doc["description"] = self.description
        return doc

    def to_toml(self) -> Any:
        doc = self.to_document()
        if list(doc) == ["cmd"] and isinstance(self.cmd, str):
            return self.cmd
        return doc


@dataclass
class Activation:
    scripts: list[str] = field(default_factory=list)
    env: dict[str, str | list[str]] = field(default_factory=dict)

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {}
        if self.scripts:
            doc["scripts"] = list(self.scripts)
        if self.env:
            doc["env"] = dict(self.env)
        return doc


@dataclass
class TargetTable:
    dependencies: dict[str, Dependency] = field(default_factory=dict)
    tasks: dict[str, TaskDef] = field(default_factory=dict)
    activation: Activation = field(default_factory=Activation)


@dataclass
class Feature:
    name: str
    dependencies: dict[str, Dependency] = field(default_factory=dict)
    target: dict[str, TargetTable] = field(default_factory=dict)
    tasks: dict[str, TaskDef] = field(default_factory=dict)
    activation: Activation = field(default_factory=Activation)


@dataclass
class EnvironmentDef:
    features: list[str] = field(default_factory=list)
    no_default_feature: bool = False


@dataclass
class Manifest:
    name: str | None
    channels: list[str]
    platforms: list[str]
    version: str | None = None
    preview: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)
    dependencies: dict[str, Dependency] = field(default_factory=dict)
    target: dict[str, TargetTable] = field(default_factory=dict)
    tasks: dict[str, TaskDef] = field(default_factory=dict)
    features: dict[str, Feature] = field(default_factory=dict)
    environments: dict[str, EnvironmentDef] = field(default_factory=dict)
    activation: Activation = field(default_factory=Activation)
    system_requirements: dict[str, Any] = field(default_factory=dict)
    package: dict[str, Any] | None = None
    root: Path | None = field(default=None, compare=False)
    warnings: list[str] = field(default_factory=list, compare=False)

    @property
    def target_dependencies(self) -> dict[str, dict[str, Dependency]]:
        return {key: t.dependencies for key, t in self.target.items() if t.dependencies}

    def environment(self, name: str) -> EnvironmentDef:
        if name in self.environments:
            return self.environments[name]
        if name == DEFAULT_ENV:
            return EnvironmentDef()
        raise ManifestError(f"undefined environment {name!r} (declared: {', '.join(self.environment_names())})")

    def environment_names(self) -> list[str]:
        names = list(self.environments)
        if DEFAULT_ENV not in names:
            names.insert(0, DEFAULT_ENV)
        return names

    def path_dependencies(self) -> dict[str, Dependency]:
        out = {}
        tables = [self.dependencies, *(t.dependencies for t in self.target.values())]
        for feature in self.features.values():
            tables.append(feature.dependencies)
            tables.extend(t.dependencies for t in feature.target.values())
        for table in tables:
            for name, dep in table.items():
                if dep.is_path:
                    out[name] = dep
        return dict(sorted(out.items()))


@dataclass
class ResolvedContext:
    env_name: str
    platform: str
    roots: list[MatchSpec]
    channels: list[str]
    tasks: dict[str, TaskDef]
    activation: Activation
    path_dependencies: dict[str, Dependency] = field(default_factory=dict)
    system_requirements: dict[str, Any] = field(default_factory=dict)


# -- parsing -----------------------------------------------------------------


def target_matches(key: str, platform: str) -> bool:
    if key in FAMILIES:
        return FAMILIES[key](platform)
    return key == platform


class _Parser:
    def __init__(self, strict: bool):
        self.strict = strict
        self.issues: list[str] = []
        self.warnings: list[str] = []

    def issue(self, where: str, message: str) -> None:
        self.issues.append(f"{where}: {message}")

    def string_list(self, value: Any, where: str) -> list[str]:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            self.issue(where, "expected a list of strings")
            return []
        return list(value)

    def dependencies(self, table: Any, where: str) -> dict[str, Dependency]:
        if not isinstance(table, dict):
            self.issue(where, "expected a table")
            return {}
        out = {}
        for name, value in table.items():
            here = f"{where}.{name}"
            if not _NAME_RE.match(name):
                self.issue(here, "package names must be lowercase identifiers")
                continue
            try:
                if isinstance(value, str):
                    out[name] = Dependency(name, parse_spec(value, name=name))
                elif isinstance(value, dict):
                    unknown = set(value) - {"path", "version"}
                    if unknown:
                        self.issue(here, f"unsupported keys {sorted(unknown)}")
                        continue
                    spec = parse_spec(value.get("version", "*"), name=name)
                    path = value.get("path")
                    if path is not None and not isinstance(path, str):
                        self.issue(here, "path must be a string")
                        continue
                    if path is None and "version" not in value:
                        self.issue(here, "expected 'version' or 'path'")
                        continue
                    out[name] = Dependency(name, spec, path)
                else:
                    self.issue(here, "expected a spec string or a table")
            except VersionError as exc:
                self.issue(here, str(exc))
        return out

    def task(self, value: Any, where: str) -> TaskDef | None:
        if isinstance(value, (str, list)):
            value = {"cmd": value}
        if not isinstance(value, dict):
            self.issue(where, "expected a command string, argument list or table")
            return None
        unknown = set(value) - TASK_KEYS
        if unknown:
            self.issue(where, f"unknown task keys {sorted(unknown)}")
        cmd = value.get("cmd")
        if isinstance(cmd, list):
            if not cmd or not all(isinstance(c, str) for c in cmd):
                self.issue(where, "cmd list must be non-empty strings")
                return None
            cmd = tuple(cmd)
        elif not isinstance(cmd, str) or not cmd.strip():
            self.issue(where, "cmd must be a non-empty string or list")
            return None
        depends = value.get("depends-on", value.get("depends_on", []))
        if isinstance(depends, str):
            depends = [depends]
        depends = self.string_list(depends, f"{where}.depends-on")
        inputs = value.get("inputs")
        outputs = value.get("outputs")
        env = value.get("env", {})
        if not isinstance(env, dict) or not all(isinstance(v, str) for v in env.values()):
            self.issue(f"{where}.env", "expected a table of strings")
            env = {}
        return TaskDef(
            cmd=cmd,
            depends_on=tuple(depends),
            inputs=None if inputs is None else tuple(self.string_list(inputs, f"{where}.inputs")),
            outputs=None if outputs is None else tuple(self.string_list(outputs, f"{where}.outputs")),
            env=tuple(env.items()),
            cwd=value.get("cwd"),
            description=value.get("description"),
        )

    def tasks(self, table: Any, where: str) -> dict[str, TaskDef]:
        if not isinstance(table, dict):
            self.issue(where, "expected a table")
            return {}
        out = {}
        for name, value in table.items():
            task = self.task(value, f"{where}.{name}")
            if task is not None:
                out[name] = task
        return out

    def activation(self, table: Any, where: str) -> Activation:
        if not isinstance(table, dict):
            self.issue(where, "expected a table")
            return Activation()
        unknown = set(table) - {"scripts", "env"}
        if unknown:
            self.issue(where, f"unknown keys {sorted(unknown)}")
        scripts = self.string_list(table.get("scripts", []), f"{where}.scripts")
        env = table.get("env", {})
        if not isinstance(env, dict):
            self.issue(f"{where}.env", "expected a table")
            env = {}
        clean: dict[str, str | list[str]] = {}
        for key, value in env.items():
            if isinstance(value, str):
                clean[key] = value
            elif isinstance(value, list) and all(isinstance(v, str) for v in value):
                clean[key] = list(value)
            else:
                self.issue(f"{where}.env.{key}", "expected a string or list of strings")
        return Activation(scripts, clean)

    def targets(self, table: Any, where: str, platforms: list[str]) -> dict[str, TargetTable]:
        if not isinstance(table, dict):
            self.issue(where, "expected a table")
            return {}
        out = {}
        for key, body in table.items():
            here = f"{where}.{key}"
            if key in FAMILIES:
                if platforms and not any(FAMILIES[key](p) for p in platforms):
                    self.issue(here, f"platform family {key!r} matches none of the workspace platforms")
            elif key not in platforms:
                self.issue(here, f"target platform {key!r} is not in workspace.platforms")
            if not isinstance(body, dict):
                self.issue(here, "expected a table")
                continue
            unknown = set(body) - {"dependencies", "tasks", "activation"}
            if unknown:
                self.issue(here, f"unknown keys {sorted(unknown)}")
            out[key] = TargetTable(
                self.dependencies(body.get("dependencies", {}), f"{here}.dependencies"),
                self.tasks(body.get("tasks", {}), f"{here}.tasks"),
                self.activation(body.get("activation", {}), f"{here}.activation"),
            )
        return out


def parse_manifest(text: str, root: Path | str | None = None, strict: bool = True) -> Manifest:
    """Parse and validate manifest text; every problem found is reported at once."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ManifestError(f"TOML syntax error: {exc}") from None
    p = _Parser(strict)

    for key in doc:
        if key not in KNOWN_TABLES:
            if strict:
                p.issue(key, "unknown top-level table")
            else:
                p.warnings.append(f"ignoring unknown top-level table {key!r}")
    if "workspace" in doc and "project" in doc:
        p.issue("project", "both [workspace] and [project] given")
    ws = doc.get("workspace", doc.get("project"))
    if not isinstance(ws, dict):
        p.issue("workspace", "missing [workspace] table")
        ws = {}
    for key in ws:
        if key not in WORKSPACE_KEYS:
            p.warnings.append(f"ignoring unknown workspace key {key!r}")

    channels = p.string_list(ws["channels"], "workspace.channels") if "channels" in ws else []
    if "channels" not in ws:
        p.issue("workspace", "missing 'channels'")
    platforms = p.string_list(ws["platforms"], "workspace.platforms") if "platforms" in ws else []
    if not platforms:
        p.issue("workspace", "'platforms' must be a non-empty list")
    for plat in platforms:
        if plat not in PLATFORMS or plat == "noarch":
            p.issue("workspace.platforms", f"unknown platform {plat!r}")
    preview = p.string_list(ws.get("preview", []), "workspace.preview")
    if preview:
        p.warnings.append(f"preview features {preview} are accepted and ignored")
    name = ws.get("name")
    if name is not None and not isinstance(name, str):
        p.issue("workspace.name", "expected a string")

    features = {}
    raw_features = doc.get("feature", {})
    if not isinstance(raw_features, dict):
        p.issue("feature", "expected a table")
        raw_features = {}
    for fname, body in raw_features.items():
        here = f"feature.{fname}"
        if not isinstance(body, dict):
            p.issue(here, "expected a table")
            continue
        unknown = set(body) - {"dependencies", "target", "tasks", "activation"}
        if unknown:
            p.issue(here, f"unknown keys {sorted(unknown)}")
        features[fname] = Feature(
            fname,
            p.dependencies(body.get("dependencies", {}), f"{here}.dependencies"),
            p.targets(body.get("target", {}), f"{here}.target", platforms),
            p.tasks(body.get("tasks", {}), f"{here}.tasks"),
            p.activation(body.get("activation", {}), f"{here}.activation"),
        )

    environments = {}
    raw_envs = doc.get("environments", {})
    if not isinstance(raw_envs, dict):
        p.issue("environments", "expected a table")
        raw_envs = {}
    for ename, value in raw_envs.items():
        here = f"environments.{ename}"
        if isinstance(value, list):
            env = EnvironmentDef(p.string_list(value, here))
        elif isinstance(value, dict):
            env = EnvironmentDef(
                p.string_list(value.get("features", []), f"{here}.features"),
                bool(value.get("no-default-feature", False)),
            )
        else:
            p.issue(here, "expected a feature list or table")
            continue
        for f in env.features:
            if f not in features:
                p.issue(here, f"references undeclared feature {f!r}")
        environments[ename] = env

    system_requirements = doc.get("system-requirements", {})
    if not isinstance(system_requirements, dict):
        p.issue("system-requirements", "expected a table")
        system_requirements = {}
    package = doc.get("package")
    if package is not None and not isinstance(package, dict):
        p.issue("package", "expected a table")
        package = None

    manifest = Manifest(
        name=name,
        channels=channels,
        platforms=platforms,
        version=ws.get("version"),
        preview=preview,
        extra={k: v for k, v in ws.items() if k not in ("name", "version", "channels", "platforms", "preview")},
        dependencies=p.dependencies(doc.get("dependencies", {}), "dependencies"),
        target=p.targets(doc.get("target", {}), "target", platforms),
        tasks=p.tasks(doc.get("tasks", {}), "tasks"),
        features=features,
        environments=environments,
        activation=p.activation(doc.get("activation", {}), "activation"),
        system_requirements=dict(system_requirements),
        package=package,
        root=Path(root) if root is not None else None,
        warnings=p.warnings,
    )
    if p.issues:
        raise ManifestError(p.issues)
    for warning in p.warnings:
        log.info("manifest: %s", warning)
    return manifest


def load_manifest(path: Path | str, strict: bool = True) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ManifestError(f"no manifest at {path}") from None
    return parse_manifest(text, root=path.parent.resolve(), strict=strict)


def find_manifest(start: Path | str) -> Path:
    """Walk up from ``start`` to the nearest directory holding a manifest."""
    here = Path(start).resolve()
    for candidate in (here, *here.parents):
        if (candidate / MANIFEST_NAME).is_file():
            return candidate / MANIFEST_NAME
    raise ManifestError(f"no {MANIFEST_NAME} found in {here} or any parent directory")


# -- serialization -----------------------------------------------------------


def _target_doc(target: dict[str, TargetTable]) -> dict[str, Any]:
    out = {}
    for key, t in target.items():
        body: dict[str, Any] = {}
        if t.dependencies:
            body["dependencies"] = {n: d.to_toml() for n, d in t.dependencies.items()}
        if t.tasks:
            body["tasks"] = {n: d.to_toml() for n, d in t.tasks.items()}
        if t.activation.to_document():
            body["activation"] = t.activation.to_document()
        out[key] = body
    return out


def manifest_document(m: Manifest) -> dict[str, Any]:
    ws: dict[str, Any] = {}
    if m.name is not None:
        ws["name"] = m.name
    if m.version is not None:
        ws["version"] = m.version
    ws["channels"] = list(m.channels)
    ws["platforms"] = list(m.platforms)
    if m.preview:
        ws["preview"] = list(m.preview)
    ws.update(m.extra)
    doc: dict[str, Any] = {"workspace": ws}
    if m.system_requirements:
        doc["system-requirements"] = m.system_requirements
    if m.dependencies:
        doc["dependencies"] = {n: d.to_toml() for n, d in m.dependencies.items()}
    if m.target:
        doc["target"] = _target_doc(m.target)
    if m.tasks:
        doc["tasks"] = {n: t.to_toml() for n, t in m.tasks.items()}
    if m.activation.to_document():
        doc["activation"] = m.activation.to_document()
    if m.features:
        feats = {}
        for name, f in m.features.items():
            body: dict[str, Any] = {}
            if f.dependencies:
                body["dependencies"] = {n: d.to_toml() for n, d in f.dependencies.items()}
            if f.target:
                body["target"] = _target_doc(f.target)
            if f.tasks:
                body["tasks"] = {n: t.to_toml() for n, t in f.tasks.items()}
            if f.activation.to_document():
                body["activation"] = f.activation.to_document()
            feats[name] = body
        doc["feature"] = feats
    if m.environments:
        doc["environments"] = {
            n: ({"features": e.features, "no-default-feature": True} if e.no_default_feature else e.features)
            for n, e in m.environments.items()
        }
    if m.package is not None:
        doc["package"] = m.package
    return doc


def dump_manifest(m: Manifest) -> str:
    return tomlkit.dumps(manifest_document(m))


def add_dependency(text: str, spec_text: str, feature: str | None = None, platform: str | None = None) -> str:
    """Return ``text`` with one dependency added or replaced, comments preserved."""
    spec = parse_spec(spec_text)
    doc = tomlkit.parse(text)
    table = doc
    if feature is not None:
        table = table.setdefault("feature", tomlkit.table(is_super_table=True))
        table = table.setdefault(feature, tomlkit.table())
    if platform is not None:
        table = table.setdefault("target", tomlkit.table(is_super_table=True))
        table = table.setdefault(platform, tomlkit.table())
    deps = table.setdefault("dependencies", tomlkit.table())
    deps[spec.name] = spec.constraint_text()
    new_text = tomlkit.dumps(doc)
    parse_manifest(new_text)  # refuse to write something we could not read back
    return new_text


def starter_manifest(name: str, channels: list[str], platforms: list[str]) -> str:
    doc = tomlkit.document()
    ws = tomlkit.table()
    ws["name"] = name
    ws["channels"] = channels
    ws["platforms"] = platforms
    doc["workspace"] = ws
    doc["tasks"] = tomlkit.table()
    doc["dependencies"] = tomlkit.table()
    return tomlkit.dumps(doc)


# -- flattening --------------------------------------------------------------


def _target_layers(target: dict[str, TargetTable], platform: str) -> list[TargetTable]:
    families = [t for key, t in target.items() if key in FAMILIES and target_matches(key, platform)]
    exact = [t for key, t in target.items() if key == platform]
    return families + exact


def _merge_level(
    merged: dict,
    conflicts: dict,
    level_items: list[tuple[str, Mapping]],
    what: str,
) -> None:
    """Merge one specificity level into ``merged``.

    Two features disagreeing at one level is recorded in ``conflicts``; it only
    becomes an error if no more specific level overrides the key later.
    """
    level: dict[str, tuple[str, Any]] = {}
    for source, table in level_items:
        for key, value in table.items():
            if key in level and level[key][1] != value:
                conflicts[key] = f"{what} {key!r} is defined differently by {level[key][0]} and {source} at the same precedence"
            level[key] = (source, value)
    for key, (_, value) in level.items():
        if not any(key in table and table[key] != value for _, table in level_items):
            conflicts.pop(key, None)
        merged.pop(key, None)  # re-insert so overrides land after what they may reference
        merged[key] = value


def flatten(manifest: Manifest, env_name: str = DEFAULT_ENV, platform: str | None = None) -> ResolvedContext:
    env = manifest.environment(env_name)
    if platform is None:
        platform = manifest.platforms[0]
    if platform not in manifest.platforms:
        raise ManifestError(f"platform {platform!r} is not one of the workspace platforms {manifest.platforms}")

    levels: list[list[tuple[str, TargetTable | Feature | Manifest]]] = []
    if not env.no_default_feature:
        levels.append([("workspace", manifest)])
        levels.extend([("workspace target", t)] for t in _target_layers(manifest.target, platform))
    feats = [manifest.features[f] for f in env.features]
    levels.append([(f"feature '{f.name}'", f) for f in feats])
    family_layer, exact_layer = [], []
    for f in feats:
        for key, t in f.target.items():
            if not target_matches(key, platform):
                continue
            (family_layer if key in FAMILIES else exact_layer).append((f"feature '{f.name}' target {key}", t))
    levels.extend([family_layer, exact_layer])

    deps: dict[str, Dependency] = {}
    tasks: dict[str, TaskDef] = {}
    act_env: dict[str, Any] = {}
    scripts: list[str] = []
    conflicts: dict[tuple[str, str], str] = {}
    for level in levels:
        for what, merged, pick in (
            ("dependency", deps, lambda t: t.dependencies),
            ("task", tasks, lambda t: t.tasks),
            ("activation variable", act_env, lambda t: t.activation.env),
        ):
            found: dict[str, str] = {k[1]: v for k, v in conflicts.items() if k[0] == what}
            _merge_level(merged, found, [(s, pick(t)) for s, t in level], what)
            conflicts = {k: v for k, v in conflicts.items() if k[0] != what}
            conflicts.update({(what, k): v for k, v in found.items()})
        for _, t in level:
            scripts.extend(s for s in t.activation.scripts if s not in scripts)
    if conflicts:
        raise ManifestError([conflicts[k] for k in sorted(conflicts)])

    roots = [deps[name].spec for name in sorted(deps)]
    return ResolvedContext(
        env_name=env_name,
        platform=platform,
        roots=roots,
        channels=list(manifest.channels),
        tasks=dict(sorted(tasks.items())),
        activation=Activation(scripts, act_env),
        path_dependencies={n: d for n, d in sorted(deps.items()) if d.is_path},
        system_requirements=dict(manifest.system_requirements),
    )


def expand_vars(text: str, lookup: Mapping[str, str], warnings: list[str] | None = None) -> str:
    def sub(m: re.Match) -> str:
        name = m.group(1) or m.group(2)
        if name in lookup:
            return lookup[name]
        message = f"undefined variable ${name} expands to an empty string"
        log.warning(message)
        if warnings is not None:
            warnings.append(message)
        return ""

    return _VAR_RE.sub(sub, text)


def activation_env(
    context: ResolvedContext,
    project_root: Path | str,
    base_env: Mapping[str, str] | None = None,
    warnings: list[str] | None = None,
) -> dict[str, str]:
    """Variables to set when running inside an environment, in definition order.

    Values may reference built-ins, earlier entries and the surrounding process
    environment. List values are joined with the platform path separator.
    """
    base = dict(os.environ if base_env is None else base_env)
    out = {
        "PIXI_PROJECT_ROOT": str(Path(project_root).resolve()),
        "PIXI_ENVIRONMENT_NAME": context.env_name,
        "PIXI_PLATFORM": context.platform,
    }
    for key, value in context.activation.env.items():
        lookup = {**base, **out}
        if isinstance(value, list):
            out[key] = os.pathsep.join(expand_vars(v, lookup, warnings) for v in value)
        else:
            out[key] = expand_vars(value, lookup, warnings)
    return out
