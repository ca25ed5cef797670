"""Recipe parsing and template rendering.

Only three expression forms exist: ``${{ var }}``, ``${{ var|lower }}`` and
``${{ compiler('lang') }}``. Context variables may reference each other;
they are resolved on demand with cycle detection. The recipe is read with
YAML's base loader so every scalar stays a string ("1.10" is not a float).
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import yaml

from ..errors import RecipeError
from ..repodata import canonical_encode
from ..version import parse_spec

_EXPR = re.compile(r"\$\{\{(.*?)\}\}", re.S)
_VAR = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*((?:\|\s*[A-Za-z_][A-Za-z0-9_]*\s*)*)\Z")
_CALL = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(\s*(?:'([^']*)'|\"([^\"]*)\")\s*\)\s*\Z")

FILTERS: dict[str, Callable[[str], str]] = {"lower": str.lower}
SECTIONS = ("context", "package", "source", "build", "requirements", "tests", "about")
REQUIREMENT_KINDS = ("build", "host", "run")
CONTENT_KINDS = ("lib", "include", "bin")
# keys the renderer itself adds; accepted on input so a rendered recipe renders again
GENERATED = ("target_platform", "build_environment")


def compiler_token(lang: str) -> str:
    return f"stub-compiler-{lang}"


def _builtins(platform: str) -> dict[str, str]:
    # $PYTHON stays symbolic and is expanded by the build shell, so the
    # rendered recipe never embeds an interpreter path from this machine
    return {"PYTHON": "$PYTHON", "target_platform": platform}


class _Templater:
    def __init__(self, context: Mapping[str, Any], platform: str):
        for key, value in context.items():
            if not isinstance(value, str):
                raise RecipeError(f"context.{key}: expected a scalar value")
        self.raw = dict(context)
        self.builtins = _builtins(platform)
        self.values: dict[str, str] = {}

    def variable(self, name: str, stack: tuple[str, ...] = ()) -> str:
        if name in self.values:
            return self.values[name]
        if name in stack:
            cycle = stack[stack.index(name):] + (name,)
            raise RecipeError("cyclic context reference: " + " -> ".join(cycle))
        if name not in self.raw:
            if name in self.builtins:
                return self.builtins[name]
            raise RecipeError(f"undefined variable {name!r}")
        value = self.substitute(self.raw[name], stack + (name,))
        self.values[name] = value
        return value

    def evaluate(self, expr: str, stack: tuple[str, ...]) -> str:
        m = _CALL.match(expr)
        if m:
            func, arg = m.group(1), m.group(2) if m.group(2) is not None else m.group(3)
            if func != "compiler":
                raise RecipeError(f"unsupported function {func!r} in ${{{{{expr}}}}}")
            return compiler_token(arg)
        m = _VAR.match(expr)
        if m is None:
            raise RecipeError(f"unsupported template expression ${{{{{expr}}}}}")
        value = self.variable(m.group(1), stack)
        for name in filter(None, (f.strip() for f in m.group(2).split("|"))):
            if name not in FILTERS:
                raise RecipeError(f"unsupported filter {name!r} in ${{{{{expr}}}}}")
            value = FILTERS[name](value)
        return value

    def substitute(self, text: str, stack: tuple[str, ...] = ()) -> str:
        out = _EXPR.sub(lambda m: self.evaluate(m.group(1), stack), text)
        if "${{" in out:
            raise RecipeError(f"unterminated or nested template in {text!r}")
        return out

    def tree(self, node: Any) -> Any:
        if isinstance(node, str):
            return self.substitute(node)
        if isinstance(node, list):
            return [self.tree(x) for x in node]
        if isinstance(node, dict):
            return {self.substitute(k): self.tree(v) for k, v in node.items()}
        return node


# -- normalization -----------------------------------------------------------


def _str_list(value: Any, where: str) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise RecipeError(f"{where}: expected a list of strings")
    return list(value)


def _mapping(value: Any, where: str) -> dict[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise RecipeError(f"{where}: expected a mapping")
    return value


def _normalize(doc: dict[str, Any], platform: str) -> dict[str, Any]:
    unknown = sorted(set(doc) - set(SECTIONS) - set(GENERATED))
    if unknown:
        raise RecipeError(f"unknown recipe section(s): {', '.join(unknown)}")
    package = _mapping(doc.get("package"), "package")
    name, version = package.get("name"), package.get("version")
    if not isinstance(name, str) or not name:
        raise RecipeError("package.name is required")
    if name != name.lower():
        raise RecipeError(f"package.name {name!r} must be lowercase")
    if not isinstance(version, str) or not version:
        raise RecipeError("package.version is required")

    sources = doc.get("source") or []
    if isinstance(sources, dict):
        sources = [sources]
    if not isinstance(sources, list):
        raise RecipeError("source: expected a mapping or a list of mappings")
    norm_sources = []
    for i, src in enumerate(sources):
        src = _mapping(src, f"source[{i}]")
        if ("url" in src) == ("path" in src):
            raise RecipeError(f"source[{i}]: exactly one of 'url' or 'path' is required")
        if "url" in src:
            # long URLs are often folded over several lines in YAML
            src = {**src, "url": re.sub(r"\s+", "", src["url"])}
        norm_sources.append(src)

    build = dict(_mapping(doc.get("build"), "build"))
    number = build.get("number", "0")
    try:
        build["number"] = int(number)
    except (TypeError, ValueError):
        raise RecipeError(f"build.number {number!r} is not an integer") from None
    if build["number"] < 0:
        raise RecipeError("build.number must be >= 0")
    build["script"] = _str_list(build.get("script"), "build.script")

    requirements = _mapping(doc.get("requirements"), "requirements")
    unknown = sorted(set(requirements) - set(REQUIREMENT_KINDS))
    if unknown:
        raise RecipeError(f"unknown requirements kind(s): {', '.join(unknown)}")
    reqs = {}
    for kind in REQUIREMENT_KINDS:
        specs = _str_list(requirements.get(kind), f"requirements.{kind}")
        for spec in specs:
            try:
                parse_spec(spec)
            except ValueError as exc:
                raise RecipeError(f"requirements.{kind}: {exc}") from None
        reqs[kind] = specs

    tests = doc.get("tests") or []
    if isinstance(tests, dict):
        tests = [{k: v} for k, v in tests.items()]
    if not isinstance(tests, list):
        raise RecipeError("tests: expected a mapping or a list")

    out = {
        "context": _mapping(doc.get("context"), "context"),
        "package": {"name": name, "version": version},
        "source": norm_sources,
        "build": build,
        "requirements": reqs,
        "tests": tests,
        "about": _mapping(doc.get("about"), "about"),
        "target_platform": platform,
        "build_environment": [],
    }
    return out


@dataclass
class RenderedRecipe:
    """A fully concrete recipe. ``document`` is what gets embedded in the archive."""

    document: dict[str, Any]
    notices: list[str] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.document["package"]["name"]

    @property
    def version(self) -> str:
        return self.document["package"]["version"]

    @property
    def platform(self) -> str:
        return self.document["target_platform"]

    @property
    def build_number(self) -> int:
        return self.document["build"]["number"]

    @property
    def noarch(self) -> str | None:
        return self.document["build"].get("noarch")

    @property
    def subdir(self) -> str:
        return "noarch" if self.noarch else self.platform

    @property
    def script(self) -> list[str]:
        return self.document["build"]["script"]

    @property
    def sources(self) -> list[dict[str, Any]]:
        return self.document["source"]

    @property
    def entry_points(self) -> list[str]:
        python = self.document["build"].get("python") or {}
        return _str_list(python.get("entry_points"), "build.python.entry_points")

    def requirements(self, kind: str) -> list[str]:
        return self.document["requirements"][kind]

    @property
    def license(self) -> str:
        value = self.document["about"].get("license", "")
        return re.sub(r"\s+", " ", value).strip() if isinstance(value, str) else ""

    def package_contents(self) -> dict[str, list[str]]:
        wanted: dict[str, list[str]] = {k: [] for k in CONTENT_KINDS}
        for entry in self.document["tests"]:
            block = entry.get("package_contents") if isinstance(entry, dict) else None
            if block is None:
                continue
            block = _mapping(block, "tests.package_contents")
            for kind in CONTENT_KINDS:
                wanted[kind].extend(_str_list(block.get(kind), f"tests.package_contents.{kind}"))
        return wanted

    def skipped_tests(self) -> list[str]:
        kinds = []
        for entry in self.document["tests"]:
            if isinstance(entry, dict):
                kinds.extend(k for k in entry if k != "package_contents")
        return kinds

    def hash(self) -> str:
        doc = {k: v for k, v in self.document.items() if k != "build_environment"}
        return hashlib.sha256(canonical_encode(doc)).hexdigest()

    @property
    def build_string(self) -> str:
        return f"h{self.hash()[:7]}_{self.build_number}"

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.document, sort_keys=True, default_flow_style=False, allow_unicode=True, width=1 << 16)


def render(
    recipe: str | Mapping[str, Any],
    platform: str,
    overrides: Mapping[str, str] | None = None,
) -> RenderedRecipe:
    """Parse ``recipe`` (YAML text or an already-loaded mapping) and substitute templates."""
    if isinstance(recipe, str):
        try:
            doc = yaml.load(recipe, Loader=yaml.BaseLoader)
        except yaml.YAMLError as exc:
            raise RecipeError(f"recipe is not valid YAML: {exc}") from None
    else:
        doc = recipe
    if not isinstance(doc, dict):
        raise RecipeError("recipe must be a YAML mapping")
    context = dict(_mapping(doc.get("context"), "context"))
    for key, value in (overrides or {}).items():
        context[key] = str(value)
    templater = _Templater(context, platform)
    resolved_context = {key: templater.variable(key) for key in context}
    body = {k: v for k, v in doc.items() if k not in ("context", *GENERATED)}
    rendered = templater.tree(body)
    rendered["context"] = resolved_context
    normalized = _normalize(rendered, platform)
    notices = [f"tests.{kind} is not run by this builder (skipped)" for kind in RenderedRecipe(normalized).skipped_tests()]
    if RenderedRecipe(normalized).entry_points:
        notices.append("build.python.entry_points are recorded but no console scripts are generated")
    return RenderedRecipe(normalized, notices)
