"""Task graphs, a small cross-platform command interpreter, and result caching.

The interpreter understands exactly: whitespace-separated words, single and
double quotes, backslash escapes, ``$VAR`` / ``${VAR}`` expansion and ``&&``
sequencing. Pipes, redirections and globs are *not* interpreted; such tokens
are handed to the launched program verbatim. A handful of file builtins (cp,
mv, rm, mkdir, cat) plus echo and export behave the same on every platform.
"""

from __future__ import annotations

import glob
import graphlib
import hashlib
import heapq
import io
import os
import re
import shutil
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence, TextIO

from filelock import FileLock, Timeout

from .errors import ShellSyntaxError, TaskError, TaskFailedError
from .manifest import TaskDef
from .repodata import _atomic_write, canonical_decode, canonical_encode, sha256_hex

_VAR_RE = re.compile(r"\$(?:\{([A-Za-z_][A-Za-z0-9_]*)\}|([A-Za-z_][A-Za-z0-9_]*))")
_EXPORT_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)=(.*)\Z", re.S)

# -- planning ----------------------------------------------------------------


def plan(tasks: Mapping[str, TaskDef], target: str) -> list[str]:
    """Dependencies first, each task once, ties broken by name."""
    if target not in tasks:
        raise TaskError(f"unknown task {target!r} (available: {', '.join(sorted(tasks)) or 'none'})")
    graph: dict[str, list[str]] = {}
    stack = [target]
    while stack:
        name = stack.pop()
        if name in graph:
            continue
        deps = list(tasks[name].depends_on)
        for dep in deps:
            if dep not in tasks:
                raise TaskError(f"task {name!r} depends on unknown task {dep!r}")
        graph[name] = deps
        stack.extend(deps)
    sorter = graphlib.TopologicalSorter(graph)
    try:
        sorter.prepare()
    except graphlib.CycleError as exc:
        cycle = exc.args[1]
        # graphlib reports the cycle against edge direction; show it as "a -> b" dependencies
        raise TaskError("task dependency cycle: " + " -> ".join(reversed(cycle))) from None
    order: list[str] = []
    ready: list[str] = []
    while sorter.is_active():
        for name in sorter.get_ready():
            heapq.heappush(ready, name)
        name = heapq.heappop(ready)
        order.append(name)
        sorter.done(name)
    return order


# -- command language --------------------------------------------------------

# A word is a list of (text, expandable, splittable) chunks; expansion is lazy so
# `export X=1 && echo $X` sees the exported value.
Chunk = tuple[str, bool, bool]
Word = list[Chunk]
AND = object()


def tokenize(text: str) -> list[list[Word]]:
    """Split command text into ``&&``-separated commands of unexpanded words."""
    commands: list[list[Word]] = [[]]
    word: Word = []
    in_word = False
    buf: list[str] = []
    i = 0
    n = len(text)

    def flush_buf(expandable: bool, splittable: bool) -> None:
        if buf:
            word.append(("".join(buf), expandable, splittable))
            buf.clear()

    def end_word() -> None:
        nonlocal word, in_word
        flush_buf(True, True)
        if in_word:
            commands[-1].append(word)
        word = []
        in_word = False

    while i < n:
        c = text[i]
        if c in " \t\n\r":
            end_word()
            i += 1
        elif c == "&" and text.startswith("&&", i) and not in_word:
            end_word()
            if not commands[-1]:
                raise ShellSyntaxError(f"empty command before '&&' in {text!r}")
            commands.append([])
            i += 2
        elif c == "'":
            flush_buf(True, True)
            end = text.find("'", i + 1)
            if end < 0:
                raise ShellSyntaxError(f"unterminated single quote in {text!r}")
            word.append((text[i + 1:end], False, False))
            in_word = True
            i = end + 1
        elif c == '"':
            flush_buf(True, True)
            word.append(("", False, False))  # keeps "" as an empty argument
            i += 1
            while True:
                if i >= n:
                    raise ShellSyntaxError(f"unterminated double quote in {text!r}")
                c = text[i]
                if c == '"':
                    i += 1
                    break
                if c == "\\" and i + 1 < n and text[i + 1] in '"\\$':
                    word.append((text[i + 1], False, False))
                    i += 2
                    continue
                j = i
                while j < n and text[j] not in '"\\':
                    j += 1
                if j == i:  # lone backslash
                    j = i + 1
                word.append((text[i:j], True, False))
                i = j
            in_word = True
        elif c == "\\":
            flush_buf(True, True)
            if i + 1 >= n:
                raise ShellSyntaxError(f"trailing backslash in {text!r}")
            word.append((text[i + 1], False, False))
            in_word = True
            i += 2
        else:
            buf.append(c)
            in_word = True
            i += 1
    end_word()
    if not commands[-1]:
        if len(commands) > 1:
            raise ShellSyntaxError(f"'&&' without a following command in {text!r}")
        return []
    return commands


def expand(text: str, env: Mapping[str, str]) -> str:
    return _VAR_RE.sub(lambda m: env.get(m.group(1) or m.group(2), ""), text)


def expand_word(word: Word, env: Mapping[str, str]) -> list[str]:
    """Expand one word into zero or more fields (unquoted expansions split on spaces)."""
    fields: list[str] = []
    current: list[str] = []
    has_content = False  # quoted text keeps an otherwise empty word alive
    for text, expandable, splittable in word:
        value = expand(text, env) if expandable else text
        if not splittable:
            current.append(value)
            has_content = True
            continue
        parts = re.split(r"[ \t\n]+", value)
        for k, part in enumerate(parts):
            if k > 0:
                if current and ("".join(current) or has_content):
                    fields.append("".join(current))
                current, has_content = [], False
            if part:
                current.append(part)
                has_content = True
    if current or has_content:
        joined = "".join(current)
        if joined or has_content:
            fields.append(joined)
    return fields


def referenced_vars(cmd: str | Sequence[str]) -> list[str]:
    texts = [cmd] if isinstance(cmd, str) else list(cmd)
    names = {m.group(1) or m.group(2) for t in texts for m in _VAR_RE.finditer(t)}
    return sorted(names)


class _Shell:
    def __init__(self, env: dict[str, str], cwd: Path, out: TextIO, err: TextIO):
        self.env = env
        self.cwd = cwd
        self.out = out
        self.err = err

    def fail(self, message: str, status: int = 1) -> int:
        self.err.write(message.rstrip("\n") + "\n")
        self.err.flush()
        return status

    def path(self, p: str) -> Path:
        return (self.cwd / p) if not os.path.isabs(p) else Path(p)

    @staticmethod
    def flags(args: list[str], allowed: str) -> tuple[set[str], list[str]]:
        found: set[str] = set()
        rest = []
        for i, a in enumerate(args):
            if a == "--":
                rest.extend(args[i + 1:])
                break
            if a.startswith("-") and len(a) > 1 and not rest and all(ch in allowed for ch in a[1:]):
                found.update(a[1:])
            else:
                rest.append(a)
        return found, rest

    # builtins -------------------------------------------------------------

    def b_echo(self, args: list[str]) -> int:
        newline = True
        if args and args[0] == "-n":
            newline, args = False, args[1:]
        self.out.write(" ".join(args) + ("\n" if newline else ""))
        self.out.flush()
        return 0

    def b_export(self, args: list[str]) -> int:
        for a in args:
            m = _EXPORT_RE.match(a)
            if m is None:
                return self.fail(f"export: expected NAME=VALUE, got {a!r}")
            self.env[m.group(1)] = m.group(2)
        return 0

    def b_mkdir(self, args: list[str]) -> int:
        opts, paths = self.flags(args, "p")
        if not paths:
            return self.fail("mkdir: missing operand")
        status = 0
        for p in paths:
            try:
                self.path(p).mkdir(parents="p" in opts, exist_ok="p" in opts)
            except OSError as exc:
                status = self.fail(f"mkdir: {p}: {exc.strerror}")
        return status

    def b_cat(self, args: list[str]) -> int:
        status = 0
        for p in args:
            try:
                self.out.write(self.path(p).read_text(encoding="utf-8", errors="replace"))
            except OSError as exc:
                status = self.fail(f"cat: {p}: {exc.strerror}")
        self.out.flush()
        return status

    def b_rm(self, args: list[str]) -> int:
        opts, paths = self.flags(args, "rRf")
        recursive = bool(opts & {"r", "R"})
        if not paths and "f" not in opts:
            return self.fail("rm: missing operand")
        status = 0
        for p in paths:
            target = self.path(p)
            if not target.exists() and not target.is_symlink():
                if "f" not in opts:
                    status = self.fail(f"rm: {p}: no such file or directory")
                continue
            if target.is_dir() and not target.is_symlink():
                if not recursive:
                    status = self.fail(f"rm: {p}: is a directory")
                    continue
                shutil.rmtree(target)
            else:
                target.unlink()
        return status

    def _copy_or_move(self, name: str, args: list[str], move: bool) -> int:
        opts, paths = self.flags(args, "rRf" if not move else "f")
        if len(paths) < 2:
            return self.fail(f"{name}: expected SOURCE... DEST")
        *sources, dest = paths
        dest_path = self.path(dest)
        if len(sources) > 1 and not dest_path.is_dir():
            return self.fail(f"{name}: target {dest} is not a directory")
        status = 0
        for s in sources:
            src = self.path(s)
            if not src.exists():
                status = self.fail(f"{name}: {s}: no such file or directory")
                continue
            target = dest_path / src.name if dest_path.is_dir() else dest_path
            try:
                if move:
                    shutil.move(str(src), str(target))
                elif src.is_dir():
                    if not opts & {"r", "R"}:
                        status = self.fail(f"{name}: {s} is a directory (use -r)")
                        continue
                    shutil.copytree(src, target, dirs_exist_ok=True)
                else:
                    shutil.copy2(src, target)
            except OSError as exc:
                status = self.fail(f"{name}: {s}: {exc.strerror or exc}")
        return status

    def b_cp(self, args: list[str]) -> int:
        return self._copy_or_move("cp", args, move=False)

    def b_mv(self, args: list[str]) -> int:
        return self._copy_or_move("mv", args, move=True)

    BUILTINS = {
        "echo": b_echo, "export": b_export, "mkdir": b_mkdir, "cat": b_cat,
        "rm": b_rm, "cp": b_cp, "mv": b_mv,
    }

    # external programs ----------------------------------------------------

    def launch(self, argv: list[str]) -> int:
        head = argv[0]
        if os.sep in head or (os.altsep and os.altsep in head):
            exe = str(self.path(head))
            if not os.access(exe, os.X_OK):
                return self.fail(f"{head}: command not found", 127)
        else:
            exe = shutil.which(head, path=self.env.get("PATH", ""))
            if exe is None:
                return self.fail(f"{head}: command not found", 127)
        out_fd = _fileno(self.out)
        err_fd = _fileno(self.err)
        try:
            self.out.flush()
            self.err.flush()
            proc = subprocess.run(
                [exe, *argv[1:]],
                cwd=self.cwd,
                env=self.env,
                stdin=subprocess.DEVNULL,
                stdout=out_fd if out_fd is not None else subprocess.PIPE,
                stderr=err_fd if err_fd is not None else subprocess.PIPE,
            )
        except OSError as exc:
            return self.fail(f"{head}: {exc.strerror or exc}", 126)
        if out_fd is None and proc.stdout:
            self.out.write(proc.stdout.decode("utf-8", errors="replace"))
        if err_fd is None and proc.stderr:
            self.err.write(proc.stderr.decode("utf-8", errors="replace"))
        return proc.returncode

    def run(self, argv: list[str]) -> int:
        if not argv:
            return 0
        builtin = self.BUILTINS.get(argv[0])
        if builtin is not None:
            return builtin(self, argv[1:])
        return self.launch(argv)


def _fileno(stream: TextIO) -> int | None:
    try:
        return stream.fileno()
    except (AttributeError, OSError, io.UnsupportedOperation, ValueError):
        return None


def eval_command(
    cmd: str | Sequence[str],
    env: Mapping[str, str] | None = None,
    cwd: Path | str = ".",
    stdout: TextIO | None = None,
    stderr: TextIO | None = None,
) -> int:
    """Run a command line (or argument list) and return its exit status.

    ``env`` is the complete environment; ``export`` changes are visible to
    later commands of the same line only.
    """
    shell = _Shell(dict(os.environ if env is None else env), Path(cwd), stdout or sys.stdout, stderr or sys.stderr)
    if isinstance(cmd, str):
        if not cmd.strip():
            raise ShellSyntaxError("empty command")
        status = 0
        for command in tokenize(cmd):
            argv = [f for w in command for f in expand_word(w, shell.env)]
            status = shell.run(argv)
            if status != 0:
                break
        return status
    args = list(cmd)
    if not args:
        raise ShellSyntaxError("empty argument list")
    return shell.run([expand(a, shell.env) for a in args])


# -- running with a cache ----------------------------------------------------


@dataclass
class TaskReport:
    name: str
    status: str  # "ran", "cached", "failed"
    exit_code: int = 0
    key: str | None = None
    outputs: tuple[str, ...] | None = None
    seconds: float = 0.0


@dataclass
class TaskRunner:
    """Runs tasks of one project in plan order, skipping cached ones.

    A task with ``inputs`` is skipped when the key computed from its definition,
    the hashes of the files its input globs match, and the values of the
    variables it references equals the key stored after its last success.
    Tasks without ``inputs`` always run.
    """

    tasks: Mapping[str, TaskDef]
    project_root: Path
    env: Mapping[str, str] = field(default_factory=lambda: dict(os.environ))
    cache_dir: Path | None = None
    stdout: TextIO | None = None
    stderr: TextIO | None = None
    before_task: Callable[[str], None] | None = None

    def __post_init__(self):
        self.project_root = Path(self.project_root).resolve()
        if self.cache_dir is None:
            self.cache_dir = self.project_root / ".pakrat" / "task-cache"
        self.cache_dir = Path(self.cache_dir)

    def input_files(self, task: TaskDef) -> list[tuple[str, str]]:
        found: dict[str, str] = {}
        for pattern in task.inputs or ():
            for match in glob.glob(pattern, root_dir=self.project_root, recursive=True):
                path = self.project_root / match
                if path.is_file():
                    rel = Path(match).as_posix()
                    found[rel] = sha256_hex(path.read_bytes())
        return sorted(found.items())

    def task_env(self, task: TaskDef) -> dict[str, str]:
        env = dict(self.env)
        for key, value in task.env:
            env[key] = expand(value, env)
        return env

    def cache_key(self, name: str, task: TaskDef) -> str:
        env = self.task_env(task)
        names = sorted(set(referenced_vars(task.cmd)) | {k for k, _ in task.env})
        doc = {
            "task": name,
            "definition": task.to_document(),
            "inputs": [list(item) for item in self.input_files(task)],
            "env": {n: env.get(n) for n in names},
        }
        return hashlib.sha256(canonical_encode(doc)).hexdigest()

    def _entry_path(self, name: str) -> Path:
        return self.cache_dir / f"{name}.json"

    def stored_key(self, name: str) -> str | None:
        try:
            entry = canonical_decode(self._entry_path(name).read_bytes())
        except (FileNotFoundError, ValueError):
            return None
        if not isinstance(entry, dict) or entry.get("status") != 0:
            return None
        return entry.get("key")

    def run(self, target: str, force: bool = False) -> list[TaskReport]:
        order = plan(self.tasks, target)
        lock_path = self.project_root / ".pakrat" / "task.lock"
        lock_path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with FileLock(str(lock_path), timeout=0):
                return self._run_order(order, force)
        except Timeout:
            raise TaskError("another pakrat task run holds the project lock") from None

    def _run_order(self, order: list[str], force: bool) -> list[TaskReport]:
        reports: list[TaskReport] = []
        for name in order:
            task = self.tasks[name]
            key = self.cache_key(name, task) if task.inputs is not None else None
            if key is not None and not force and self.stored_key(name) == key:
                reports.append(TaskReport(name, "cached", 0, key, task.outputs))
                continue
            if self.before_task is not None:
                self.before_task(name)
            started = time.monotonic()
            cwd = self.project_root / task.cwd if task.cwd else self.project_root
            status = eval_command(task.cmd, self.task_env(task), cwd, self.stdout, self.stderr)
            elapsed = time.monotonic() - started
            if status != 0:
                self._entry_path(name).unlink(missing_ok=True)
                reports.append(TaskReport(name, "failed", status, key, task.outputs, elapsed))
                raise TaskFailedError(name, status, reports)
            if key is not None:
                # recompute: the task may have rewritten its own inputs
                entry = {"task": name, "key": self.cache_key(name, task), "status": 0, "timestamp": int(time.time())}
                _atomic_write(self._entry_path(name), canonical_encode(entry))
            reports.append(TaskReport(name, "ran", 0, key, task.outputs, elapsed))
        return reports
