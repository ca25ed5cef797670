"""Exception hierarchy shared by every pakrat module.

Each class carries the process exit code the CLI maps it to:
0 ok, 1 user/config error, 2 unsatisfiable, 3 integrity, 4 internal.
"""

from __future__ import annotations


class PakratError(Exception):
    exit_code = 1


class VersionError(PakratError, ValueError):
    """A version or match spec string does not follow the grammar."""


class EncodingError(PakratError, ValueError):
    pass


class RepodataError(PakratError, ValueError):
    """Channel metadata violates a structural invariant."""


class UnknownPackageError(PakratError, LookupError):
    def __init__(self, name: str):
        super().__init__(f"unknown package: {name}")
        self.name = name


class IntegrityError(PakratError):
    """Bytes did not hash to the digest they were addressed by."""

    exit_code = 3


class DigestMismatchError(IntegrityError):
    def __init__(self, what: str, expected: str, actual: str):
        super().__init__(f"sha256 mismatch for {what}: expected {expected}, got {actual}")
        self.what = what
        self.expected = expected
        self.actual = actual


class TransportError(PakratError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class AuthError(TransportError):
    pass


class ManifestError(PakratError):
    def __init__(self, issues: list[str] | str):
        if isinstance(issues, str):
            issues = [issues]
        self.issues = list(issues)
        super().__init__("invalid manifest:\n" + "\n".join(f"  - {i}" for i in self.issues))


class LockfileError(PakratError):
    pass


class UnsatError(PakratError):
    exit_code = 2

    def __init__(self, explanation, context: str = ""):
        self.explanation = explanation
        head = f"no solution{' for ' + context if context else ''}"
        super().__init__(f"{head}:\n{explanation.render()}")


class PrefixError(PakratError):
    pass


class ClobberError(PrefixError):
    pass


class TaskError(PakratError):
    pass


class ShellSyntaxError(TaskError):
    pass


class TaskFailedError(TaskError):
    def __init__(self, task: str, status: int, report=None):
        super().__init__(f"task '{task}' failed with exit status {status}")
        self.task = task
        self.status = status
        self.report = report or []


class RecipeError(PakratError):
    pass


class BuildError(PakratError):
    def __init__(self, stage: str, message: str, output: str = ""):
        text = f"build failed in stage '{stage}': {message}"
        if output:
            text += "\n--- captured output ---\n" + output.rstrip()
        super().__init__(text)
        self.stage = stage
        self.output = output
