from __future__ import annotations

import hashlib
from pathlib import Path

import pytest

from pakrat.repodata import PackageRecord

GOLDEN = Path(__file__).parent / "golden"

PYTHON_DEPENDS = (
    "bzip2 >=1.0.8, <2.0a0",
    "libexpat >=2.5.0, <3.0a0",
    "libffi >=3.4, <4.0a0",
    "libsqlite >=3.45.1, <4.0a0",
    "libzlib >=1.2.13, <1.3.0a0",
    "ncurses >=6.4, <7.0a0",
    "openssl >=3.2.1, <4.0a0",
    "readline >=8.2, <9.0a0",
    "tk >=8.6.13, <8.7.0a0",
    "tzdata",
    "xz >=5.2.6, <6.0a0",
)


def fake_sha(*parts: object) -> str:
    return hashlib.sha256("/".join(map(str, parts)).encode()).hexdigest()


def rec(name: str, version: str, depends=(), build: str | None = None, build_number: int = 0,
        subdir: str = "linux-64", **kw) -> PackageRecord:
    build = build or f"h0_{build_number}"
    return PackageRecord(
        name=name,
        version=version,
        build=build,
        build_number=build_number,
        subdir=subdir,
        depends=tuple(depends),
        sha256=kw.pop("sha256", fake_sha(name, version, build, subdir)),
        **kw,
    )


@pytest.fixture
def locked_python() -> PackageRecord:
    return PackageRecord(
        name="python",
        version="3.12.2",
        build="h9f0c242_0_cpython",
        subdir="osx-64",
        depends=PYTHON_DEPENDS,
        constrains=("python_abi 3.12.* *_cp312",),
        sha256="7647ac06c3798a182a4bcb1ff58864f1ef81eb3acea6971295304c23e43252fb",
        md5="0179b8007ba008cf5bec11f3b3853902",
        license="Python-2.0",
        size=14596811,
        timestamp=1708118065292,
    )


# one "criterion N: PASS/FAIL" line per acceptance test, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
