from __future__ import annotations

import gzip
import io
import os
import tarfile
from pathlib import Path

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from pakrat.errors import BuildError, RecipeError, UnsatError
from pakrat.packager import (
    Member,
    build,
    build_path_dependency,
    diff_archives,
    publish,
    read_archive,
    render,
    verify_reproducible,
    write_archive,
)
from pakrat.packager.archive import FILES_LIST, INDEX_JSON, RENDERED_RECIPE
from pakrat.repodata import canonical_decode, load_subdir, sha256_hex
from pakrat.solver import solve
from pakrat.solver.provider import InMemoryProvider, OverlayProvider
from pakrat.transport import CacheStore, ChannelClient, ChannelProvider

from conftest import rec
from recipes import CLOCK, HELLO, HELLO_SOURCES, SHUFFLE, EVO_HEADER, ZENOH, ZENOH_COMPLETE

EPOCH = 1_700_000_000


def write_tree(root: Path, files: dict[str, str]) -> Path:
    for rel, text in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return root


@pytest.fixture
def hello_dir(tmp_path) -> Path:
    root = write_tree(tmp_path / "hello", HELLO_SOURCES)
    (root / "recipe.yaml").write_text(HELLO)
    return root


def hello_artifact(hello_dir, **kw):
    return build(render(HELLO, "linux-64"), recipe_dir=hello_dir, source_date_epoch=EPOCH, **kw)


# -- rendering ----------------------------------------------------------------


def test_evo_header_renders():
    r = render(EVO_HEADER, "linux-64")
    assert r.name == "evo" and r.version == "1.31.1"
    assert r.sources[0]["url"] == "https://pypi.org/packages/source/e/evo/evo-1.31.1.tar.gz"
    assert r.subdir == "noarch"
    # the interpreter stays symbolic so the rendered recipe is machine independent
    assert r.script == ["$PYTHON -m pip install . --no-deps --no-build-isolation"]
    assert r.entry_points == ["evo = evo.main_evo:main", "evo_traj = evo.entry_points:traj"]
    assert any("tests.python" in n for n in r.notices)
    assert r.license == "GPL-3.0-or-later"


def test_compiler_tokens():
    r = render(ZENOH, "linux-64")
    assert r.requirements("build") == ["stub-compiler-c", "stub-compiler-cxx", "cmake", "make"]
    assert r.package_contents() == {"lib": ["libzenohpico"], "include": ["zenoh-pico.h"], "bin": []}


def test_context_references_and_overrides():
    text = 'context:\n  v: "1"\n  w: "${{ v }}.2"\npackage:\n  name: x\n  version: ${{ w }}\n'
    assert render(text, "linux-64").version == "1.2"
    assert render(text, "linux-64", {"v": "7"}).version == "7.2"
    assert render(text, "linux-64", {"w": "9"}).document["context"] == {"v": "1", "w": "9"}


def test_scalars_stay_strings():
    r = render("package:\n  name: x\n  version: 1.10\n", "linux-64")
    assert r.version == "1.10"


@pytest.mark.parametrize(
    "body, message",
    [
        ("context:\n  a: ${{ b }}\n  b: ${{ a }}\n", "cyclic context reference: a -> b -> a"),
        ("context:\n  a: ${{ a }}\n", "cyclic context reference: a -> a"),
        ("context:\n  a: ${{ nope }}\n", "undefined variable 'nope'"),
        ("context:\n  a: ${{ 'x'|upper }}\n", "unsupported template expression"),
        ("context:\n  a: x\n  b: ${{ a|upper }}\n", "unsupported filter 'upper'"),
        ("context:\n  b: ${{ pin_compatible('x') }}\n", "unsupported function 'pin_compatible'"),
    ],
)
def test_template_errors(body, message):
    with pytest.raises(RecipeError, match=message):
        render(body + "package:\n  name: x\n  version: '1'\n", "linux-64")


@pytest.mark.parametrize(
    "text, message",
    [
        ("package:\n  name: Upper\n  version: '1'\n", "must be lowercase"),
        ("package:\n  version: '1'\n", "package.name is required"),
        ("package: [\n", "not valid YAML"),
        ("package:\n  name: x\n  version: '1'\nbuild:\n  number: two\n", "not an integer"),
        ("package:\n  name: x\n  version: '1'\nsource:\n  - sha256: ab\n", "exactly one of"),
        ("package:\n  name: x\n  version: '1'\nrequirements:\n  test: [a]\n", "unknown requirements kind"),
        ("package:\n  name: x\n  version: '1'\nrequirements:\n  run: ['a >=']\n", "requirements.run"),
        ("package:\n  name: x\n  version: '1'\nvariants: {}\n", "unknown recipe section"),
    ],
)
def test_recipe_errors(text, message):
    with pytest.raises(RecipeError, match=message):
        render(text, "linux-64")


def test_rendered_yaml_is_concrete_and_rerenders_identically():
    r = render(EVO_HEADER, "osx-arm64")
    text = r.to_yaml()
    assert "${{" not in text
    again = render(text, "osx-arm64")
    assert again.document == r.document and again.to_yaml() == text


# -- archives -----------------------------------------------------------------


def test_archive_headers_are_normalized():
    data = write_archive([Member("b/y", b"2", True), Member("a", b"1")], mtime=123)
    assert data[4:8] == b"\0\0\0\0"  # gzip mtime
    assert data[3] & 0x08 == 0  # no FNAME field
    with tarfile.open(fileobj=io.BytesIO(gzip.decompress(data))) as tar:
        infos = tar.getmembers()
    assert [i.name for i in infos] == ["a", "b/y"]
    assert {(i.mtime, i.uid, i.gid, i.uname, i.gname) for i in infos} == {(123, 0, 0, "", "")}
    assert [i.mode for i in infos] == [0o644, 0o755]


@settings(max_examples=60, deadline=None)
@given(
    st.dictionaries(
        st.from_regex(r"[a-z]{1,6}(/[a-z0-9._-]{1,8}){0,3}", fullmatch=True).filter(lambda p: ".." not in p and "/." not in p and not p.endswith(".")),
        st.tuples(st.binary(max_size=64), st.booleans()),
        max_size=8,
    ),
    st.randoms(),
)
def test_archive_bytes_ignore_member_order(files, rnd):
    members = [Member(p, d, x) for p, (d, x) in files.items()]
    paths = set(files)
    if any(p != q and q.startswith(p + "/") for p in paths for q in paths):
        return  # a path cannot be both a file and a directory
    shuffled = list(members)
    rnd.shuffle(shuffled)
    assert write_archive(members, 5) == write_archive(shuffled, 5)
    assert {m.path: m.data for m in read_archive(write_archive(members, 5))} == {m.path: m.data for m in members}


@pytest.mark.parametrize("bad", ["/abs", "../up", "a/../b", "a//b", "./a", "c:/x", "a\\b", ""])
def test_unsafe_member_paths_are_rejected(bad):
    with pytest.raises(Exception, match="unsafe"):
        write_archive([Member(bad, b"")], 0)


def test_diff_names_member_and_offset():
    a = write_archive([Member("x", b"same"), Member("y", b"abcdef")], 0)
    b = write_archive([Member("x", b"same"), Member("y", b"abcXef")], 0)
    diff = diff_archives(a, b)
    assert (diff.member, diff.offset) == ("y", 3)
    assert diff_archives(a, a) is None
    c = write_archive([Member("x", b"same"), Member("z", b"abcdef")], 0)
    assert (diff_archives(a, c).member, diff_archives(a, c).offset) == ("y", -1)


# -- building -----------------------------------------------------------------


def test_hello_artifact_layout(hello_dir):
    art = hello_artifact(hello_dir)
    members = {m.path: m for m in read_archive(art.archive)}
    assert sorted(members) == [
        "bin/hello",
        FILES_LIST,
        INDEX_JSON,
        RENDERED_RECIPE,
        "share/hello/greeting.txt",
        "share/hello/where.txt",
    ]
    assert [m.path for m in read_archive(art.archive)] == sorted(members)
    assert members["bin/hello"].executable and members["bin/hello"].mode == 0o755
    assert not members["share/hello/greeting.txt"].executable
    assert members[FILES_LIST].data == b"bin/hello\nshare/hello/greeting.txt\nshare/hello/where.txt\n"
    # the absolute staging path is replaced by the token
    assert members["share/hello/where.txt"].data == b"$PREFIX/lib"

    rec = art.record
    assert (rec.name, rec.version.raw, rec.build_number, rec.subdir) == ("hello", "0.2.0", 3, "linux-64")
    assert rec.build.startswith("h") and rec.build.endswith("_3") and len(rec.build) == 10
    assert rec.timestamp == EPOCH * 1000 and rec.depends == ("python >=3.8",)
    assert rec.sha256 == sha256_hex(art.archive) and rec.size == len(art.archive)
    assert rec.filename == f"hello-0.2.0-{rec.build}.pakrat.tar.gz"
    rec.validate()
    index = canonical_decode(members[INDEX_JSON].data)
    assert index["name"] == "hello" and "sha256" not in index


def test_build_is_independent_of_workdir_and_clock(hello_dir, tmp_path):
    first = build(render(HELLO, "linux-64"), tmp_path / "one", EPOCH, recipe_dir=hello_dir)
    second = build(render(HELLO, "linux-64"), tmp_path / "elsewhere" / "deeper" / "two", EPOCH, recipe_dir=hello_dir)
    os.utime(hello_dir / "src" / "hello.sh", (1, 1))  # source mtimes do not matter once the epoch is fixed
    third = build(render(HELLO, "linux-64"), None, EPOCH, recipe_dir=hello_dir)
    assert first.archive == second.archive == third.archive


def test_source_date_epoch_defaults(hello_dir, monkeypatch):
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
    for p in (hello_dir / "src").iterdir():
        os.utime(p, (1000, 1000))
    os.utime(hello_dir / "src" / "greeting.txt", (5000, 5000))
    rendered = render(HELLO, "linux-64")
    assert build(rendered, recipe_dir=hello_dir).record.timestamp == 5_000_000
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "42")
    assert build(rendered, recipe_dir=hello_dir).record.timestamp == 42_000
    assert build(rendered, recipe_dir=hello_dir, source_date_epoch=7).record.timestamp == 7_000


def test_metadata_fidelity(hello_dir):
    art = hello_artifact(hello_dir)
    embedded = {m.path: m.data for m in read_archive(art.archive)}[RENDERED_RECIPE].decode()
    rebuilt = build(render(embedded, "linux-64"), recipe_dir=hello_dir, source_date_epoch=EPOCH)
    assert rebuilt.archive == art.archive


def test_recipe_change_changes_build_string(hello_dir):
    base = hello_artifact(hello_dir).record.build
    other = build(render(HELLO.replace("MIT", "BSD-3-Clause"), "linux-64"), recipe_dir=hello_dir, source_date_epoch=EPOCH)
    assert other.record.build != base


def test_qa_names_the_missing_header(tmp_path):
    (tmp_path / "zenoh-src").mkdir()
    (tmp_path / "zenoh-src" / "libzenohpico.a").write_bytes(b"\x7fELF")
    (tmp_path / "zenoh-src" / "zenoh-pico.h").write_text("#pragma once\n")
    ok = build(render(ZENOH_COMPLETE, "linux-64"), recipe_dir=tmp_path, source_date_epoch=EPOCH)
    assert "include/zenoh-pico.h" in ok.files and "lib/libzenohpico.a" in ok.files

    broken = ZENOH_COMPLETE.replace("cp libzenohpico.a zenoh-pico.h", "cp libzenohpico.a")
    with pytest.raises(BuildError) as info:
        build(render(broken, "linux-64"), recipe_dir=tmp_path, source_date_epoch=EPOCH)
    assert info.value.stage == "quality assurance"
    assert "include/zenoh-pico.h" in str(info.value) and "libzenohpico" not in str(info.value).split("missing")[1]


def test_build_requirements_need_a_provider():
    with pytest.raises(BuildError) as info:
        build(render(ZENOH, "linux-64"), source_date_epoch=EPOCH)
    assert info.value.stage == "environment preparation"
    assert "stub-compiler-c" in str(info.value)


def test_script_failure_reports_stage_and_output(tmp_path):
    text = "package:\n  name: boom\n  version: '1'\nbuild:\n  script:\n    - echo about to fail\n    - rm does-not-exist\n    - echo unreachable\n"
    with pytest.raises(BuildError) as info:
        build(render(text, "linux-64"), source_date_epoch=EPOCH)
    err = info.value
    assert err.stage == "build execution" and "about to fail" in err.output and "unreachable" not in err.output
    assert "does-not-exist" in err.output


def test_source_sha256_is_verified(tmp_path):
    (tmp_path / "blob.txt").write_text("payload")
    good = sha256_hex(b"payload")
    text = "package:\n  name: s\n  version: '1'\nsource:\n  - path: blob.txt\n    sha256: {sha}\nbuild:\n  script:\n    - mkdir $PREFIX/share\n    - cp blob.txt $PREFIX/share/\n"
    art = build(render(text.format(sha=good), "linux-64"), recipe_dir=tmp_path, source_date_epoch=1)
    assert art.files == ["share/blob.txt"]
    with pytest.raises(BuildError) as info:
        build(render(text.format(sha="0" * 64), "linux-64"), recipe_dir=tmp_path, source_date_epoch=1)
    assert info.value.stage == "source acquisition" and "sha256 mismatch" in str(info.value)


def test_url_source_archive_is_unpacked(tmp_path):
    raw = io.BytesIO()
    with tarfile.open(fileobj=raw, mode="w:gz") as tar:
        info = tarfile.TarInfo("proj-1.0/data.txt")
        info.size = 4
        tar.addfile(info, io.BytesIO(b"data"))
    (tmp_path / "proj-1.0.tar.gz").write_bytes(raw.getvalue())
    url = (tmp_path / "proj-1.0.tar.gz").as_uri()
    text = (
        f"package:\n  name: p\n  version: '1.0'\nsource:\n  url: {url}\n  sha256: {sha256_hex(raw.getvalue())}\n"
        "build:\n  script:\n    - mkdir $PREFIX/share\n    - cp data.txt $PREFIX/share/\n"
    )
    assert build(render(text, "linux-64"), source_date_epoch=1).files == ["share/data.txt"]


def test_info_directory_is_reserved():
    text = "package:\n  name: p\n  version: '1'\nbuild:\n  script:\n    - mkdir -p $PREFIX/info\n    - $PYTHON -c \"import os; open(os.environ['PREFIX'] + '/info/x', 'w')\"\n"
    with pytest.raises(BuildError, match="reserved"):
        build(render(text, "linux-64"), source_date_epoch=1)


# -- reproducibility ----------------------------------------------------------


def test_verify_reproducible_ok(hello_dir):
    report = verify_reproducible(HELLO, recipe_dir=hello_dir, n=3, source_date_epoch=EPOCH)
    assert report.ok and len(report.digests) == 3 and "reproducible" in str(report)


def test_wall_clock_recipe_is_flagged():
    report = verify_reproducible(CLOCK, source_date_epoch=EPOCH)
    assert not report.ok
    assert report.difference.member == "share/stamp.txt"
    assert report.difference.offset >= 0
    assert "share/stamp.txt" in str(report)


def test_shuffled_creation_order_is_still_reproducible():
    report = verify_reproducible(SHUFFLE, n=3, source_date_epoch=EPOCH)
    assert report.ok


# -- path dependencies and channels -------------------------------------------


def test_path_dependency_with_recipe(hello_dir):
    art = build_path_dependency(hello_dir, "linux-64", source_date_epoch=EPOCH)
    assert art.archive == hello_artifact(hello_dir).archive


def test_path_dependency_from_package_table(tmp_path):
    (tmp_path / "tool.py").write_text("print('tool')\n")
    (tmp_path / "pakrat.toml").write_text(
        '[workspace]\nname = "tool"\nchannels = []\nplatforms = ["linux-64"]\n\n'
        '[package]\nname = "tool"\nversion = "0.1.0"\n\n'
        '[package.build]\nnoarch = "generic"\nscript = ["mkdir -p $PREFIX/share/tool", "cp tool.py $PREFIX/share/tool/"]\n'
    )
    art = build_path_dependency(tmp_path, "linux-64", source_date_epoch=EPOCH)
    assert art.files == ["share/tool/tool.py"]
    assert (art.record.name, art.record.version.raw, art.record.subdir) == ("tool", "0.1.0", "noarch")


def test_empty_directory_is_not_buildable(tmp_path):
    with pytest.raises(RecipeError, match="neither recipe.yaml"):
        build_path_dependency(tmp_path, "linux-64")


def test_path_version_mismatch_is_unsat(hello_dir):
    record = build_path_dependency(hello_dir, "linux-64", source_date_epoch=EPOCH).record
    provider = OverlayProvider(InMemoryProvider([rec("python", "3.12.0")]), [record])
    assert solve(["hello 0.2.*"], provider).selected["hello"] == record
    with pytest.raises(UnsatError) as info:
        solve(["hello ==0.3.0"], provider)
    assert "hello" in str(info.value)


def test_published_artifact_installs_and_verifies(hello_dir, tmp_path):
    from pakrat.env import install_records, prefix_check

    channel = tmp_path / "channel"
    record = publish(hello_artifact(hello_dir), channel)
    newer = build(render(HELLO, "linux-64", {"version": "0.3.0"}), recipe_dir=hello_dir, source_date_epoch=EPOCH)
    publish(newer, channel)
    repodata = load_subdir(channel / "linux-64")
    assert len(repodata.packages) == 2 and (channel / "linux-64" / "repodata_shards.json").exists()
    client = ChannelClient(CacheStore(tmp_path / "cache"))
    provider = ChannelProvider([record.channel], "linux-64", client)
    [found] = [r for r in provider.candidates_for("hello") if r.sha256 == record.sha256]
    assert found.url == record.url
    prefix = tmp_path / "prefix"
    install_records([found], prefix, client, "linux-64")
    assert (prefix / "bin" / "hello").read_text() == HELLO_SOURCES["src/hello.sh"]
    assert prefix_check(prefix).ok


def test_build_environment_is_provisioned(tmp_path):
    """Build requirements are solved and installed into an isolated build prefix."""
    from channel_kit import packaged, write_channel

    stub = "#!/bin/sh\necho compiled-by-stub\n"
    entries = [
        packaged(name, "1.0", [], "linux-64", {f"bin/{tool}": stub}, executable=True)
        for name, tool in [("stub-compiler-c", "cc"), ("stub-compiler-cxx", "c++"), ("cmake", "cmake"), ("make", "make")]
    ]
    channel = write_channel(tmp_path / "ch", entries)
    client = ChannelClient(CacheStore(tmp_path / "cache"))
    provider = ChannelProvider([channel.as_uri()], "linux-64", client)
    recipe = ZENOH.replace("- echo ${CMAKE_ARGS} done", "- cc\n    - cp $BUILD_PREFIX/bin/cc $PREFIX/include/zenoh-pico.h")
    art = build(render(recipe, "linux-64"), provider=provider, source_date_epoch=EPOCH)
    assert "compiled-by-stub" in art.log
    assert art.rendered.document["build_environment"] == sorted(
        f for f in art.rendered.document["build_environment"]
    ) and len(art.rendered.document["build_environment"]) == 4
    header = {m.path: m.data for m in read_archive(art.archive)}["include/zenoh-pico.h"]
    assert header == stub.encode()
    embedded = yaml.safe_load({m.path: m.data for m in read_archive(art.archive)}[RENDERED_RECIPE])
    assert len(embedded["build_environment"]) == 4
