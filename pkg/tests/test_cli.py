from __future__ import annotations

import io
import json
import shutil
import subprocess
import sys
import time
from pathlib import Path

import pytest

from pakrat import cli
from pakrat.cli import main
from pakrat.lockfile import load_lockfile

from hello_world import EXPECTED_COW, PLATFORMS, write_hello_channel, write_hello_project
from recipes import HELLO, HELLO_SOURCES


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.setenv("PAKRAT_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def channel(tmp_path) -> Path:
    return write_hello_channel(tmp_path / "channel")


@pytest.fixture
def project(tmp_path, channel) -> Path:
    return write_hello_project(tmp_path / "hello-world", "../channel")


def pakrat(*argv: str) -> tuple[int, str]:
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def pakrat_json(*argv: str) -> tuple[int, dict]:
    code, text = pakrat("--json", *argv)
    return code, json.loads(text[text.index("{"):])


# -- the one-command contract -------------------------------------------------------


def test_run_start_on_a_fresh_clone(project, tmp_path, monkeypatch, capfd):
    assert pakrat("--manifest-path", str(project), "--platform", "linux-64", "lock")[0] == 0
    clone = tmp_path / "clone"
    clone.mkdir()
    for name in ("pakrat.toml", "pakrat.lock"):
        shutil.copy(project / name, clone / name)
    monkeypatch.chdir(clone)
    capfd.readouterr()
    started = time.monotonic()
    code, _ = pakrat("--platform", "linux-64", "run", "start")
    assert code == 0 and time.monotonic() - started < 10
    assert capfd.readouterr().out == EXPECTED_COW
    assert (clone / ".pakrat" / "envs" / "default" / "bin" / "cowpy").exists()


def test_run_without_a_lockfile_needs_auto_lock(project, monkeypatch, capfd):
    monkeypatch.chdir(project)
    code, _ = pakrat("--platform", "linux-64", "run", "start")
    assert code == 1 and "--auto-lock" in capfd.readouterr().err
    assert pakrat("run", "--auto-lock", "--platform", "linux-64", "start")[0] == 0
    assert EXPECTED_COW in capfd.readouterr().out
    assert (project / "pakrat.lock").exists()


def test_run_relocks_a_stale_lockfile_unless_locked(project, monkeypatch, capfd):
    monkeypatch.chdir(project)
    pakrat("--platform", "linux-64", "lock")
    toml = project / "pakrat.toml"
    toml.write_text(toml.read_text().replace('cowpy = "1.1.*"', 'cowpy = "1.0.*"'))
    assert pakrat("--platform", "linux-64", "run", "--locked", "start")[0] == 1
    capfd.readouterr()
    assert pakrat("--platform", "linux-64", "run", "start")[0] == 0
    assert capfd.readouterr().out.startswith("[1.0.3] hello world")


def test_run_returns_the_task_or_command_status(project, monkeypatch, capfd):
    monkeypatch.chdir(project)
    toml = project / "pakrat.toml"
    toml.write_text(toml.read_text().replace("[tasks]\n", '[tasks]\nfail = "sh -c \'exit 3\'"\n'))
    code, doc = pakrat_json("--platform", "linux-64", "run", "--auto-lock", "fail")
    assert code == 3 and doc["exit_code"] == 3 and doc["tasks"][-1]["status"] == "failed"
    assert pakrat("--platform", "linux-64", "run", "cowpy", "moo")[0] == 0
    assert capfd.readouterr().out.splitlines()[-4] == " moo"
    assert pakrat("--platform", "linux-64", "run", "no-such-program")[0] == 127


def test_global_flags_work_on_either_side(project):
    a = pakrat_json("--manifest-path", str(project), "--platform", "linux-64", "lock")
    b = pakrat_json("lock", "--manifest-path", str(project / "pakrat.toml"), "--platform", "linux-64")
    assert a[0] == b[0] == 0
    assert a[1]["changed"] is True and b[1]["changed"] is False
    assert a[1]["environments"] == {"default": {p: 2 for p in PLATFORMS}}


# -- lock, check, add ------------------------------------------------------------------


def test_lock_twice_is_byte_identical(project, monkeypatch):
    monkeypatch.chdir(project)
    pakrat("lock")
    first = (project / "pakrat.lock").read_bytes()
    pakrat("lock")
    assert (project / "pakrat.lock").read_bytes() == first


def test_check_after_hand_edit_is_stale(project, monkeypatch, capsys):
    monkeypatch.chdir(project)
    pakrat("lock")
    assert pakrat("check")[0] == 0
    lock = project / "pakrat.lock"
    text = lock.read_text()
    entry = next(line for line in text.splitlines(keepends=True) if "conda:" in line and "cowpy" in line)
    lock.write_text(text.replace(entry, "", 1))
    code, out = pakrat("check")
    assert code == 1
    assert "Stale" in out and "root-unsatisfied: default/linux-64: cowpy 1.1.* is not locked" in out


def test_check_rejects_an_inconsistent_lockfile(project, monkeypatch, capsys):
    monkeypatch.chdir(project)
    pakrat("lock")
    lock = project / "pakrat.lock"
    lock.write_text(lock.read_text().replace("version: 1.1.5", "version: 1.2.0"))
    assert pakrat("check")[0] == 1
    assert "does not end with noarch/cowpy-1.2.0" in capsys.readouterr().err


def test_check_reports_prefix_drift(project, monkeypatch):
    monkeypatch.chdir(project)
    pakrat("--platform", "linux-64", "install", "--auto-lock")
    (project / ".pakrat" / "envs" / "default" / "bin" / "cowpy").write_text("#!/bin/sh\n")
    code, doc = pakrat_json("check")
    assert code == 1 and doc["prefixes"]["default"]["modified"] == ["bin/cowpy"]
    # install repairs the drift
    assert pakrat("--platform", "linux-64", "install")[0] == 0
    assert pakrat("check")[0] == 0


def test_check_without_lockfile(project, monkeypatch):
    monkeypatch.chdir(project)
    code, doc = pakrat_json("check")
    assert code == 1 and doc["error"]["type"] == "LockfileError"


def test_add_relocks_and_unsat_restores_the_manifest(project, monkeypatch):
    monkeypatch.chdir(project)
    toml = project / "pakrat.toml"
    toml.write_text(toml.read_text().replace('cowpy = "1.1.*"\n', ""))
    code, doc = pakrat_json("add", "cowpy 1.0.*")
    assert code == 0 and doc["locked"]
    assert 'cowpy = "1.0.*"' in toml.read_text()
    locked = load_lockfile(project / "pakrat.lock")
    assert {r.version.raw for r in locked.records("default", "linux-64") if r.name == "cowpy"} == {"1.0.3"}

    before = toml.read_text()
    code, doc = pakrat_json("add", "cowpy >=9")
    assert code == 2 and doc["error"]["type"] == "UnsatError"
    assert "cowpy" in doc["error"]["message"]
    assert toml.read_text() == before


def test_init_then_lock(tmp_path, channel, monkeypatch):
    target = tmp_path / "fresh"
    code, doc = pakrat_json("init", str(target), "--name", "fresh", "-c", str(channel), "--platforms", "linux-64", "win-64")
    assert code == 0 and Path(doc["manifest"]) == target / "pakrat.toml"
    assert pakrat("init", str(target))[0] == 1
    monkeypatch.chdir(target)
    assert pakrat("add", "python 3.12.*")[0] == 0
    assert load_lockfile(target / "pakrat.lock").records("default", "win-64")[0].version.raw == "3.12.8"


def test_unknown_platform_or_environment_is_a_user_error(project, monkeypatch):
    monkeypatch.chdir(project)
    pakrat("lock")
    assert pakrat_json("--platform", "osx-64", "install")[1]["error"]["exit_code"] == 1
    assert pakrat("-e", "gpu", "--platform", "linux-64", "install")[0] == 1


def test_usage_errors_exit_1(capsys):
    assert pakrat("frobnicate")[0] == 1
    assert pakrat("--help")[0] == 0


def test_internal_errors_exit_4(project, monkeypatch):
    monkeypatch.chdir(project)

    def boom(_session):
        raise RuntimeError("kaput")

    monkeypatch.setitem(cli.COMMANDS, "lock", boom)
    code, doc = pakrat_json("lock")
    assert code == 4 and doc["error"] == {"exit_code": 4, "message": "kaput", "type": "RuntimeError"}


def test_tampered_package_exits_3(project, channel, monkeypatch):
    monkeypatch.chdir(project)
    pakrat("lock")
    archive = channel / "noarch" / "cowpy-1.1.5-h0_0.pakrat.tar.gz"
    data = bytearray(archive.read_bytes())
    data[-5] ^= 0x01
    archive.write_bytes(bytes(data))
    code, doc = pakrat_json("--platform", "linux-64", "install")
    assert code == 3 and doc["error"]["type"] == "DigestMismatchError"


# -- shard and serve ------------------------------------------------------------------


def test_sharded_and_monolithic_lockfiles_are_identical(tmp_path, channel, monkeypatch):
    from pakrat.transport import serve

    # start from monolithic files only
    for subdir in (*PLATFORMS, "noarch"):
        (channel / subdir / "repodata_shards.json").unlink()
        shutil.rmtree(channel / subdir / "shards")
    with serve(channel) as server:
        project = write_hello_project(tmp_path / "p", server.url)
        monkeypatch.chdir(project)
        assert pakrat("--monolithic", "lock")[0] == 0
        monolithic = (project / "pakrat.lock").read_bytes()
        (project / "pakrat.lock").unlink()
        for subdir in (*PLATFORMS, "noarch"):
            code, doc = pakrat_json("shard", str(channel / subdir / "repodata.json"))
            assert code == 0 and doc["subdir"] == subdir
        server.clear_log()
        assert pakrat("lock")[0] == 0
        assert server.gets("/shards/") and not server.gets("repodata.json")
        assert (project / "pakrat.lock").read_bytes() == monolithic


def test_shard_rejects_other_files(tmp_path):
    (tmp_path / "x.json").write_text("{}")
    assert pakrat("shard", str(tmp_path / "x.json"))[0] == 1


def test_serve_subprocess(channel):
    proc = subprocess.Popen(
        [sys.executable, "-m", "pakrat", "--json", "serve", str(channel), "--port", "0"],
        stdout=subprocess.PIPE, text=True,
    )
    try:
        url = json.loads(proc.stdout.readline())["url"]
        from urllib.request import urlopen

        with urlopen(f"{url}/noarch/repodata_shards.json") as resp:
            assert resp.status == 200
    finally:
        proc.terminate()
        proc.wait(timeout=10)


# -- build and path dependencies -------------------------------------------------------


def write_hello_recipe(root: Path) -> Path:
    for rel, text in HELLO_SOURCES.items():
        (root / rel).parent.mkdir(parents=True, exist_ok=True)
        (root / rel).write_text(text)
    (root / "recipe.yaml").write_text(HELLO)
    return root


def test_build_publishes_into_output_dir(tmp_path):
    recipe = write_hello_recipe(tmp_path / "hello")
    code, doc = pakrat_json("build", str(recipe), "--platform", "linux-64", "--source-date-epoch", "1700000000")
    assert code == 0
    path = Path(doc["artifact"])
    assert path == Path("output") / "linux-64" / "hello-0.2.0-" f"{doc['record']['build']}.pakrat.tar.gz"
    assert (tmp_path / "output" / "linux-64" / "repodata_shards.json").exists()
    code, again = pakrat_json("build", str(recipe / "recipe.yaml"), "--platform", "linux-64",
                              "--source-date-epoch", "1700000000", "--check-reproducible")
    assert code == 0 and again["reproducible"] and again["record"]["sha256"] == doc["record"]["sha256"]


def test_build_error_names_the_stage(tmp_path):
    recipe = write_hello_recipe(tmp_path / "hello")
    (recipe / "src" / "hello.sh").unlink()
    code, doc = pakrat_json("build", str(recipe), "--platform", "linux-64")
    assert code == 1 and doc["error"]["type"] == "BuildError"


def test_path_dependency_project(tmp_path, channel, monkeypatch, capfd):
    write_hello_recipe(tmp_path / "proj" / "hello")
    project = tmp_path / "proj"
    (project / "pakrat.toml").write_text(
        '[workspace]\nname = "demo"\nchannels = ["../channel"]\nplatforms = ["linux-64"]\n\n'
        '[dependencies]\nhello = { path = "hello" }\npython = "3.13.*"\n\n'
        '[tasks]\ngreet = "hello"\n'
    )
    monkeypatch.chdir(project)
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    assert pakrat("lock")[0] == 0
    locked = load_lockfile(project / "pakrat.lock")
    [hello] = [r for r in locked.records("default", "linux-64") if r.name == "hello"]
    assert hello.url.startswith((project / ".pakrat" / "local-channel").resolve().as_uri())

    # a fresh checkout has no local channel: run rebuilds it from source
    shutil.rmtree(project / ".pakrat")
    monkeypatch.delenv("SOURCE_DATE_EPOCH")
    capfd.readouterr()
    assert pakrat("run", "greet")[0] == 0
    assert capfd.readouterr().out.endswith("hello from pakrat\n")


# -- bench --------------------------------------------------------------------------------


def test_bench_micro_json():
    code, doc = pakrat_json("bench", "micro")
    assert code == 0 and doc["byte_ratio"] >= 10
    cold = [r for r in doc["reports"] if r["mode"] == "sharded" and not r["warm"]][0]
    warm = [r for r in doc["reports"] if r["mode"] == "sharded" and r["warm"]][0]
    assert (cold["shard_gets"], warm["shard_gets"]) == (10, 0)
    assert set(cold) == {
        "preset", "mode", "run", "warm", "solve_seconds", "requests", "bytes_downloaded",
        "shard_gets", "cache_hits", "selected", "solver",
    }
