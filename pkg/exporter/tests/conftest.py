"""Shared fixtures; the exporter is only allowed to drive cimpool via its CLI."""

import json
import subprocess
import sys

import pytest

CIMPOOL = (sys.executable, "-m", "cimpool.cli")


@pytest.fixture(scope="session")
def run_cimpool():
    """Callable invoking the installed cimpool CLI in a child process."""

    def run(*args):
        return subprocess.run([*CIMPOOL, *map(str, args)], capture_output=True, text=True)

    return run


@pytest.fixture(scope="session")
def cimpool_json(run_cimpool):
    """Callable returning parsed --json output of a successful cimpool call."""

    def call(*args):
        proc = run_cimpool(*args, "--json")
        assert proc.returncode == 0, proc.stderr
        return json.loads(proc.stdout)

    return call
