import pytest

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; the line is printed in the run summary."""
    store = request.config.stash[_ACCEPTANCE]

    def record(cid, ok, detail):
        store[cid] = (bool(ok), detail)
        assert ok, f"{cid}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    order = lambda k: (int("".join(c for c in k.split()[0][1:] if c.isdigit())), k)
    for cid in sorted(store, key=order):
        ok, detail = store[cid]
        terminalreporter.write_line(f"{cid:<8} {'PASS' if ok else 'FAIL'}  {detail}")
