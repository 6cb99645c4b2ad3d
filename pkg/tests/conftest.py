import pytest


@pytest.fixture
def verdict(capsys, request):
    """Print one PASS/FAIL line for the calling test, then assert."""
    def report(ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {request.node.name}: {detail}")
        assert ok, detail
    return report
