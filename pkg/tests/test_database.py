import pytest

from whitney_bundles import database


@pytest.fixture
def db_path(tmp_path):
    return str(tmp_path / "runs.db")


def test_record_and_list(db_path):
    first = database.record_run(db_path, "decide", 0, "{}", spec_path="a.json", verdict="SOLVABLE")
    second = database.record_run(db_path, "finiteness", 1, "{}", flags={"k_sharp": 3})
    assert second > first
    runs = database.get_runs(db_path)
    assert [run["id"] for run in runs] == [second, first]
    assert runs[1]["verdict"] == "SOLVABLE"
    assert "report" not in runs[0]
    assert len(database.get_runs(db_path, limit=1)) == 1


def test_get_run_decodes_flags(db_path):
    run_id = database.record_run(db_path, "decide", 2, '{"verdict": "INCONCLUSIVE"}', flags={"seed": 4})
    run = database.get_run(db_path, run_id)
    assert run["flags"] == {"seed": 4}
    assert run["report"] == '{"verdict": "INCONCLUSIVE"}'
    assert run["exit_code"] == 2
    assert database.get_run(db_path, run_id + 1) is None


def test_delete_run(db_path):
    run_id = database.record_run(db_path, "selfcheck", 0, "{}")
    assert database.delete_run(db_path, run_id)
    assert not database.delete_run(db_path, run_id)
    assert database.get_runs(db_path) == []


def test_default_db_path(monkeypatch):
    monkeypatch.delenv(database.DB_ENV, raising=False)
    assert database.default_db_path() is None
    monkeypatch.setenv(database.DB_ENV, "/tmp/runs.db")
    assert database.default_db_path() == "/tmp/runs.db"
