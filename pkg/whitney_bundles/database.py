import json
import os
import sqlite3
from datetime import datetime, timezone

DB_ENV = "WHITNEY_BUNDLES_DB"


def default_db_path():
    return os.environ.get(DB_ENV) or None


def get_connection(db_path):
    conn = sqlite3.connect(db_path)
    conn.row_factory = sqlite3.Row
    return conn


def init_db(db_path):
    conn = get_connection(db_path)

    # One row per CLI invocation that produced a report
    conn.execute(
        """
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            command TEXT NOT NULL,
            spec_path TEXT,
            spec_digest TEXT,
            exit_code INTEGER NOT NULL,
            verdict TEXT,
            flags TEXT NOT NULL,
            report TEXT NOT NULL,
            created_at TEXT NOT NULL
        )
    """
    )

    conn.commit()
    conn.close()


# --- Run operations ---

def record_run(db_path, command, exit_code, report, spec_path=None, spec_digest=None, verdict=None, flags=None):
    init_db(db_path)
    conn = get_connection(db_path)
    now = datetime.now(timezone.utc).isoformat()
    cursor = conn.execute(
        "INSERT INTO runs (command, spec_path, spec_digest, exit_code, verdict, flags, report, created_at) "
        "VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
        (command, spec_path, spec_digest, exit_code, verdict, json.dumps(flags or {}, sort_keys=True), report, now),
    )
    run_id = cursor.lastrowid
    conn.commit()
    conn.close()
    return run_id


def get_runs(db_path, limit=20):
    """Most recent runs first, without the report bodies."""
    init_db(db_path)
    conn = get_connection(db_path)
    rows = conn.execute(
        "SELECT id, command, spec_path, exit_code, verdict, created_at FROM runs ORDER BY id DESC LIMIT ?",
        (limit,),
    ).fetchall()
    conn.close()
    return [dict(row) for row in rows]


def get_run(db_path, run_id):
    init_db(db_path)
    conn = get_connection(db_path)
    row = conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone()
    conn.close()

    if row:
        run = dict(row)
        run["flags"] = json.loads(run["flags"])
        return run
    return None


def delete_run(db_path, run_id):
    init_db(db_path)
    conn = get_connection(db_path)
    cursor = conn.execute("DELETE FROM runs WHERE id = ?", (run_id,))
    conn.commit()
    conn.close()
    return cursor.rowcount > 0
