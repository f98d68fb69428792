//! Execution bridge to the embedded SQLite engine.

use std::collections::BTreeSet;
use std::path::Path;

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use super::ast::{Select, SqlQuery};
use super::eval::format_real;
use crate::table::Table;

/// Table name used when a query does not name one (the Squall convention).
pub const DEFAULT_TABLE_NAME: &str = "w";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    ExecError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub status: ExecStatus,
    /// Result cells flattened row-major.
    pub denotation: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_msg: Option<String>,
}

impl OracleResult {
    pub fn error(msg: impl Into<String>) -> Self {
        OracleResult {
            status: ExecStatus::ExecError,
            denotation: Vec::new(),
            error_msg: Some(msg.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

fn quote_ident(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// An in-memory database holding `t` as `name(c1, .., cN)`, every column with
/// NUMERIC affinity and every cell inserted as text. Row `i` gets rowid `i+1`.
pub fn build_database(t: &Table, name: &str) -> rusqlite::Result<Connection> {
    let conn = Connection::open_in_memory()?;
    let cols: Vec<String> = (1..=t.n_cols()).map(|k| format!("c{k} NUMERIC")).collect();
    conn.execute(
        &format!("CREATE TABLE {} ({})", quote_ident(name), cols.join(", ")),
        [],
    )?;
    let placeholders: Vec<String> = (0..=t.n_cols()).map(|k| format!("?{}", k + 1)).collect();
    let names: Vec<String> = (1..=t.n_cols()).map(|k| format!("c{k}")).collect();
    let sql = format!(
        "INSERT INTO {} (rowid, {}) VALUES ({})",
        quote_ident(name),
        names.join(", "),
        placeholders.join(", ")
    );
    {
        let mut stmt = conn.prepare(&sql)?;
        for (i, row) in t.rows().iter().enumerate() {
            let mut params: Vec<&dyn rusqlite::ToSql> = Vec::with_capacity(row.len() + 1);
            let rowid = (i + 1) as i64;
            params.push(&rowid);
            for c in row {
                params.push(c);
            }
            stmt.execute(params.as_slice())?;
        }
    }
    Ok(conn)
}

pub fn open_database(path: &Path) -> rusqlite::Result<Connection> {
    Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
}

/// The table name a query reads from, for building its database.
pub fn target_table(q: &SqlQuery) -> String {
    q.select()
        .map(|s| s.from.clone())
        .unwrap_or_else(|| DEFAULT_TABLE_NAME.to_owned())
}

fn value_text(v: ValueRef<'_>) -> String {
    match v {
        ValueRef::Null => String::new(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(r) => format_real(r),
        ValueRef::Text(b) | ValueRef::Blob(b) => String::from_utf8_lossy(b).into_owned(),
    }
}

/// Run a gold query and flatten its result. Errors are captured in the
/// returned status rather than propagated.
pub fn execute_gold(conn: &Connection, q: &SqlQuery) -> OracleResult {
    match run(conn, &q.raw) {
        Ok(d) => OracleResult {
            status: ExecStatus::Ok,
            denotation: d,
            error_msg: None,
        },
        Err(e) => OracleResult::error(e.to_string()),
    }
}

fn run(conn: &Connection, sql: &str) -> rusqlite::Result<Vec<String>> {
    let mut stmt = conn.prepare(sql)?;
    let n = stmt.column_count();
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        for i in 0..n {
            out.push(value_text(row.get_ref(i)?));
        }
    }
    Ok(out)
}

/// Row indices (0-based) selected by the WHERE clause of `q`, read back from
/// the engine as `SELECT rowid, * FROM .. WHERE ..`.
pub fn engine_row_ids(conn: &Connection, q: &Select) -> rusqlite::Result<BTreeSet<usize>> {
    let mut sql = format!("SELECT rowid, * FROM {}", quote_ident(&q.from));
    if let Some(w) = &q.where_clause {
        sql.push_str(&format!(" WHERE {w}"));
    }
    let mut stmt = conn.prepare(&sql)?;
    let ids = stmt
        .query_map([], |r| r.get::<_, i64>(0))?
        .map(|r| r.map(|id| (id - 1) as usize))
        .collect::<rusqlite::Result<_>>()?;
    Ok(ids)
}
