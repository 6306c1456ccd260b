use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Int,
    Str,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

impl Column {
    pub fn int(name: &str) -> Self {
        Column {
            name: name.to_string(),
            ty: ColumnType::Int,
        }
    }

    pub fn str(name: &str) -> Self {
        Column {
            name: name.to_string(),
            ty: ColumnType::Str,
        }
    }
}

/// A base table with set semantics: rows are sorted and distinct.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: Vec<Column>, mut rows: Vec<Vec<Value>>) -> Result<Self> {
        for r in &rows {
            if r.len() != columns.len() {
                return Err(Error::Schema(format!(
                    "row of width {} in a table with {} columns",
                    r.len(),
                    columns.len()
                )));
            }
            for (v, c) in r.iter().zip(&columns) {
                let ok = matches!((v, c.ty), (Value::Int(_), ColumnType::Int) | (Value::Str(_), ColumnType::Str));
                if !ok {
                    return Err(Error::Schema(format!("value {v} does not fit column `{}`", c.name)));
                }
            }
        }
        rows.sort();
        rows.dedup();
        Ok(Table { columns, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// A database instance: named base tables.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataInstance {
    pub tables: BTreeMap<String, Table>,
}

impl DataInstance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, table: Table) {
        self.tables.insert(name.into(), table);
    }

    pub fn table(&self, name: &str) -> Result<&Table> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::Schema(format!("no table `{name}` in the instance")))
    }

    /// Loads `schema.json` (table → ordered columns) and one `<table>.csv`
    /// per table, with a header row.
    pub fn load(dir: &Path) -> Result<Self> {
        let schema: BTreeMap<String, Vec<Column>> =
            serde_json::from_str(&fs::read_to_string(dir.join("schema.json"))?)?;
        let mut d = DataInstance::new();
        for (name, columns) in schema {
            let mut reader = csv::Reader::from_path(dir.join(format!("{name}.csv")))?;
            let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
            let expected: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
            if header != expected {
                return Err(Error::Schema(format!(
                    "header of `{name}.csv` is {header:?}, schema says {expected:?}"
                )));
            }
            let mut rows = Vec::new();
            for rec in reader.records() {
                let rec = rec?;
                let mut row = Vec::with_capacity(columns.len());
                for (field, col) in rec.iter().zip(&columns) {
                    row.push(match col.ty {
                        ColumnType::Int => Value::Int(field.trim().parse().map_err(|_| {
                            Error::Schema(format!("`{field}` in `{name}.{}` is not an integer", col.name))
                        })?),
                        ColumnType::Str => Value::Str(field.to_string()),
                    });
                }
                rows.push(row);
            }
            d.insert(name, Table::new(columns, rows)?);
        }
        Ok(d)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let schema: BTreeMap<&String, &Vec<Column>> = self.tables.iter().map(|(n, t)| (n, &t.columns)).collect();
        fs::write(dir.join("schema.json"), serde_json::to_string_pretty(&schema)?)?;
        for (name, t) in &self.tables {
            let mut w = csv::Writer::from_path(dir.join(format!("{name}.csv")))?;
            w.write_record(t.columns.iter().map(|c| c.name.as_str()))?;
            for r in &t.rows {
                w.write_record(r.iter().map(Value::render))?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_deduplicated_and_typed() {
        let t = Table::new(
            vec![Column::int("a")],
            vec![vec![Value::Int(2)], vec![Value::Int(1)], vec![Value::Int(2)]],
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert!(Table::new(vec![Column::int("a")], vec![vec![Value::str("x")]]).is_err());
        assert!(Table::new(vec![Column::int("a")], vec![vec![]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = DataInstance::new();
        d.insert(
            "T",
            Table::new(
                vec![Column::int("a"), Column::str("s")],
                vec![vec![Value::Int(1), Value::str("x,y")], vec![Value::Int(-3), Value::str("")]],
            )
            .unwrap(),
        );
        d.save(dir.path()).unwrap();
        assert_eq!(DataInstance::load(dir.path()).unwrap(), d);
    }
}
