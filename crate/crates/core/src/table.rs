//! Numeric tables with a typed schema, plus CSV input and output.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use crate::graph::{CausalDag, NodeKind, NodeSpec};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("header does not match schema: {0}")]
    SchemaMismatch(String),
    #[error("missing value at row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("non-numeric value `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("binary column `{column}` holds {value} at row {row}")]
    NotBinary {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("row {row} has {found} cells, expected {expected}")]
    RowWidth {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T, E = TableError> = std::result::Result<T, E>;

/// Column-typed numeric data, stored row-major.
///
/// Binary columns hold only `0.0` or `1.0`; [`Table::new`] enforces this.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Vec<NodeSpec>,
    data: Array2<f64>,
}

impl Table {
    pub fn new(schema: Vec<NodeSpec>, data: Array2<f64>) -> Result<Self> {
        if data.ncols() != schema.len() {
            return Err(TableError::RowWidth {
                row: 0,
                found: data.ncols(),
                expected: schema.len(),
            });
        }
        for (i, c) in schema.iter().enumerate() {
            if schema[..i].iter().any(|p| p.name == c.name) {
                return Err(TableError::DuplicateColumn(c.name.clone()));
            }
        }
        let table = Self { schema, data };
        table.check_binary()?;
        Ok(table)
    }

    fn check_binary(&self) -> Result<()> {
        for (j, col) in self.schema.iter().enumerate() {
            if col.kind != NodeKind::Binary {
                continue;
            }
            if let Some((row, &value)) = self
                .data
                .column(j)
                .iter()
                .enumerate()
                .find(|(_, &v)| v != 0.0 && v != 1.0)
            {
                return Err(TableError::NotBinary {
                    row,
                    column: col.name.clone(),
                    value,
                });
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &[NodeSpec] {
        &self.schema
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schema.iter().map(|c| c.name.as_str())
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<ArrayView1<'_, f64>> {
        Ok(self.data.column(self.column_index(name)?))
    }

    pub fn kind(&self, name: &str) -> Result<NodeKind> {
        Ok(self.schema[self.column_index(name)?].kind)
    }

    /// Overwrites every cell of a column with `value`.
    pub fn set_column(&mut self, name: &str, value: f64) -> Result<()> {
        let j = self.column_index(name)?;
        if self.schema[j].kind == NodeKind::Binary && value != 0.0 && value != 1.0 {
            return Err(TableError::NotBinary {
                row: 0,
                column: name.to_string(),
                value,
            });
        }
        self.data.column_mut(j).fill(value);
        Ok(())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            data: self.data.select(Axis(0), rows),
        }
    }

    /// Keeps only the named columns, in the given order.
    pub fn select_columns(&self, names: &[&str]) -> Result<Table> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Table {
            schema: idx.iter().map(|&j| self.schema[j].clone()).collect(),
            data: self.data.select(Axis(1), &idx),
        })
    }

    pub fn drop_columns(&self, names: &[String]) -> Result<Table> {
        for n in names {
            self.column_index(n)?;
        }
        let keep: Vec<&str> = self.names().filter(|n| !names.iter().any(|d| d == n)).collect();
        self.select_columns(&keep)
    }

    /// Reorders columns to follow the node order of `dag`. Extra columns and
    /// kind disagreements are schema errors.
    pub fn aligned_to(&self, dag: &CausalDag) -> Result<Table> {
        if self.ncols() != dag.len() {
            let extra: Vec<&str> = self.names().filter(|n| !dag.contains(n)).collect();
            return Err(TableError::SchemaMismatch(format!(
                "table has {} columns, graph has {} nodes (columns outside graph: {extra:?})",
                self.ncols(),
                dag.len()
            )));
        }
        for node in dag.nodes() {
            let kind = self.kind(&node.name)?;
            if kind != node.kind {
                return Err(TableError::SchemaMismatch(format!(
                    "column `{}` is {kind:?} in data but {:?} in graph",
                    node.name, node.kind
                )));
            }
        }
        let names: Vec<&str> = dag.nodes().iter().map(|n| n.name.as_str()).collect();
        self.select_columns(&names)
    }

    /// Reads CSV with a header row. Columns are matched to `schema` by name
    /// and must cover it exactly.
    pub fn read_csv<R: Read>(reader: R, schema: &[NodeSpec]) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut positions = Vec::with_capacity(schema.len());
        for col in schema {
            let pos = header.iter().position(|h| *h == col.name).ok_or_else(|| {
                TableError::SchemaMismatch(format!("column `{}` missing from header", col.name))
            })?;
            positions.push(pos);
        }
        if let Some(extra) = header.iter().find(|h| !schema.iter().any(|c| &c.name == *h)) {
            return Err(TableError::SchemaMismatch(format!(
                "header column `{extra}` is not in the schema"
            )));
        }
        if header.len() != schema.len() {
            return Err(TableError::SchemaMismatch("header repeats a column".into()));
        }

        let mut values = Vec::new();
        let mut rows = 0;
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != header.len() {
                return Err(TableError::RowWidth {
                    row: r,
                    found: record.len(),
                    expected: header.len(),
                });
            }
            for (col, &pos) in schema.iter().zip(&positions) {
                let cell = record[pos].trim();
                if cell.is_empty() || cell == "?" || cell.eq_ignore_ascii_case("na") {
                    return Err(TableError::MissingValue {
                        row: r,
                        column: col.name.clone(),
                    });
                }
                let v: f64 = cell.parse().map_err(|_| TableError::NonNumeric {
                    row: r,
                    column: col.name.clone(),
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(TableError::NonNumeric {
                        row: r,
                        column: col.name.clone(),
                        value: cell.to_string(),
                    });
                }
                values.push(v);
            }
            rows += 1;
        }
        let data = Array2::from_shape_vec((rows, schema.len()), values)
            .expect("row widths were checked");
        Table::new(schema.to_vec(), data)
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &[NodeSpec]) -> Result<Table> {
        Table::read_csv(std::fs::File::open(path)?, schema)
    }

    /// Reads CSV and infers kinds: a column holding only 0 and 1 is binary.
    pub fn load_csv_inferred(path: impl AsRef<Path>) -> Result<Table> {
        let text = std::fs::read_to_string(path)?;
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let untyped: Vec<NodeSpec> = header
            .iter()
            .map(|h| NodeSpec::new(h.clone(), NodeKind::Continuous))
            .collect();
        let mut table = Table::read_csv(text.as_bytes(), &untyped)?;
        for (j, col) in table.schema.iter_mut().enumerate() {
            if table.data.column(j).iter().all(|&v| v == 0.0 || v == 1.0) {
                col.kind = NodeKind::Binary;
            }
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.names())?;
        for row in self.data.rows() {
            w.write_record(row.iter().map(|v| format_cell(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Shortest representation that parses back to the same `f64`.
fn format_cell(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn schema() -> Vec<NodeSpec> {
        vec![
            NodeSpec::new("age", NodeKind::Continuous),
            NodeSpec::new("sex", NodeKind::Binary),
        ]
    }

    #[test]
    fn binary_columns_are_validated() {
        let err = Table::new(schema(), array![[1.0, 0.0], [2.0, 0.5]]).unwrap_err();
        assert!(matches!(err, TableError::NotBinary { row: 1, .. }));
    }

    #[test]
    fn csv_reorders_to_schema() {
        let csv = "sex,age\n1,30.5\n0,41\n";
        let t = Table::read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.data(), &array![[30.5, 1.0], [41.0, 0.0]]);
    }

    #[test]
    fn missing_cell_names_row_and_column() {
        let csv = "age,sex\n30,1\n,0\n";
        match Table::read_csv(csv.as_bytes(), &schema()).unwrap_err() {
            TableError::MissingValue { row, column } => {
                assert_eq!(row, 1);
                assert_eq!(column, "age");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let csv = "age,gender\n30,1\n";
        assert!(matches!(
            Table::read_csv(csv.as_bytes(), &schema()),
            Err(TableError::SchemaMismatch(_))
        ));
        let csv = "age,sex,extra\n30,1,2\n";
        assert!(matches!(
            Table::read_csv(csv.as_bytes(), &schema()),
            Err(TableError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn non_numeric_cell() {
        let csv = "age,sex\nold,1\n";
        assert!(matches!(
            Table::read_csv(csv.as_bytes(), &schema()),
            Err(TableError::NonNumeric { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = Table::new(schema(), array![[0.1 + 0.2, 1.0], [-1e-300, 0.0], [12345.0, 1.0]])
            .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Table::read_csv(buf.as_slice(), &schema()).unwrap();
        assert_eq!(back, t);
    }
}
