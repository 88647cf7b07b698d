//! Conversion of the raw UCI census file (`adult.data`) to the numeric
//! 11-column table used with `data/adult/dag.json`.
//!
//! Categorical attributes are reduced to indicators; rows with a `?` in any
//! used attribute are dropped.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;

use crate::graph::{NodeKind, NodeSpec};
use crate::table::{Table, TableError};

/// SHA-256 of the UCI `adult.data` file this converter expects.
pub const ADULT_DATA_SHA256: &str = "5b00264637dbfec36bdeaab5676b0b309ff9eb788d63554ca0a249491c86603d";

const RAW_WIDTH: usize = 15;

pub fn adult_schema() -> Vec<NodeSpec> {
    use NodeKind::{Binary, Continuous};
    [
        ("age", Continuous),
        ("sex", Binary),
        ("race", Binary),
        ("native_country", Binary),
        ("marital_status", Binary),
        ("relationship", Binary),
        ("education", Continuous),
        ("occupation", Binary),
        ("workclass", Binary),
        ("hours_per_week", Continuous),
        ("income", Binary),
    ]
    .into_iter()
    .map(|(n, k)| NodeSpec::new(n, k))
    .collect()
}

const WHITE_COLLAR: [&str; 5] = [
    "Exec-managerial",
    "Prof-specialty",
    "Tech-support",
    "Sales",
    "Adm-clerical",
];

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Parses raw records. Encoding: `sex` 1 = Male, `race` 1 = White,
/// `native_country` 1 = United-States, `marital_status` 1 = any Married-*
/// status, `relationship` 1 = Husband or Wife, `occupation` 1 = white-collar
/// group, `workclass` 1 = Private, `education` = years of education,
/// `income` 1 = >50K.
pub fn read_adult<R: Read>(reader: R) -> Result<Table, TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != RAW_WIDTH {
            return Err(TableError::RowWidth {
                row: r,
                found: record.len(),
                expected: RAW_WIDTH,
            });
        }
        let f = |i: usize| record[i].trim_end_matches('.');
        let used = [0, 1, 4, 5, 6, 7, 8, 9, 12, 13, 14];
        if used.iter().any(|&i| f(i) == "?") {
            continue;
        }
        let num = |i: usize, name: &str| -> Result<f64, TableError> {
            f(i).parse().map_err(|_| TableError::NonNumeric {
                row: r,
                column: name.to_string(),
                value: f(i).to_string(),
            })
        };
        values.extend([
            num(0, "age")?,
            indicator(f(9) == "Male"),
            indicator(f(8) == "White"),
            indicator(f(13) == "United-States"),
            indicator(f(5).starts_with("Married")),
            indicator(matches!(f(7), "Husband" | "Wife")),
            num(4, "education")?,
            indicator(WHITE_COLLAR.contains(&f(6))),
            indicator(f(1) == "Private"),
            num(12, "hours_per_week")?,
            indicator(f(14) == ">50K"),
        ]);
        rows += 1;
    }
    let schema = adult_schema();
    let data = Array2::from_shape_vec((rows, schema.len()), values).expect("fixed width rows");
    Table::new(schema, data)
}

pub fn load_adult(path: impl AsRef<Path>) -> Result<Table, TableError> {
    read_adult(std::fs::File::open(path)?)
}
