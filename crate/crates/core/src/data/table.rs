//! CSV loading, categorical encoding, and target extraction.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::schema::{normalize_level, normalize_name, ColumnKind, DatasetId, DatasetSchema};
use crate::error::{Error, Result};

/// One table cell: numeric columns parse at load time, categorical and
/// target columns stay text until encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

/// In-memory table with schema-ordered columns (features first, then any
/// target-only columns).
#[derive(Debug, Clone)]
pub struct RawTable {
    pub dataset_id: DatasetId,
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Rows dropped at load time because a numeric cell failed to parse.
    pub rejected_rows: usize,
}

impl RawTable {
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names
            .iter()
            .position(|c| normalize_name(c) == normalize_name(name))
    }
}

/// Load a CSV into a [`RawTable`]. Headers match schema columns after
/// case folding and separator stripping; columns absent from the schema are
/// dropped with a warning, and a missing required column is a schema error.
/// Rows with unparseable numeric cells are rejected and counted.
pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Schema(format!(
                "cannot open dataset file '{}': {e}",
                path.display()
            )),
            _ => Error::Csv(e),
        })?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let header_index: BTreeMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (normalize_name(h), i))
        .collect();

    let required = schema.required_columns();
    let mut col_src = Vec::with_capacity(required.len());
    for (name, _) in &required {
        match header_index.get(&normalize_name(name)) {
            Some(idx) => col_src.push(*idx),
            None => {
                return Err(Error::Schema(format!(
                    "dataset '{}' is missing required column '{name}' (found: {})",
                    schema.dataset_id,
                    headers.join(", ")
                )))
            }
        }
    }
    let used: std::collections::BTreeSet<usize> = col_src.iter().copied().collect();
    let dropped: Vec<&String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !used.contains(i))
        .map(|(_, h)| h)
        .collect();
    if !dropped.is_empty() {
        log::warn!(
            "dropping {} column(s) not in the {} schema: {}",
            dropped.len(),
            schema.dataset_id,
            dropped
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
    }

    let mut rows = Vec::new();
    let mut rejected = 0usize;
    'records: for record in reader.records() {
        let record = record?;
        let mut row = Vec::with_capacity(required.len());
        for ((name, kind), src) in required.iter().zip(&col_src) {
            let cell = record.get(*src).unwrap_or("");
            match kind {
                Some(ColumnKind::Numeral) | Some(ColumnKind::Digit) => {
                    match cell.trim().parse::<f64>() {
                        Ok(v) if v.is_finite() => row.push(Cell::Num(v)),
                        _ => {
                            log::debug!("rejecting row: bad numeric cell '{cell}' in '{name}'");
                            rejected += 1;
                            continue 'records;
                        }
                    }
                }
                _ => row.push(Cell::Text(cell.to_string())),
            }
        }
        rows.push(row);
    }
    if rejected > 0 {
        log::warn!("rejected {rejected} row(s) with unparseable numeric cells");
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!(
            "dataset file '{}' contains no usable data rows",
            path.display()
        )));
    }
    Ok(RawTable {
        dataset_id: schema.dataset_id,
        column_names: required.into_iter().map(|(n, _)| n).collect(),
        rows,
        rejected_rows: rejected,
    })
}

/// Replace categorical feature cells with their integer codes; numeric
/// columns pass through untouched.
pub fn encode_categoricals(table: &RawTable, schema: &DatasetSchema) -> Result<RawTable> {
    let mut out = table.clone();
    for (c, name) in table.column_names.iter().enumerate() {
        let Some(spec) = schema.feature(name) else {
            continue; // target-only column, handled by extract_target
        };
        if let ColumnKind::Categorical(_) = spec.kind {
            for row in &mut out.rows {
                let code = match &row[c] {
                    Cell::Text(v) => schema.encode_level(name, v)?,
                    Cell::Num(v) => {
                        // already encoded; validate range
                        let code = *v as usize;
                        schema.decode_level(name, code)?;
                        code
                    }
                };
                row[c] = Cell::Num(code as f64);
            }
        }
    }
    Ok(out)
}

/// Integer label vector for one task. Text cells match declared classes
/// after trim/case-fold; numeric cells are accepted when they already hold a
/// valid code. Class counts are logged.
pub fn extract_target(table: &RawTable, schema: &DatasetSchema, task_id: &str) -> Result<Vec<usize>> {
    let task = schema.task(task_id)?;
    let col = table.column_index(&task.column).ok_or_else(|| {
        Error::Schema(format!(
            "target column '{}' not present in table",
            task.column
        ))
    })?;
    let mut labels = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let label = match &row[col] {
            Cell::Text(v) => task
                .classes
                .iter()
                .position(|c| normalize_level(c) == normalize_level(v))
                .ok_or_else(|| Error::Target {
                    task: task.task_id.clone(),
                    value: v.clone(),
                })?,
            Cell::Num(v) => {
                let code = *v as usize;
                if *v == code as f64 && code < task.n_classes() {
                    code
                } else {
                    return Err(Error::Target {
                        task: task.task_id.clone(),
                        value: v.to_string(),
                    });
                }
            }
        };
        labels.push(label);
    }
    let mut counts = vec![0usize; task.n_classes()];
    for &l in &labels {
        counts[l] += 1;
    }
    log::info!(
        "task '{}': class counts {:?}",
        task.task_id,
        task.classes.iter().zip(&counts).collect::<Vec<_>>()
    );
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn shipping_csv(extra_col: bool, bad_row: bool) -> String {
        let mut head = "customer_care_calls,customer_rating,cost_of_product,prior_purchases,\
             product_importance,gender,discount_offered,weight_in_grams,warehouse,shipment_mode,reached_on_time"
            .to_string();
        if extra_col {
            head.push_str(",unused");
        }
        let mut s = head + "\n";
        for i in 0..4 {
            let row = format!(
                "{},{},{}.5,2,low,F,{},1000,A,Flight,On-Time{}",
                i + 2,
                (i % 5) + 1,
                100 + i,
                i,
                if extra_col { ",x" } else { "" }
            );
            s.push_str(&row);
            s.push('\n');
        }
        if bad_row {
            s.push_str(&format!(
                "oops,1,100.5,2,low,F,0,1000,A,Flight,On-Time{}\n",
                if extra_col { ",x" } else { "" }
            ));
        }
        s
    }

    #[test]
    fn loads_and_drops_extra_columns() {
        let f = write_csv(&shipping_csv(true, false));
        let schema = DatasetSchema::builtin(DatasetId::Shipping);
        let table = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(table.row_count(), 4);
        assert_eq!(table.column_names.len(), 11); // 8 features + 3 target columns
        assert!(table.column_index("unused").is_none());
    }

    #[test]
    fn rejects_rows_with_bad_numeric_cells() {
        let f = write_csv(&shipping_csv(false, true));
        let schema = DatasetSchema::builtin(DatasetId::Shipping);
        let table = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(table.row_count(), 4);
        assert_eq!(table.rejected_rows, 1);
    }

    #[test]
    fn missing_required_column_is_schema_error() {
        let f = write_csv("customer_care_calls,customer_rating\n1,2\n");
        let schema = DatasetSchema::builtin(DatasetId::Shipping);
        let err = load_dataset(f.path(), &schema).unwrap_err();
        assert!(err.to_string().contains("cost_of_product"), "{err}");
    }

    #[test]
    fn header_matching_is_case_and_separator_insensitive() {
        let csv = shipping_csv(false, false).replace("customer_care_calls", "Customer Care CALLS");
        let f = write_csv(&csv);
        let schema = DatasetSchema::builtin(DatasetId::Shipping);
        assert!(load_dataset(f.path(), &schema).is_ok());
    }

    #[test]
    fn encode_replaces_categoricals_only() {
        let f = write_csv(&shipping_csv(false, false));
        let schema = DatasetSchema::builtin(DatasetId::Shipping);
        let table = load_dataset(f.path(), &schema).unwrap();
        let encoded = encode_categoricals(&table, &schema).unwrap();
        let gi = encoded.column_index("gender").unwrap();
        let pi = encoded.column_index("product_importance").unwrap();
        for row in &encoded.rows {
            assert_eq!(row[gi], Cell::Num(0.0)); // F -> 0
            assert_eq!(row[pi], Cell::Num(0.0)); // low -> 0
        }
        // target columns untouched by encode
        let wi = encoded.column_index("warehouse").unwrap();
        assert_eq!(encoded.rows[0][wi], Cell::Text("A".into()));
    }

    #[test]
    fn encode_rejects_undeclared_level() {
        let csv = shipping_csv(false, false).replace(",low,", ",LOWER,");
        let f = write_csv(&csv);
        let schema = DatasetSchema::builtin(DatasetId::Shipping);
        let table = load_dataset(f.path(), &schema).unwrap();
        let err = encode_categoricals(&table, &schema).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("product_importance") && msg.contains("LOWER"), "{msg}");
    }

    #[test]
    fn extract_target_maps_declared_classes() {
        let f = write_csv(&shipping_csv(false, false));
        let schema = DatasetSchema::builtin(DatasetId::Shipping);
        let table = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(extract_target(&table, &schema, "warehouse").unwrap(), vec![0; 4]);
        assert_eq!(extract_target(&table, &schema, "shipment_mode").unwrap(), vec![0; 4]);
        assert_eq!(extract_target(&table, &schema, "reached_on_time").unwrap(), vec![0; 4]);
    }

    #[test]
    fn singleton_row_maps_to_class_zero() {
        let csv = "type,real_days_of_shipping,planned_days_of_shipment,gain_for_customer_order,\
                   sales_for_consumer,latitude,longitude,discount,discount_rate,total_order,\
                   order_profit_rate,order_state,delivery_status,shipping_mode\n\
                   Debit,3,4,10.0,20.0,1.0,2.0,0.1,0.01,100.0,0.2,Complete,On-time,Standard Class\n";
        let f = write_csv(csv);
        let schema = DatasetSchema::builtin(DatasetId::DataCo);
        let table = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(extract_target(&table, &schema, "shipping_mode").unwrap(), vec![0]);
        assert_eq!(extract_target(&table, &schema, "delivery_status").unwrap(), vec![0]);
    }

    #[test]
    fn unmapped_target_value_is_error() {
        let csv = shipping_csv(false, false).replace(",Flight,", ",Zeppelin,");
        let f = write_csv(&csv);
        let schema = DatasetSchema::builtin(DatasetId::Shipping);
        let table = load_dataset(f.path(), &schema).unwrap();
        let err = extract_target(&table, &schema, "shipment_mode").unwrap_err();
        assert!(err.to_string().contains("Zeppelin"));
    }
}
