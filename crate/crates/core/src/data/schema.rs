//! Dataset schemas: feature columns, categorical level maps, and task targets.
//!
//! The canonical definitions live in `config/schemas.toml` and are embedded
//! at build time; `DatasetSchema::from_toml_str` parses the same format from
//! any other source.

use serde::Deserialize;

use crate::error::{Error, Result};

/// The three supported table layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetId {
    DataCo,
    Shipping,
    SmartLogistics,
}

impl DatasetId {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetId::DataCo => "dataco",
            DatasetId::Shipping => "shipping",
            DatasetId::SmartLogistics => "smart-logistics",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match normalize_name(s).as_str() {
            "dataco" => Ok(DatasetId::DataCo),
            "shipping" => Ok(DatasetId::Shipping),
            "smartlogistics" => Ok(DatasetId::SmartLogistics),
            other => Err(Error::Config(format!("unknown dataset id '{other}'"))),
        }
    }
}

impl std::fmt::Display for DatasetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Numeral,
    Digit,
    Categorical(Vec<String>),
}

impl ColumnKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, ColumnKind::Categorical(_))
    }
}

#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub task_id: String,
    pub column: String,
    pub classes: Vec<String>,
}

impl TaskSpec {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSchema {
    pub dataset_id: DatasetId,
    pub features: Vec<ColumnSpec>,
    pub tasks: Vec<TaskSpec>,
}

/// Lower-case and strip separators, for header matching.
pub fn normalize_name(s: &str) -> String {
    s.trim()
        .chars()
        .filter(|c| !matches!(c, ' ' | '_' | '-'))
        .collect::<String>()
        .to_lowercase()
}

/// Trim and case-fold, for categorical level matching.
pub fn normalize_level(s: &str) -> String {
    s.trim().to_lowercase()
}

const EMBEDDED_SCHEMAS: &str = include_str!("../../../../config/schemas.toml");

#[derive(Deserialize)]
struct TomlRoot {
    dataset: Vec<TomlDataset>,
}

#[derive(Deserialize)]
struct TomlDataset {
    id: String,
    #[serde(default)]
    feature: Vec<TomlFeature>,
    #[serde(default)]
    task: Vec<TomlTask>,
}

#[derive(Deserialize)]
struct TomlFeature {
    name: String,
    kind: String,
    #[serde(default)]
    levels: Vec<String>,
}

#[derive(Deserialize)]
struct TomlTask {
    id: String,
    column: String,
    classes: Vec<String>,
}

impl DatasetSchema {
    /// Schema for one of the built-in dataset ids.
    pub fn builtin(id: DatasetId) -> DatasetSchema {
        Self::from_toml_str(EMBEDDED_SCHEMAS, id)
            .expect("embedded schema definitions must parse")
    }

    /// Parse a schema for `id` out of a schemas config document.
    pub fn from_toml_str(text: &str, id: DatasetId) -> Result<DatasetSchema> {
        let root: TomlRoot = toml::from_str(text)
            .map_err(|e| Error::Schema(format!("schema config parse error: {e}")))?;
        let raw = root
            .dataset
            .into_iter()
            .find(|d| DatasetId::parse(&d.id).map(|p| p == id).unwrap_or(false))
            .ok_or_else(|| Error::Schema(format!("no schema for dataset '{}'", id.as_str())))?;
        let features = raw
            .feature
            .into_iter()
            .map(|f| {
                let kind = match f.kind.as_str() {
                    "numeral" => ColumnKind::Numeral,
                    "digit" => ColumnKind::Digit,
                    "categorical" => {
                        if f.levels.is_empty() {
                            return Err(Error::Schema(format!(
                                "categorical column '{}' declares no levels",
                                f.name
                            )));
                        }
                        ColumnKind::Categorical(f.levels)
                    }
                    other => {
                        return Err(Error::Schema(format!(
                            "unknown column kind '{other}' for '{}'",
                            f.name
                        )))
                    }
                };
                Ok(ColumnSpec { name: f.name, kind })
            })
            .collect::<Result<Vec<_>>>()?;
        let tasks = raw
            .task
            .into_iter()
            .map(|t| TaskSpec {
                task_id: t.id,
                column: t.column,
                classes: t.classes,
            })
            .collect::<Vec<_>>();
        let schema = DatasetSchema {
            dataset_id: id,
            features,
            tasks,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        for task in &self.tasks {
            if task.classes.len() < 2 {
                return Err(Error::Schema(format!(
                    "task '{}' needs at least two classes",
                    task.task_id
                )));
            }
            // level maps must be injective after case folding
            let mut seen = std::collections::BTreeSet::new();
            for c in &task.classes {
                if !seen.insert(normalize_level(c)) {
                    return Err(Error::Schema(format!(
                        "task '{}' has duplicate class '{c}'",
                        task.task_id
                    )));
                }
            }
        }
        for col in &self.features {
            if let ColumnKind::Categorical(levels) = &col.kind {
                let mut seen = std::collections::BTreeSet::new();
                for l in levels {
                    if !seen.insert(normalize_level(l)) {
                        return Err(Error::Schema(format!(
                            "column '{}' has duplicate level '{l}'",
                            col.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| normalize_name(&t.task_id) == normalize_name(task_id))
            .ok_or_else(|| {
                Error::Config(format!(
                    "task '{task_id}' is not declared for dataset '{}'",
                    self.dataset_id
                ))
            })
    }

    pub fn feature(&self, name: &str) -> Option<&ColumnSpec> {
        self.features
            .iter()
            .find(|c| normalize_name(&c.name) == normalize_name(name))
    }

    /// Columns the loader must find in the CSV: every feature plus any task
    /// column that is not already a feature.
    pub fn required_columns(&self) -> Vec<(String, Option<ColumnKind>)> {
        let mut cols: Vec<(String, Option<ColumnKind>)> = self
            .features
            .iter()
            .map(|c| (c.name.clone(), Some(c.kind.clone())))
            .collect();
        for task in &self.tasks {
            if self.feature(&task.column).is_none()
                && !cols
                    .iter()
                    .any(|(n, _)| normalize_name(n) == normalize_name(&task.column))
            {
                cols.push((task.column.clone(), None));
            }
        }
        cols
    }

    /// Encode a categorical level of `column` to its integer code.
    pub fn encode_level(&self, column: &str, value: &str) -> Result<usize> {
        let spec = self.feature(column).ok_or_else(|| {
            Error::Schema(format!("column '{column}' is not a declared feature"))
        })?;
        match &spec.kind {
            ColumnKind::Categorical(levels) => levels
                .iter()
                .position(|l| normalize_level(l) == normalize_level(value))
                .ok_or_else(|| Error::Encoding {
                    column: column.to_string(),
                    value: value.to_string(),
                }),
            _ => Err(Error::Schema(format!("column '{column}' is not categorical"))),
        }
    }

    /// Inverse of [`DatasetSchema::encode_level`].
    pub fn decode_level(&self, column: &str, code: usize) -> Result<&str> {
        let spec = self.feature(column).ok_or_else(|| {
            Error::Schema(format!("column '{column}' is not a declared feature"))
        })?;
        match &spec.kind {
            ColumnKind::Categorical(levels) => levels
                .get(code)
                .map(|s| s.as_str())
                .ok_or_else(|| Error::Encoding {
                    column: column.to_string(),
                    value: format!("#{code}"),
                }),
            _ => Err(Error::Schema(format!("column '{column}' is not categorical"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_schemas_match_declared_shapes() {
        let dataco = DatasetSchema::builtin(DatasetId::DataCo);
        assert_eq!(dataco.features.len(), 12);
        assert_eq!(dataco.task("delivery_status").unwrap().n_classes(), 2);
        assert_eq!(dataco.task("shipping_mode").unwrap().n_classes(), 4);

        let shipping = DatasetSchema::builtin(DatasetId::Shipping);
        assert_eq!(shipping.features.len(), 8);
        assert_eq!(shipping.task("warehouse").unwrap().n_classes(), 5);
        assert_eq!(shipping.task("shipment_mode").unwrap().n_classes(), 3);
        assert_eq!(shipping.task("reached_on_time").unwrap().n_classes(), 2);

        let smart = DatasetSchema::builtin(DatasetId::SmartLogistics);
        assert_eq!(smart.features.len(), 10);
        assert_eq!(smart.task("truck_id").unwrap().n_classes(), 10);
        assert_eq!(smart.task("shipment_status").unwrap().n_classes(), 3);
        assert_eq!(smart.task("traffic_status").unwrap().n_classes(), 3);
        assert_eq!(smart.task("logistics_delay").unwrap().n_classes(), 2);
    }

    #[test]
    fn encode_decode_round_trip_for_every_level() {
        for id in [DatasetId::DataCo, DatasetId::Shipping, DatasetId::SmartLogistics] {
            let schema = DatasetSchema::builtin(id);
            for col in &schema.features {
                if let ColumnKind::Categorical(levels) = &col.kind {
                    for (i, level) in levels.iter().enumerate() {
                        let code = schema.encode_level(&col.name, level).unwrap();
                        assert_eq!(code, i);
                        assert_eq!(schema.decode_level(&col.name, code).unwrap(), level);
                    }
                }
            }
        }
    }

    #[test]
    fn dataco_type_codes() {
        let schema = DatasetSchema::builtin(DatasetId::DataCo);
        assert_eq!(schema.encode_level("type", "Debit").unwrap(), 0);
        assert_eq!(schema.encode_level("type", "Transfer").unwrap(), 1);
        assert_eq!(schema.encode_level("type", "Payment").unwrap(), 2);
        assert_eq!(schema.encode_level("type", "Cash").unwrap(), 3);
    }

    #[test]
    fn shipping_gender_codes() {
        let schema = DatasetSchema::builtin(DatasetId::Shipping);
        assert_eq!(schema.encode_level("gender", "F").unwrap(), 0);
        assert_eq!(schema.encode_level("gender", "M").unwrap(), 1);
    }

    #[test]
    fn undeclared_level_is_an_error() {
        let schema = DatasetSchema::builtin(DatasetId::DataCo);
        let err = schema.encode_level("type", "").unwrap_err();
        assert!(err.to_string().contains("type"));
    }

    #[test]
    fn dataset_id_parse_is_separator_insensitive() {
        assert_eq!(DatasetId::parse("Smart_Logistics").unwrap(), DatasetId::SmartLogistics);
        assert_eq!(DatasetId::parse("smart-logistics").unwrap(), DatasetId::SmartLogistics);
        assert!(DatasetId::parse("nope").is_err());
    }
}
