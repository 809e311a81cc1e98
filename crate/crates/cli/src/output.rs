use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::CliError;

/// Shortest decimal that parses back to the same f64; negative zero is
/// written as 0.
pub fn fmt_f64(v: f64) -> String {
    format!("{}", v + 0.0)
}

pub fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn opt_bool(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(self.root.join(name))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self, summary: &Summary) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&summary.to_value()).expect("summary serializes");
        fs::write(self.root.join("summary.json"), text + "\n")?;
        Ok(())
    }
}

/// The JSON summary every command writes: command name, config echo,
/// named verdicts and the largest violation of each checked quantity.
pub struct Summary {
    command: &'static str,
    config: Map<String, Value>,
    verdicts: Map<String, Value>,
    max_violations: Map<String, Value>,
    extra: Map<String, Value>,
}

impl Summary {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            config: Map::new(),
            verdicts: Map::new(),
            max_violations: Map::new(),
            extra: Map::new(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.config.insert(key.into(), value.into());
        self
    }

    pub fn verdict(&mut self, key: &str, pass: bool) -> &mut Self {
        self.verdicts.insert(key.into(), pass.into());
        self
    }

    pub fn violation(&mut self, key: &str, value: f64) -> &mut Self {
        self.max_violations.insert(key.into(), value.into());
        self
    }

    pub fn extra(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.extra.insert(key.into(), value.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdicts.values().all(|v| v.as_bool() == Some(true))
    }

    fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("command".into(), self.command.into());
        m.insert("config".into(), Value::Object(self.config.clone()));
        m.insert("verdicts".into(), Value::Object(self.verdicts.clone()));
        m.insert("max_violations".into(), Value::Object(self.max_violations.clone()));
        for (k, v) in &self.extra {
            m.insert(k.clone(), v.clone());
        }
        m.insert("pass".into(), self.passed().into());
        Value::Object(m)
    }
}
