//! CSV tables, structured-text summaries and VTK files in the output directory.
//!
//! Floats are written in shortest round-trip form, so identical runs produce
//! byte-identical files.

use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};

use pointwise_ocp::geometry::Mesh;
use pointwise_ocp::io::{format_vtk, VtkFields};

use crate::CliError;

/// Shortest round-trip rendering of a float.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|source| CliError::Write { path: root.to_path_buf(), source })?;
        Ok(OutputDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Write { path: path.clone(), source })?;
        self.written.push(path);
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, table: &Csv) -> Result<(), CliError> {
        self.write(name, &table.text)
    }

    pub fn write_vtk(&mut self, name: &str, mesh: &Mesh, fields: &VtkFields, title: &str) -> Result<(), CliError> {
        let text = format_vtk(mesh, fields, title).map_err(|e| CliError::core("format_vtk", e))?;
        self.write(name, &text)
    }
}

pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv { text: format!("{}\n", header.join(",")), columns: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns);
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// `key: value` lines grouped under `[section]` headers.
#[derive(Default)]
pub struct Summary {
    text: String,
}

impl Summary {
    pub fn section(&mut self, name: &str) -> &mut Self {
        if !self.text.is_empty() {
            self.text.push('\n');
        }
        let _ = writeln!(self.text, "[{name}]");
        self
    }

    pub fn entry(&mut self, key: &str, value: impl Display) -> &mut Self {
        let _ = writeln!(self.text, "{key}: {value}");
        self
    }

    pub fn float(&mut self, key: &str, value: f64) -> &mut Self {
        self.entry(key, num(value))
    }

    pub fn floats(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let list: Vec<String> = values.iter().map(|v| num(*v)).collect();
        self.entry(key, format!("[{}]", list.join(", ")))
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}
