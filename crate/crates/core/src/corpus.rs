//! A set of tables plus the instances that reference them, with on-disk
//! layout `<dir>/tables/<table_id>.csv` and `<dir>/<name>.jsonl`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::LoadError;
use crate::table::{load_table_dir, read_instances, write_instances, QaInstance, Table, TableFormat};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub tables: BTreeMap<String, Table>,
    pub instances: Vec<QaInstance>,
}

impl Corpus {
    pub fn new(tables: impl IntoIterator<Item = Table>, instances: Vec<QaInstance>) -> Corpus {
        Corpus {
            tables: tables.into_iter().map(|t| (t.id().to_string(), t)).collect(),
            instances,
        }
    }

    pub fn table(&self, id: &str) -> Option<&Table> {
        self.tables.get(id)
    }

    /// Table of an instance. Panics on a dangling reference; call
    /// [`Corpus::dangling`] first on untrusted corpora.
    pub fn table_of(&self, inst: &QaInstance) -> &Table {
        self.tables
            .get(&inst.table_id)
            .unwrap_or_else(|| panic!("instance {} references unknown table {}", inst.id, inst.table_id))
    }

    /// Table ids referenced by instances but absent from the corpus.
    pub fn dangling(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .instances
            .iter()
            .filter(|i| !self.tables.contains_key(&i.table_id))
            .map(|i| i.table_id.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn with_instances(&self, instances: Vec<QaInstance>) -> Corpus {
        Corpus {
            tables: self.tables.clone(),
            instances,
        }
    }

    pub fn load(tables_dir: &Path, instances_file: &Path) -> Result<Corpus, LoadError> {
        Ok(Corpus::new(load_table_dir(tables_dir)?, read_instances(instances_file)?))
    }

    pub fn save_tables(&self, tables_dir: &Path) -> Result<(), LoadError> {
        fs::create_dir_all(tables_dir).map_err(|source| LoadError::Io {
            path: tables_dir.to_path_buf(),
            source,
        })?;
        for (id, t) in &self.tables {
            t.write_delimited(&tables_dir.join(format!("{id}.csv")), TableFormat::Csv)?;
        }
        Ok(())
    }

    pub fn save_instances(&self, path: &Path) -> Result<(), LoadError> {
        write_instances(path, &self.instances)
    }

    /// SHA-256 over the tables' headers and cell text and the instance records.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (id, t) in &self.tables {
            h.update(id.as_bytes());
            h.update([0]);
            for header in t.headers() {
                h.update(header.as_bytes());
                h.update([31]);
            }
            for row in t.rows() {
                for c in row {
                    h.update(c.text().as_bytes());
                    h.update([31]);
                }
                h.update([30]);
            }
        }
        for inst in &self.instances {
            h.update(serde_json::to_string(inst).expect("instance serializes").as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
