//! Input parsing and atomic output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use cvae_core::graph::{parse_edge_list, parse_graph, Edge, Graph};
use cvae_core::{datagen, Matrix};

use crate::failure::{io, validation, CliResult, Context};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io(anyhow!("cannot read {}: {e}", path.display())))
}

pub fn read_graph(path: &Path) -> CliResult<Graph> {
    parse_graph(&read_text(path)?).context(format!("in {}", path.display()))
}

pub fn read_edges(path: &Path) -> CliResult<Vec<Edge>> {
    parse_edge_list(&read_text(path)?).context(format!("in {}", path.display()))
}

pub fn read_matrix(path: &Path) -> CliResult<Matrix> {
    datagen::parse_matrix_tsv(&read_text(path)?).context(format!("in {}", path.display()))
}

pub fn read_labels(path: &Path) -> CliResult<Vec<u8>> {
    datagen::parse_labels(&read_text(path)?).context(format!("in {}", path.display()))
}

/// One dual index per line.
pub fn read_pairing(path: &Path) -> CliResult<Vec<usize>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.trim().parse().map_err(|_| {
                validation(anyhow!("{}: line {}: expected an index, got {l:?}", path.display(), k + 1))
            })
        })
        .collect()
}

/// Files to be written into one output directory. Nothing touches the disk
/// until [`Outputs::commit`], and each file is renamed into place whole.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn commit(self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        fs::create_dir_all(dir)
            .map_err(|e| io(anyhow!("cannot create {}: {e}", dir.display())))?;
        let mut written = Vec::new();
        for (name, contents) in self.files {
            let target = dir.join(&name);
            let mut tmp = tempfile::NamedTempFile::new_in(dir)
                .map_err(|e| io(anyhow!("cannot write in {}: {e}", dir.display())))?;
            tmp.write_all(&contents)
                .and_then(|_| tmp.as_file().sync_all())
                .map_err(|e| io(anyhow!("cannot write {}: {e}", target.display())))?;
            tmp.persist(&target)
                .map_err(|e| io(anyhow!("cannot write {}: {}", target.display(), e.error)))?;
            written.push(target);
        }
        Ok(written)
    }
}
