//! Output files. Every artifact starts with a `#` provenance line carrying
//! the config hash and seed; the readers in `mcgan-core` skip such lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use mcgan_core::{Error, Result};

use crate::config::RunConfig;

pub struct ArtifactWriter {
    dir: PathBuf,
    command: &'static str,
    header: String,
    written: Vec<(String, String)>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

impl ArtifactWriter {
    pub fn new(dir: &Path, command: &'static str, cfg: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            command,
            header: format!("# mcgan {command} config_hash={} seed={}\n", cfg.hash(), cfg.seed),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `body` under `name` (relative to the output directory),
    /// creating parent directories as needed.
    pub fn write(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        let text = format!("{}{body}", self.header);
        std::fs::write(&path, &text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        self.written
            .push((name.to_string(), hex(&Sha256::digest(text.as_bytes()))));
        Ok(path)
    }

    /// Writes `<command>_manifest.txt`: the resolved configuration followed
    /// by the SHA-256 of every artifact written so far.
    pub fn finish(mut self, cfg: &RunConfig) -> Result<PathBuf> {
        let mut body = String::from("[config]\n");
        body.push_str(&cfg.canonical());
        body.push_str("[artifacts]\n");
        for (name, digest) in &self.written {
            writeln!(body, "{name} = {digest}").unwrap();
        }
        let name = format!("{}_manifest.txt", self.command);
        let path = self.dir.join(&name);
        let text = format!("{}{body}", self.header);
        std::fs::write(&path, text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        self.written.clear();
        Ok(path)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// `34.0000`-style label used in per-code file names.
pub fn code_label(physical: f64) -> String {
    format!("{physical:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifacts_carry_provenance_and_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let mut w = ArtifactWriter::new(dir.path(), "toy-gen", &cfg).unwrap();
        let p = w.write("sub/a.csv", "x\n1\n").unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(
            text,
            format!("# mcgan toy-gen config_hash={} seed=0\nx\n1\n", cfg.hash())
        );
        let m = std::fs::read_to_string(w.finish(&cfg).unwrap()).unwrap();
        assert!(m.contains("sub/a.csv = "));
        assert!(m.contains("experiment = toy"));
    }

    #[test]
    fn code_labels_are_fixed_width() {
        assert_eq!(code_label(34.0), "34.0000");
        assert_eq!(code_label(-1.25663706), "-1.2566");
    }
}
