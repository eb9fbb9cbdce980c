//! CSV artifacts. Every file starts with `# config_hash=<sha256>` and a
//! header row; floats are written with `{:e}` so output is exact and stable.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct CsvFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvFile {
    pub fn create(dir: &Path, name: &str, config_hash: &str, header: &[&str]) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "# config_hash={config_hash}")?;
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { path, out })
    }

    pub fn row(&mut self, fields: &[String]) -> io::Result<()> {
        writeln!(self.out, "{}", fields.join(","))
    }

    pub fn raw(&mut self) -> &mut BufWriter<File> {
        &mut self.out
    }

    pub fn finish(mut self) -> io::Result<PathBuf> {
        self.out.flush()?;
        Ok(self.path)
    }
}

/// Shortest representation that parses back to the same f64; `-0` prints
/// as `0`.
pub fn num(x: f64) -> String {
    format!("{:e}", x + 0.0)
}
