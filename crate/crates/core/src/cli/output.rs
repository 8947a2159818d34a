use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance block written at the top of every output.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

impl Header {
    pub fn new(command: &'static str, config: &[u8], seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: hex::encode(Sha256::digest(config)),
            seed,
        }
    }
}

/// Shortest round-trip decimal form; non-finite values as inf/-inf/nan.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn json_document<T: Serialize + ?Sized>(header: &Header, body: &T) -> String {
    #[derive(Serialize)]
    struct Doc<'a, T: ?Sized> {
        header: &'a Header,
        result: &'a T,
    }
    serde_json::to_string_pretty(&Doc { header, result: body }).expect("serializable output")
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, header: &Header, body: &T) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(json_document(header, body).as_bytes())?;
    f.write_all(b"\n")
}

/// CSV preceded by `#`-prefixed header lines.
pub fn write_csv(path: &Path, header: &Header, columns: &[String], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# tool={} version={}", header.tool, header.version)?;
    writeln!(f, "# command={} config_sha256={} seed={}", header.command, header.config_sha256, header.seed)?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}
