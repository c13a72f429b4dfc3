//! Artifact emission. CSV tables start with `#` header lines carrying the
//! scenario hash and tool version; JSON documents carry both as fields. A
//! `schema.json` describing every CSV column is written alongside.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stamp {
    pub scenario_hash: String,
    pub tool_version: String,
}

impl Stamp {
    pub fn new(scenario_hash: &str) -> Self {
        Stamp { scenario_hash: scenario_hash.into(), tool_version: crate::TOOL_VERSION.into() }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool_version: &'a str,
    scenario_hash: &'a str,
    kind: &'a str,
    data: &'a T,
}

/// Description of a CSV column by name; indexed columns (`x0`, `eta1`, ..)
/// share the description of their stem.
pub fn describe_column(name: &str) -> String {
    let stem = name.trim_end_matches(|c: char| c.is_ascii_digit());
    let idx = &name[stem.len()..];
    let base = match stem {
        "row" => "row index in entry order",
        "patch" => "boundary patch of the entry point",
        "x" => "entry boundary coordinate",
        "xi" => "entry tangential covector component",
        "exit_patch" => "boundary patch of the exit point",
        "y" => "exit boundary coordinate",
        "eta" => "exit tangential covector component",
        "s_exit" => "affine parameter at the exit",
        "xi_n" => "normal covector component at the entry",
        "eta_n" => "normal covector component at the exit",
        "status" => "row status",
        "detail" => "diagnostic message",
        "l0_re" | "l0_im" => "light-ray transform of the potential q (real/imaginary part)",
        "l1_re" | "l1_im" => "light-ray transform of the one-form A (real/imaginary part)",
        "value_re" | "value_im" => "recovered per-ray value (real/imaginary part)",
        "truth_re" | "truth_im" => "reference per-ray value (real/imaginary part)",
        "branch" => "logarithm branch index",
        "magnitude_defect" => "|log| of the amplitude-ratio modulus",
        "lambda0" => "order-zero probe coefficient",
        "null_defect" => "lightlike defect of the recovered exit covector",
        "t" => "time coordinate",
        "reachable" => "1 if the point is in the reachable region, else 0",
        "s" => "parameter bound of the light line",
        "z" => "base point of the light line",
        "theta" => "unit direction of the light line",
        "lambda" => "frequency",
        "rate" => "decay rate of the synthesized normal component in the frequency",
        "residual" => "fit residual of the normal component",
        "error" => "absolute error against the reference",
        _ => "",
    };
    match (base.is_empty(), idx.is_empty()) {
        (true, _) => String::new(),
        (false, true) => base.to_string(),
        (false, false) => format!("{base} {idx}"),
    }
}

/// Writes stamped artifacts into one directory and records a schema.
pub struct ArtifactWriter {
    dir: PathBuf,
    stamp: Stamp,
    schema: BTreeMap<String, Vec<(String, String)>>,
    pub written: Vec<String>,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

impl ArtifactWriter {
    pub fn new(dir: &Path, stamp: Stamp) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), stamp, schema: BTreeMap::new(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn csv_bytes(&self, header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
        let mut out = format!("# scenario_hash={}\n# tool_version={}\n", self.stamp.scenario_hash, self.stamp.tool_version).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
            for r in rows {
                w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
            }
            w.flush().map_err(|e| Error::Io(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn csv(&mut self, file: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let bytes = self.csv_bytes(header, rows)?;
        let path = self.dir.join(file);
        std::fs::write(&path, bytes).map_err(io(&path))?;
        self.schema.insert(file.into(), header.iter().map(|h| (h.clone(), describe_column(h))).collect());
        self.written.push(file.into());
        Ok(())
    }

    pub fn json_bytes<T: Serialize>(&self, kind: &str, data: &T) -> Result<Vec<u8>> {
        let env = Envelope { tool_version: &self.stamp.tool_version, scenario_hash: &self.stamp.scenario_hash, kind, data };
        let mut s = serde_json::to_string_pretty(&env).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        Ok(s.into_bytes())
    }

    pub fn json<T: Serialize>(&mut self, file: &str, kind: &str, data: &T) -> Result<()> {
        let bytes = self.json_bytes(kind, data)?;
        let path = self.dir.join(file);
        std::fs::write(&path, bytes).map_err(io(&path))?;
        self.written.push(file.into());
        Ok(())
    }

    /// Writes `schema.json` for the CSV files written so far.
    pub fn finish(mut self) -> Result<Vec<String>> {
        #[derive(Serialize)]
        struct Col {
            name: String,
            description: String,
        }
        let schema: BTreeMap<&String, Vec<Col>> = self
            .schema
            .iter()
            .map(|(f, cols)| (f, cols.iter().map(|(n, d)| Col { name: n.clone(), description: d.clone() }).collect()))
            .collect();
        let bytes = self.json_bytes("schema", &schema)?;
        let path = self.dir.join("schema.json");
        std::fs::write(&path, bytes).map_err(io(&path))?;
        self.written.push("schema.json".into());
        Ok(self.written)
    }
}
