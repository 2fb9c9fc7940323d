use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use faceaudit::corpus::{EMBEDDINGS_FILE, IMAGES_FILE, MANIFEST_FILE, MASKS_FILE};
use faceaudit::scorekit::D_PRIME_FORMULA;
use faceaudit::{sha256_hex, Error};
use serde::{Serialize, Serializer};
use serde_json::{json, Value};

pub const RUN_FORMAT: &str = "faceaudit-run/1";
pub const RUN_FILE: &str = "run.json";

/// Failure with its process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Infeasible(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Infeasible(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_infeasible() {
            Failure::Infeasible(msg)
        } else if e.is_data_error() || matches!(e, Error::Io { .. } | Error::DimensionMismatch { .. }) {
            Failure::Data(msg)
        } else {
            Failure::Usage(msg)
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn display<T: fmt::Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Prints a line to stdout, ignoring a closed pipe.
pub fn say(s: impl fmt::Display) {
    use std::io::Write as _;
    let _ = writeln!(std::io::stdout(), "{s}");
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("i/o error on {}: {e}", path.display()))
}

/// Output directory built under a temporary name and renamed into place by
/// [`OutDir::finish`]. Dropped without finishing, the partial tree is removed.
pub struct OutDir {
    target: PathBuf,
    staging: PathBuf,
    force: bool,
    done: bool,
}

impl OutDir {
    pub fn create(target: &Path, force: bool) -> CliResult<Self> {
        if target.exists() && !force {
            return Err(Failure::Usage(format!(
                "output directory {} already exists (use --force to replace it)",
                target.display()
            )));
        }
        let name = target
            .file_name()
            .ok_or_else(|| Failure::Usage(format!("bad output path {}", target.display())))?;
        let mut staging_name = name.to_os_string();
        staging_name.push(format!(".partial-{}", std::process::id()));
        let staging = target.with_file_name(staging_name);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| io_failure(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| io_failure(&staging, e))?;
        Ok(OutDir {
            target: target.to_path_buf(),
            staging,
            force,
            done: false,
        })
    }

    /// Staging directory, for writers that take a directory.
    pub fn dir(&self) -> &Path {
        &self.staging
    }

    /// Staging path of `name`, with parent directories created.
    pub fn path(&self, name: &str) -> CliResult<PathBuf> {
        let p = self.staging.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
        }
        Ok(p)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let p = self.path(name)?;
        fs::write(&p, contents).map_err(|e| io_failure(&p, e))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let v = serde_json::to_value(value).map_err(|e| Failure::Usage(e.to_string()))?;
        let mut text = serde_json::to_string_pretty(&v).expect("json value serializes");
        text.push('\n');
        self.write(name, text)
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        if self.target.exists() {
            if !self.force {
                return Err(Failure::Usage(format!(
                    "output directory {} appeared during the run",
                    self.target.display()
                )));
            }
            fs::remove_dir_all(&self.target).map_err(|e| io_failure(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| io_failure(&self.target, e))?;
        self.done = true;
        Ok(self.target.clone())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// SHA-256 of each corpus file present in a dataset directory.
pub fn dataset_hashes(root: &Path) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for name in [MANIFEST_FILE, EMBEDDINGS_FILE, MASKS_FILE, IMAGES_FILE] {
        let p = root.join(name);
        if p.exists() {
            out.insert(name.to_string(), file_hash(&p)?);
        }
    }
    Ok(out)
}

pub fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Provenance record written as `run.json`.
pub struct RunRecord {
    command: String,
    parameters: Value,
    inputs: BTreeMap<String, Value>,
    seeds: BTreeMap<String, u64>,
}

impl RunRecord {
    pub fn new(command: &str, parameters: &impl Serialize) -> Self {
        RunRecord {
            command: command.to_string(),
            parameters: serde_json::to_value(parameters).expect("parameters serialize"),
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
        }
    }

    pub fn dataset(mut self, key: &str, root: &Path) -> CliResult<Self> {
        let files = dataset_hashes(root)?;
        self.inputs.insert(
            key.to_string(),
            json!({ "path": root.display().to_string(), "sha256": files }),
        );
        Ok(self)
    }

    pub fn file(mut self, key: &str, path: &Path) -> CliResult<Self> {
        let h = file_hash(path)?;
        self.inputs.insert(
            key.to_string(),
            json!({ "path": path.display().to_string(), "sha256": h }),
        );
        Ok(self)
    }

    pub fn seed(mut self, key: &str, seed: u64) -> Self {
        self.seeds.insert(key.to_string(), seed);
        self
    }

    pub fn to_value(&self) -> Value {
        json!({
            "format_version": RUN_FORMAT,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "seeds": self.seeds,
            "d_prime_formula": D_PRIME_FORMULA,
        })
    }

    pub fn write(&self, out: &OutDir) -> CliResult<()> {
        out.write_json(RUN_FILE, &self.to_value())
    }
}
