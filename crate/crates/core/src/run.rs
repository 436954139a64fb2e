//! Run artifacts: checkpoints, manifests, u8 export and result tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::learner::{Diagnostics, PreprocessStats};
use crate::net::{NetParams, NetSpec};
use crate::tensor::{read_stv, write_stv, Dims, StvDtype, VideoTensor};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const CHECKPOINT_FORMAT: &str = "stgconvnet-checkpoint 1";

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Rounds to integers and clamps into `[0, 255]`; returns the clamped count.
pub fn to_u8_range(v: &VideoTensor) -> (VideoTensor, usize) {
    let mut clamped = 0;
    let out = v.map(|x| x.round().clamp(0.0, 255.0));
    for (a, b) in v.data().iter().zip(out.data()) {
        if a.round() != *b {
            clamped += 1;
        }
    }
    (out, clamped)
}

/// Writes `name.stv` in model scale (f32) and `name_u8.stv` after inverse
/// preprocessing. Returns both paths.
pub fn export_video(v: &VideoTensor, stats: &PreprocessStats, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    let raw = dir.join(format!("{name}.stv"));
    write_stv(v, &raw, StvDtype::F32)?;
    let (u8v, clamped) = to_u8_range(&stats.invert(v)?);
    if clamped > 0 {
        log::info!("{name}: clamped {clamped} of {} values into [0, 255]", v.len());
    }
    let bytes = dir.join(format!("{name}_u8.stv"));
    write_stv(&u8v, &bytes, StvDtype::U8)?;
    Ok(vec![raw, bytes])
}

/// A trained model with everything needed to sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub spec: NetSpec,
    pub params: NetParams,
    pub dims: Dims,
    pub stats: PreprocessStats,
    pub iteration: usize,
    pub epsilon: f64,
    pub active_layers: usize,
}

impl Checkpoint {
    /// Writes `params.stp`, `net.txt`, `config.txt`, `checkpoint.txt` and the
    /// given chains as `chain_<m>.stv`.
    pub fn write(&self, dir: &Path, chains: &[VideoTensor]) -> Result<Vec<PathBuf>> {
        create_dir(dir)?;
        let mut paths = Vec::new();
        let p = dir.join("params.stp");
        write_atomic(&p, &self.params.to_bytes())?;
        paths.push(p);
        let p = dir.join("net.txt");
        write_atomic(&p, self.spec.to_string().as_bytes())?;
        paths.push(p);
        let p = dir.join("config.txt");
        write_atomic(&p, self.config.to_text().as_bytes())?;
        paths.push(p);
        for (m, c) in chains.iter().enumerate() {
            let p = dir.join(format!("chain_{m}.stv"));
            write_stv(c, &p, StvDtype::F32)?;
            paths.push(p);
        }
        let mut s = String::new();
        let _ = writeln!(s, "format={CHECKPOINT_FORMAT}");
        let _ = writeln!(s, "version={VERSION}");
        let _ = writeln!(s, "iteration={}", self.iteration);
        let _ = writeln!(s, "active_layers={}", self.active_layers);
        let _ = writeln!(s, "dims={}", self.dims);
        let _ = writeln!(s, "epsilon={:?}", self.epsilon);
        let _ = writeln!(s, "preprocessing={}", self.stats.mode);
        let means: Vec<String> = self.stats.channel_means.iter().map(|m| format!("{m:?}")).collect();
        let _ = writeln!(s, "channel_means={}", means.join(","));
        let _ = writeln!(s, "scale={:?}", self.stats.scale);
        // written last so a complete checkpoint.txt implies complete files
        let p = dir.join("checkpoint.txt");
        write_atomic(&p, s.as_bytes())?;
        paths.push(p);
        Ok(paths)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("checkpoint.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(0, format!("{}: malformed line {line:?}", path.display())))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::format(0, format!("{}: missing {k}", path.display())))
        };
        let bad = |k: &str| Error::format(0, format!("{}: bad {k}", path.display()));
        let format = get("format")?;
        if format != CHECKPOINT_FORMAT {
            return Err(Error::format(0, format!("unsupported checkpoint format {format:?}")));
        }
        let version = get("version")?;
        if version != VERSION {
            return Err(Error::format(0, format!("checkpoint written by version {version}, this is {VERSION}")));
        }
        let dims: Vec<usize> = get("dims")?
            .split('x')
            .map(|v| v.parse().map_err(|_| bad("dims")))
            .collect::<Result<_>>()?;
        let [channels, height, width, frames] = dims[..] else {
            return Err(bad("dims"));
        };
        let dims = Dims::new(channels, height, width, frames);
        let stats = PreprocessStats {
            mode: get("preprocessing")?.parse().map_err(|_| bad("preprocessing"))?,
            channel_means: get("channel_means")?
                .split(',')
                .map(|v| v.parse().map_err(|_| bad("channel_means")))
                .collect::<Result<_>>()?,
            scale: get("scale")?.parse().map_err(|_| bad("scale"))?,
        };
        let net_path = dir.join("net.txt");
        let spec = NetSpec::parse(&fs::read_to_string(&net_path).map_err(|e| Error::io(&net_path, e))?)?;
        let config = RunConfig::read(dir.join("config.txt"))?;
        let params = NetParams::read(dir.join("params.stp"))?;
        spec.geometry(dims)?;
        Ok(Self {
            config,
            spec,
            params,
            dims,
            stats,
            iteration: get("iteration")?.parse().map_err(|_| bad("iteration"))?,
            epsilon: get("epsilon")?.parse().map_err(|_| bad("epsilon"))?,
            active_layers: get("active_layers")?.parse().map_err(|_| bad("active_layers"))?,
        })
    }

    /// Chains saved alongside the checkpoint.
    pub fn read_chains(dir: &Path) -> Result<Vec<VideoTensor>> {
        let mut out = Vec::new();
        loop {
            let p = dir.join(format!("chain_{}.stv", out.len()));
            if !p.exists() {
                return Ok(out);
            }
            out.push(read_stv(&p)?);
        }
    }
}

/// Record of one command invocation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: String,
    /// `(path, sha256)` of every input file.
    pub inputs: Vec<(PathBuf, String)>,
    pub diagnostics: Vec<Diagnostics>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            seed,
            ..Self::default()
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.inputs.push((path.to_path_buf(), digest));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(s, "version={VERSION}");
        let _ = writeln!(s, "seed={}", self.seed);
        for (p, d) in &self.inputs {
            let _ = writeln!(s, "input={d}  {}", p.display());
        }
        for p in &self.artifacts {
            let _ = writeln!(s, "artifact={}", p.display());
        }
        if !self.config.is_empty() {
            s.push_str("\n[config]\n");
            s.push_str(&self.config);
        }
        if !self.diagnostics.is_empty() {
            s.push_str("\n[diagnostics]\n");
            s.push_str(Diagnostics::CSV_HEADER);
            s.push('\n');
            for d in &self.diagnostics {
                s.push_str(&d.csv_row());
                s.push('\n');
            }
        }
        s
    }

    /// Written through a temporary file so readers never see a partial one.
    pub fn write(&self, path: &Path) -> Result<()> {
        if self.diagnostics.windows(2).any(|w| w[0].iteration >= w[1].iteration) {
            return Err(Error::arg("diagnostic rows out of order"));
        }
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Diagnostics as CSV with a header line.
pub fn diagnostics_csv(rows: &[Diagnostics]) -> String {
    let mut s = format!("{}\n", Diagnostics::CSV_HEADER);
    for d in rows {
        s.push_str(&d.csv_row());
        s.push('\n');
    }
    s
}

/// Per-video recovery errors, one column per method, plus an average row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub methods: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ResultsTable {
    pub fn new(methods: &[&str]) -> Self {
        Self {
            methods: methods.iter().map(|m| m.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, values: Vec<f64>) {
        assert_eq!(values.len(), self.methods.len());
        self.rows.push((name.into(), values));
    }

    pub fn averages(&self) -> Vec<f64> {
        let n = self.rows.len().max(1) as f64;
        (0..self.methods.len())
            .map(|j| self.rows.iter().map(|r| r.1[j]).sum::<f64>() / n)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("name,{}\n", self.methods.join(","));
        let avg = ("average".to_string(), self.averages());
        for (name, vals) in self.rows.iter().chain(std::iter::once(&avg)) {
            let vals: Vec<String> = vals.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(s, "{name},{}", vals.join(","));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(7);
        let mut s = format!("{:<width$}", "name");
        for m in &self.methods {
            let _ = write!(s, " {m:>10}");
        }
        s.push('\n');
        let avg = ("average".to_string(), self.averages());
        for (name, vals) in self.rows.iter().chain(std::iter::once(&avg)) {
            let _ = write!(s, "{name:<width$}");
            for v in vals {
                let _ = write!(s, " {v:>10.3}");
            }
            s.push('\n');
        }
        s
    }
}
