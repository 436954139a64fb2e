//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{template, RunConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradcheckConfig};
use crate::learner::{train_with_hook, PreprocessStats, TrainState};
use crate::mrf_baseline::{mrf_recover, Estimate, MrfConfig, Potential};
use crate::recovery::{inpaint_background, make_mask, recovery_error, recovery_rmse, train_with_recovery, OcclusionSpec};
use crate::rng::{stream_rng, Stream};
use crate::run::{diagnostics_csv, export_video, to_u8_range, write_atomic, Checkpoint, ResultsTable, RunManifest};
use crate::sampler::{init_chains, ChainInit, Model};
use crate::tensor::{export_frames, import_frames, read_mask, read_stv, write_mask, write_stv, MaskTensor, StvDtype, VideoTensor};

#[derive(Debug, Parser)]
#[command(name = "stgconvnet", version, about = "Spatial-temporal generative ConvNet for dynamic textures")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "STG_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a model from STV1 videos.
    Train(TrainArgs),
    /// Sample fresh sequences from a checkpoint.
    Synthesize(SynthesizeArgs),
    /// Learn from partially occluded videos and fill in the occluded pixels.
    Recover(RecoverArgs),
    /// Replace a masked object by synthesized background.
    Inpaint(InpaintArgs),
    /// Recover occluded pixels with the MRF Gibbs baseline only.
    Baseline(BaselineArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Convert between STV1 files and PGM/PPM frame directories.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "emit_template")]
    pub config: Option<PathBuf>,
    /// Print a configuration template for a preset (exp1, exp2, exp3) and exit.
    #[arg(long, value_name = "PRESET")]
    pub emit_template: Option<String>,
    #[arg(short, long, default_value = "run")]
    pub out: PathBuf,
    #[arg(required_unless_present = "emit_template")]
    pub videos: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// zeros or noise
    #[arg(long, default_value = "zeros")]
    pub init: String,
    #[arg(short, long, default_value = "synth")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Generate masks: salt_pepper[:cov[:HxW]], single_region[:HxW],
    /// missing_frames[:f] or custom:PATH.
    #[arg(long, conflicts_with = "mask")]
    pub occlusion: Option<OcclusionSpec>,
    /// Mask files (0 = occluded, 255 = observed); one shared or one per video.
    #[arg(long, num_args = 1..)]
    pub mask: Vec<PathBuf>,
    /// Ground-truth videos for the error table. Defaults to the inputs when
    /// masks are generated.
    #[arg(long, num_args = 1..)]
    pub truth: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MrfArgs {
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub sweeps: usize,
    #[arg(long, default_value = "mean_of_last:20")]
    pub estimate: Estimate,
}

impl MrfArgs {
    fn config(&self, potential: Potential) -> MrfConfig {
        MrfConfig {
            potential,
            lambda: self.lambda,
            sweeps: self.sweeps,
            estimate: self.estimate,
            ..MrfConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub masks: MaskArgs,
    #[command(flatten)]
    pub mrf: MrfArgs,
    /// Skip the MRF baseline columns.
    #[arg(long)]
    pub no_baseline: bool,
    #[arg(short, long, default_value = "recover")]
    pub out: PathBuf,
    #[arg(required = true)]
    pub videos: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Start from the parameters of a trained checkpoint.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(short, long, default_value = "inpaint")]
    pub out: PathBuf,
    pub video: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, default_value = "l2")]
    pub potential: Potential,
    #[command(flatten)]
    pub mrf: MrfArgs,
    #[command(flatten)]
    pub masks: MaskArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long, default_value = "baseline")]
    pub out: PathBuf,
    #[arg(required = true)]
    pub videos: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    pub nets: usize,
    /// Fixed depth for every net (default: 1 to 3 at random).
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// An STV1 file or a frame directory.
    pub input: PathBuf,
    /// A frame directory or an STV1 file (the opposite of the input).
    pub output: PathBuf,
    /// Payload type when writing STV1: u8 or f32.
    #[arg(long, default_value = "u8")]
    pub dtype: String,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_videos(paths: &[PathBuf], manifest: &mut RunManifest) -> Result<Vec<VideoTensor>> {
    let mut out: Vec<VideoTensor> = Vec::with_capacity(paths.len());
    for p in paths {
        let v = read_stv(p)?;
        if let Some(first) = out.first() {
            if first.dims() != v.dims() {
                return Err(Error::shape(format!("{}: dims {} differ from {}", p.display(), v.dims(), first.dims())));
            }
        }
        manifest.add_input(p)?;
        out.push(v);
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "video".into(), |s| s.to_string_lossy().into_owned())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::arg("--threads must be positive"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Synthesize(a) => cmd_synthesize(&a),
        Command::Recover(a) => cmd_recover(&a),
        Command::Inpaint(a) => cmd_inpaint(&a),
        Command::Baseline(a) => cmd_baseline(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Convert(a) => cmd_convert(&a),
    }
}

fn checkpoint_of(cfg: &RunConfig, spec: &crate::net::NetSpec, stats: &PreprocessStats, s: &TrainState, dims: crate::tensor::Dims) -> Checkpoint {
    Checkpoint {
        config: cfg.clone(),
        spec: spec.clone(),
        params: s.params.clone(),
        dims,
        stats: stats.clone(),
        iteration: s.iteration,
        epsilon: s.epsilon,
        active_layers: s.active_layers,
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    if let Some(preset) = &a.emit_template {
        print!("{}", template(preset)?);
        return Ok(());
    }
    let config_path = a.config.as_ref().ok_or_else(|| Error::arg("--config is required"))?;
    let cfg = RunConfig::read(config_path)?;
    let mut manifest = RunManifest::new("train", cfg.train.seed);
    manifest.add_input(config_path)?;
    manifest.config = cfg.to_text();
    let raw = read_videos(&a.videos, &mut manifest)?;
    let dims = raw[0].dims();
    let spec = cfg.net_for(dims.channels)?;
    let stats = PreprocessStats::fit(&raw, None, cfg.train.preprocessing)?;
    let videos: Vec<VideoTensor> = raw.iter().map(|v| stats.apply(v)).collect::<Result<_>>()?;
    create_dir(&a.out)?;
    let mut artifacts = Vec::new();
    let every = cfg.checkpoint_every;
    let state = train_with_hook(&spec, &videos, &cfg.train, None, &mut |s| {
        log::debug!("{}", s.diagnostics.last().map(|d| d.csv_row()).unwrap_or_default());
        if every > 0 && s.iteration % every == 0 && s.iteration < cfg.train.iterations {
            let dir = a.out.join(format!("checkpoint_{:06}", s.iteration));
            artifacts.extend(checkpoint_of(&cfg, &spec, &stats, s, dims).write(&dir, &s.chains.chains)?);
        }
        Ok(())
    })?;
    let ck = checkpoint_of(&cfg, &spec, &stats, &state, dims);
    artifacts.extend(ck.write(&a.out.join("checkpoint"), &state.chains.chains)?);
    for (m, c) in state.chains.chains.iter().enumerate() {
        artifacts.extend(export_video(c, &stats, &a.out, &format!("synth_{m}"))?);
    }
    let diag = a.out.join("diagnostics.csv");
    write_atomic(&diag, diagnostics_csv(&state.diagnostics).as_bytes())?;
    artifacts.push(diag);
    manifest.diagnostics = state.diagnostics;
    manifest.artifacts = artifacts;
    manifest.write(&a.out.join("manifest.txt"))
}

pub fn cmd_synthesize(a: &SynthesizeArgs) -> Result<()> {
    let ck = Checkpoint::read(&a.checkpoint)?;
    let mut manifest = RunManifest::new("synthesize", a.seed);
    manifest.add_input(&a.checkpoint.join("params.stp"))?;
    manifest.config = ck.config.to_text();
    let model_cfg = ck.config.train.model;
    let init = match a.init.as_str() {
        "zeros" => ChainInit::Zeros,
        "noise" => ChainInit::Noise { sigma: model_cfg.sigma },
        other => return Err(Error::arg(format!("--init must be zeros or noise, found {other:?}"))),
    };
    let spec = ck.spec.truncated(ck.active_layers);
    let model = Model::new(&spec, &ck.params, &model_cfg);
    let mut chains = init_chains(ck.dims, a.count, &init, a.seed, ck.epsilon)?;
    chains.advance(&model, a.steps)?;
    create_dir(&a.out)?;
    for (m, c) in chains.chains.iter().enumerate() {
        manifest.artifacts.extend(export_video(c, &ck.stats, &a.out, &format!("synth_{m}"))?);
    }
    manifest.write(&a.out.join("manifest.txt"))
}

/// Masks for every video plus the ground truth to score against, if any.
fn resolve_masks(
    m: &MaskArgs,
    videos: &[VideoTensor],
    seed: u64,
    manifest: &mut RunManifest,
) -> Result<(Vec<MaskTensor>, Option<Vec<VideoTensor>>)> {
    let dims = videos[0].dims();
    let masks = match &m.occlusion {
        Some(spec) => (0..videos.len() as u64)
            .map(|i| make_mask(dims, spec, &mut stream_rng(seed, i, Stream::Mask)))
            .collect::<Result<Vec<_>>>()?,
        None if m.mask.len() == 1 => vec![read_mask(&m.mask[0])?; videos.len()],
        None if m.mask.len() == videos.len() => m.mask.iter().map(read_mask).collect::<Result<_>>()?,
        None => {
            return Err(Error::arg(format!(
                "need --occlusion, or one --mask per video or a single shared one ({} given for {} videos)",
                m.mask.len(),
                videos.len()
            )))
        }
    };
    for p in &m.mask {
        manifest.add_input(p)?;
    }
    for mask in &masks {
        mask.check_matches(dims)?;
    }
    let truth = if !m.truth.is_empty() {
        if m.truth.len() != videos.len() {
            return Err(Error::arg(format!("{} truth videos for {} inputs", m.truth.len(), videos.len())));
        }
        let t = read_videos(&m.truth, manifest)?;
        if t[0].dims() != dims {
            return Err(Error::shape(format!("truth dims {} vs input {}", t[0].dims(), dims)));
        }
        Some(t)
    } else if m.occlusion.is_some() {
        Some(videos.to_vec())
    } else {
        None
    };
    Ok((masks, truth))
}

fn write_table(out: &Path, name: &str, table: &ResultsTable, manifest: &mut RunManifest) -> Result<()> {
    let p = out.join(format!("{name}.csv"));
    write_atomic(&p, table.to_csv().as_bytes())?;
    manifest.artifacts.push(p);
    Ok(())
}

fn gibbs_rng(seed: u64, video: usize, potential: Potential) -> crate::rng::StreamRng {
    let offset = match potential {
        Potential::L1 => 0,
        Potential::L2 => 1 << 32,
    };
    stream_rng(seed, offset | video as u64, Stream::Gibbs)
}

pub fn cmd_recover(a: &RecoverArgs) -> Result<()> {
    let cfg = RunConfig::read(&a.config)?;
    let seed = cfg.train.seed;
    let mut manifest = RunManifest::new("recover", seed);
    manifest.add_input(&a.config)?;
    manifest.config = cfg.to_text();
    let raw = read_videos(&a.videos, &mut manifest)?;
    let (masks, truth) = resolve_masks(&a.masks, &raw, seed, &mut manifest)?;
    let dims = raw[0].dims();
    let spec = cfg.net_for(dims.channels)?;
    let stats = PreprocessStats::fit(&raw, Some(&masks), cfg.train.preprocessing)?;
    let videos: Vec<VideoTensor> = raw.iter().map(|v| stats.apply(v)).collect::<Result<_>>()?;
    let state = train_with_recovery(&spec, &videos, &masks, &cfg.train)?;
    create_dir(&a.out)?;
    let mut recovered = Vec::new();
    for (m, r) in state.recovered.iter().enumerate() {
        let name = stem(&a.videos[m]);
        let back = stats.invert(r)?;
        let p = a.out.join(format!("{name}_recovered.stv"));
        write_stv(&back, &p, StvDtype::F32)?;
        manifest.artifacts.push(p);
        let (u8v, clamped) = to_u8_range(&back);
        if clamped > 0 {
            log::info!("{name}: clamped {clamped} values into [0, 255]");
        }
        let p = a.out.join(format!("{name}_recovered_u8.stv"));
        write_stv(&u8v, &p, StvDtype::U8)?;
        manifest.artifacts.push(p);
        let p = a.out.join(format!("{name}_mask.stv"));
        write_mask(&masks[m], &p)?;
        manifest.artifacts.push(p);
        recovered.push(back);
    }
    let diag = a.out.join("diagnostics.csv");
    write_atomic(&diag, diagnostics_csv(&state.train.diagnostics).as_bytes())?;
    manifest.artifacts.push(diag);
    manifest.diagnostics = state.train.diagnostics;
    if let Some(truth) = truth {
        let methods: &[&str] = if a.no_baseline { &["ours"] } else { &["ours", "mrf_l1", "mrf_l2"] };
        let mut mae = ResultsTable::new(methods);
        let mut rmse = ResultsTable::new(methods);
        for (m, ((t, r), mask)) in truth.iter().zip(&recovered).zip(&masks).enumerate() {
            let mut e = vec![recovery_error(t, r, mask)?];
            let mut s = vec![recovery_rmse(t, r, mask)?];
            if !a.no_baseline {
                for pot in [Potential::L1, Potential::L2] {
                    let b = mrf_recover(&raw[m], mask, &a.mrf.config(pot), &mut gibbs_rng(seed, m, pot))?;
                    e.push(recovery_error(t, &b, mask)?);
                    s.push(recovery_rmse(t, &b, mask)?);
                }
            }
            let name = stem(&a.videos[m]);
            mae.push(&name, e);
            rmse.push(&name, s);
        }
        print!("{}", mae.to_text());
        write_table(&a.out, "results", &mae, &mut manifest)?;
        write_table(&a.out, "results_rmse", &rmse, &mut manifest)?;
    }
    manifest.write(&a.out.join("manifest.txt"))
}

pub fn cmd_inpaint(a: &InpaintArgs) -> Result<()> {
    let cfg = RunConfig::read(&a.config)?;
    let mut manifest = RunManifest::new("inpaint", cfg.train.seed);
    manifest.add_input(&a.config)?;
    manifest.add_input(&a.mask)?;
    manifest.config = cfg.to_text();
    let raw = read_videos(std::slice::from_ref(&a.video), &mut manifest)?;
    let mask = read_mask(&a.mask)?;
    mask.check_matches(raw[0].dims())?;
    let spec = cfg.net_for(raw[0].dims().channels)?;
    let stats = PreprocessStats::fit(&raw, Some(std::slice::from_ref(&mask)), cfg.train.preprocessing)?;
    let video = stats.apply(&raw[0])?;
    let init = match &a.init_checkpoint {
        Some(dir) => {
            let ck = Checkpoint::read(dir)?;
            if ck.dims != raw[0].dims() || ck.spec.layers != spec.layers {
                return Err(Error::shape("checkpoint network or dims differ from the inpainting run"));
            }
            manifest.add_input(&dir.join("params.stp"))?;
            Some(ck.params)
        }
        None => None,
    };
    let out = inpaint_background(&spec, &video, &mask, &cfg.train, init)?;
    create_dir(&a.out)?;
    let back = stats.invert(&out)?;
    let name = stem(&a.video);
    let p = a.out.join(format!("{name}_inpainted.stv"));
    write_stv(&back, &p, StvDtype::F32)?;
    manifest.artifacts.push(p);
    let (u8v, clamped) = to_u8_range(&back);
    if clamped > 0 {
        log::info!("{name}: clamped {clamped} values into [0, 255]");
    }
    let p = a.out.join(format!("{name}_inpainted_u8.stv"));
    write_stv(&u8v, &p, StvDtype::U8)?;
    manifest.artifacts.push(p);
    manifest.write(&a.out.join("manifest.txt"))
}

pub fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let mut manifest = RunManifest::new("baseline", a.seed);
    let raw = read_videos(&a.videos, &mut manifest)?;
    let (masks, truth) = resolve_masks(&a.masks, &raw, a.seed, &mut manifest)?;
    let cfg = a.mrf.config(a.potential);
    manifest.config = format!(
        "potential={}\nlambda={:?}\nsweeps={}\nestimate={}\nlevels={}\n",
        cfg.potential, cfg.lambda, cfg.sweeps, cfg.estimate, cfg.levels
    );
    create_dir(&a.out)?;
    let column = format!("mrf_{}", a.potential);
    let mut mae = ResultsTable::new(&[&column]);
    let mut rmse = ResultsTable::new(&[&column]);
    for (m, v) in raw.iter().enumerate() {
        let name = stem(&a.videos[m]);
        let b = mrf_recover(v, &masks[m], &cfg, &mut gibbs_rng(a.seed, m, a.potential))?;
        let p = a.out.join(format!("{name}_{column}.stv"));
        write_stv(&b, &p, StvDtype::F32)?;
        manifest.artifacts.push(p);
        if let Some(t) = &truth {
            mae.push(&name, vec![recovery_error(&t[m], &b, &masks[m])?]);
            rmse.push(&name, vec![recovery_rmse(&t[m], &b, &masks[m])?]);
        }
    }
    if truth.is_some() {
        print!("{}", mae.to_text());
        write_table(&a.out, "results", &mae, &mut manifest)?;
        write_table(&a.out, "results_rmse", &rmse, &mut manifest)?;
    }
    manifest.write(&a.out.join("manifest.txt"))
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let report = run_gradcheck(&GradcheckConfig {
        nets: a.nets,
        layers: a.layers,
        seed: a.seed,
        ..GradcheckConfig::default()
    })?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("gradient check failed: max relative error {:e}", report.max_rel_error())))
    }
}

pub fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    if a.input.is_dir() {
        let dtype = match a.dtype.as_str() {
            "u8" => StvDtype::U8,
            "f32" => StvDtype::F32,
            other => return Err(Error::arg(format!("--dtype must be u8 or f32, found {other:?}"))),
        };
        let v = import_frames(&a.input)?;
        write_stv(&v, &a.output, dtype)
    } else {
        let v = read_stv(&a.input)?;
        let clamped = export_frames(&v, &a.output)?;
        if clamped > 0 {
            log::info!("clamped {clamped} of {} values into [0, 255]", v.len());
        }
        Ok(())
    }
}
