//! The `rem` command line.
//!
//! Every command takes `--out DIR`, writes its CSV files there together with
//! the resolved `config.ini`, and exits with 0 on success, 2 on usage or
//! config errors, 3 on missing files and 4 when training diverges.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rem_core::chainsim::{DegradationChain, Profile};
use rem_core::envelope::{EnvelopeModel, Learner};
use rem_core::evalkit::{
    attribute_closed_features, attribute_open_features, average_precision, evaluate, feature_discrepancy,
    freq_discrepancy, AttributionReport, FreqMode, IdentityMap, Label,
};
use rem_core::worldgen::{gen_fake_with, gen_real_with, Family, Mode, Payload, Role, Sample};
use rem_core::{Image, SeededRng};

use crate::config::ExperimentConfig;
use crate::error::{RemError, Result};
use crate::experiments::{self, Drop};
use crate::io;
use crate::parallel::par_map;
use crate::plot;

pub const CONFIG_FILE: &str = "config.ini";
pub const AE_FILE: &str = "mbr.bin";
pub const MODEL_FILE: &str = "model.bin";

#[derive(Debug, Parser)]
#[command(name = "rem", version, about = "Real-centric envelope modeling for synthetic-sample detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus: reals plus fakes of the listed families.
    GenData(GenData),
    /// Apply seeded degradation chains to every image of a corpus.
    Degrade(Degrade),
    /// Train the autoencoder and the envelope model.
    Train(Train),
    /// Score every sample of a corpus.
    Score(Score),
    /// Accuracy metrics from a scores CSV and a labeled manifest.
    Eval(Eval),
    /// Closed- or open-set family attribution in feature space.
    Attribute(Attribute),
    /// Feature and spectral discrepancy between two corpora.
    Diagnose(Diagnose),
    /// Robustness under degradation chains with components removed.
    Ablate(Ablate),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set ee.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| RemError::Usage(format!("--set expects SECTION.KEY=VALUE, got `{o}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long)]
    pub seed: u64,
    /// Samples per class.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "image")]
    pub mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
    /// Fake families to add, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub families: Vec<Family>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct Degrade {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "mixed")]
    pub profile: Profile,
    /// Inclusive chain length range `LO,HI`.
    #[arg(long, default_value = "2,4", value_parser = parse_pair)]
    pub k_range: (usize, usize),
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Replay the chains recorded in this degraded manifest instead of
    /// drawing new ones; samples are matched by id.
    #[arg(long)]
    pub chains: Option<PathBuf>,
    /// Keep the size produced by the chain instead of resizing back.
    #[arg(long)]
    pub native_size: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct Train {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Score {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Eval {
    /// `scores.csv` written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Manifest supplying the ground-truth roles and families.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Add one row per fake family.
    #[arg(long)]
    pub by_family: bool,
    /// Add an average-precision column.
    #[arg(long)]
    pub ap: bool,
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AttrMode {
    Closed,
    Open,
}

#[derive(Debug, Args)]
pub struct Attribute {
    #[arg(long)]
    pub model: PathBuf,
    /// Training (closed) or gallery (open) corpus; samples without a
    /// family tag are ignored here and in `--queries`.
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_enum)]
    pub mode: AttrMode,
    /// Open-set rejection radius; defaults to the gallery's own estimate.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Seed of the closed-set head.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Diagnose {
    #[arg(long)]
    pub manifest_a: PathBuf,
    #[arg(long)]
    pub manifest_b: PathBuf,
    /// Feature discrepancy `Dg`.
    #[arg(long)]
    pub dg: bool,
    /// Spectral discrepancy `Δf`.
    #[arg(long)]
    pub deltaf: bool,
    /// `Δf` after chain prefixes of these lengths, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 0.., default_missing_value = "0,1,2,4,8")]
    pub sweep_k: Option<Vec<usize>>,
    /// Feature map for `Dg`; raw inputs when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub freq_mode: Option<FreqMode>,
    /// Seed of the sweep chains.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct Ablate {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Components to remove, comma separated or repeated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub drop: Vec<Drop>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: bool,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((p(a)?, p(b)?))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Degrade(a) => degrade(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Attribute(a) => attribute(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn save_config(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    cfg.save(&out.join(CONFIG_FILE))
}

fn gen_data(a: GenData) -> Result<()> {
    let mut cfg = a.config.resolve(Some(a.seed))?;
    cfg.worldgen.mode = a.mode;
    let w = &cfg.worldgen.world;
    let mut samples = gen_real_with(w, a.seed, a.n, a.mode)?;
    for &f in &a.families {
        samples.extend(gen_fake_with(w, f, a.seed, a.n, a.mode)?);
    }
    let samples: Vec<Sample> = samples
        .into_iter()
        .map(|s| Sample {
            payload: io::quantize_payload(&s.payload),
            ..s
        })
        .collect();
    io::write_corpus(&a.out, &samples)?;
    save_config(&a.out, &cfg)
}

fn degrade(a: Degrade) -> Result<()> {
    let mut cfg = a.config.resolve(Some(a.seed))?;
    cfg.chainsim.profile = a.profile;
    cfg.chainsim.k_range = a.k_range;
    cfg.validate()?;
    let samples = io::read_corpus(&a.manifest)?;
    let chains: Vec<DegradationChain> = match &a.chains {
        Some(path) => {
            let recorded: HashMap<String, Option<String>> =
                io::read_manifest(path)?.into_iter().map(|r| (r.id, r.chain)).collect();
            samples
                .iter()
                .map(|s| {
                    let text = recorded
                        .get(&s.id)
                        .and_then(|c| c.as_deref())
                        .ok_or_else(|| RemError::format(path, format!("no chain recorded for `{}`", s.id)))?;
                    Ok(DegradationChain::from_manifest(text)?)
                })
                .collect::<Result<_>>()?
        }
        None => (0..samples.len())
            .map(|i| experiments::eval_chain(&cfg, i, a.profile, a.k_range))
            .collect::<Result<_>>()?,
    };
    let degraded = if a.native_size {
        let items: Vec<(&Sample, &DegradationChain)> = samples.iter().zip(&chains).collect();
        par_map(&items, |(s, c)| -> Result<Sample> {
            let img = image_of(s)?;
            Ok(Sample {
                payload: Payload::Image(rem_core::chainsim::apply_chain(c, img)?),
                chain: Some(c.to_manifest()),
                ..(*s).clone()
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
    } else {
        experiments::degrade_all(&samples, &chains)?
    };
    let degraded: Vec<Sample> = degraded
        .into_iter()
        .map(|s| Sample {
            payload: io::quantize_payload(&s.payload),
            ..s
        })
        .collect();
    io::write_corpus(&a.out, &degraded)?;
    save_config(&a.out, &cfg)
}

fn image_of(s: &Sample) -> Result<&Image> {
    s.payload
        .as_image()
        .ok_or_else(|| RemError::Usage(format!("sample `{}` is a vector; degradation chains need images", s.id)))
}

fn train(a: Train) -> Result<()> {
    let mut cfg = a.config.resolve(a.seed)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    cfg.out_dir = out.display().to_string();
    io::create_dir(&out)?;
    save_config(&out, &cfg)?;
    let run = experiments::run_train(&cfg)?;
    io::save_autoencoder(&out.join(AE_FILE), &run.ae)?;
    io::save_envelope(&out.join(MODEL_FILE), &run.model, Some(&cfg.serialize()))?;
    let path = out.join("train_log.csv");
    let mut w = io::csv_writer(&path)?;
    let header = ["stage", "epoch", "total", "l_bce", "l_tan", "l_anc", "l_res", "grad_norm", "p"];
    w.write_record(header).map_err(|e| io::csv_error(&path, e))?;
    if let Some(meta) = &run.ae.meta {
        for (i, l) in meta.epoch_losses.iter().enumerate() {
            let row = ["mbr".into(), i.to_string(), l.to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new()];
            w.write_record(&row).map_err(|e| io::csv_error(&path, e))?;
        }
    }
    if let Some(meta) = &run.model.meta {
        for (i, (r, p)) in meta.epoch_reports.iter().zip(&meta.basis_p).enumerate() {
            let row = [
                "envelope".into(),
                i.to_string(),
                r.total.to_string(),
                r.l_bce.to_string(),
                r.l_tan.to_string(),
                r.l_anc.to_string(),
                r.l_res.to_string(),
                r.grad_norm.to_string(),
                p.to_string(),
            ];
            w.write_record(&row).map_err(|e| io::csv_error(&path, e))?;
        }
    }
    io::flush(&path, &mut w)
}

/// Model input matching: images of another size are resized for texture
/// learners, anything else must already have the model's input dim.
fn fit_to_model(model: &EnvelopeModel, s: &Sample) -> Result<Vec<f32>> {
    if s.payload.dim() == model.input_dim() {
        return Ok(s.payload.values().to_vec());
    }
    match (&model.learner, &s.payload) {
        (Learner::Texture(t), Payload::Image(img)) if img.channels() == t.channels => {
            Ok(experiments::fit_image(img, t.width, t.height).into_data())
        }
        _ => Err(RemError::Usage(format!(
            "sample `{}` has dim {} but the model expects {}",
            s.id,
            s.payload.dim(),
            model.input_dim()
        ))),
    }
}

fn score(a: Score) -> Result<()> {
    let model = io::load_envelope(&a.model)?;
    let samples = io::read_corpus(&a.manifest)?;
    let scores = par_map(&samples, |s| -> Result<f64> { Ok(model.score(&fit_to_model(&model, s)?)?) })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    io::create_dir(&a.out)?;
    let path = a.out.join("scores.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record(["id", "role", "family", "score"]).map_err(|e| io::csv_error(&path, e))?;
    for (s, v) in samples.iter().zip(&scores) {
        let fam = s.family.map_or(String::new(), |f| f.to_string());
        w.write_record([s.id.as_str(), s.role.as_str(), &fam, &v.to_string()])
            .map_err(|e| io::csv_error(&path, e))?;
    }
    io::flush(&path, &mut w)?;
    if let Ok(text) = std::fs::read_to_string(io::sidecar_path(&a.model)) {
        io::write_text(&a.out.join(CONFIG_FILE), &text)?;
    }
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| RemError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers().map_err(|e| io::csv_error(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| RemError::format(path, format!("missing column `{name}`")))
    };
    let (id, sc) = (col("id")?, col("score")?);
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| io::csv_error(path, e))?;
            let v = rec[sc]
                .parse::<f64>()
                .map_err(|e| RemError::format(path, format!("score `{}`: {e}", &rec[sc])))?;
            Ok((rec[id].to_string(), v))
        })
        .collect()
}

fn label_of(role: Role) -> Label {
    if role == Role::Real {
        Label::Real
    } else {
        Label::Fake
    }
}

fn eval(a: Eval) -> Result<()> {
    let scored = read_scores(&a.scores)?;
    let truth: HashMap<String, (Role, Option<Family>)> =
        io::read_manifest(&a.labels)?.into_iter().map(|r| (r.id, (r.role, r.family))).collect();
    let mut scores = Vec::with_capacity(scored.len());
    let mut labels = Vec::with_capacity(scored.len());
    let mut families = Vec::with_capacity(scored.len());
    for (id, s) in &scored {
        let (role, fam) = truth
            .get(id)
            .ok_or_else(|| RemError::format(&a.labels, format!("no label for `{id}`")))?;
        scores.push(*s);
        labels.push(label_of(*role));
        families.push(fam.map(|f| f.to_string()));
    }
    let report = evaluate(&scores, &labels, &families, a.threshold)?;
    io::create_dir(&a.out)?;
    let path = a.out.join("eval.csv");
    let mut w = io::csv_writer(&path)?;
    let mut header = vec!["scope", "n_real", "n_fake", "r_acc", "f_acc", "b_acc"];
    if a.ap {
        header.push("ap");
    }
    w.write_record(&header).map_err(|e| io::csv_error(&path, e))?;
    let mut row = vec![
        "all".to_string(),
        report.n_real.to_string(),
        report.n_fake.to_string(),
        report.r_acc.to_string(),
        report.f_acc.to_string(),
        report.b_acc.to_string(),
    ];
    if a.ap {
        row.push(report.ap.to_string());
    }
    w.write_record(&row).map_err(|e| io::csv_error(&path, e))?;
    let mut bars = vec![("all".to_string(), report.b_acc)];
    if a.by_family {
        for (fam, r) in &report.per_family {
            let mut row = vec![
                fam.clone(),
                r.n_real.to_string(),
                r.n_fake.to_string(),
                r.r_acc.to_string(),
                r.f_acc.to_string(),
                r.b_acc.to_string(),
            ];
            if a.ap {
                let keep: Vec<usize> = (0..scores.len())
                    .filter(|&i| labels[i] == Label::Real || families[i].as_deref() == Some(fam.as_str()))
                    .collect();
                let s: Vec<f64> = keep.iter().map(|&i| scores[i]).collect();
                let l: Vec<Label> = keep.iter().map(|&i| labels[i]).collect();
                row.push(average_precision(&s, &l)?.to_string());
            }
            w.write_record(&row).map_err(|e| io::csv_error(&path, e))?;
            bars.push((fam.clone(), r.b_acc));
        }
    }
    io::flush(&path, &mut w)?;
    let mut cfg = ExperimentConfig::default();
    cfg.eval.threshold = a.threshold;
    save_config(&a.out, &cfg)?;
    if a.plot {
        io::write_text(&a.out.join("eval.svg"), &plot::bar_chart("balanced accuracy", &bars))?;
    }
    Ok(())
}

/// Features of every sample that carries a family tag; others are skipped.
fn labeled_features(model: &EnvelopeModel, manifest: &Path) -> Result<Vec<(String, Vec<f32>)>> {
    let samples: Vec<Sample> = io::read_corpus(manifest)?.into_iter().filter(|s| s.family.is_some()).collect();
    if samples.is_empty() {
        return Err(RemError::format(manifest, "no samples with a family tag"));
    }
    par_map(&samples, |s| -> Result<(String, Vec<f32>)> {
        let fam = s.family.expect("filtered");
        Ok((fam.to_string(), model.learner_forward(&fit_to_model(model, s)?)?))
    })
    .into_iter()
    .collect()
}

fn write_attribution(out: &Path, report: &AttributionReport) -> Result<()> {
    let path = out.join("attribution.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record(["mode", "accuracy", "tau"]).map_err(|e| io::csv_error(&path, e))?;
    let mode = match report.mode {
        rem_core::evalkit::AttributionMode::Closed => "closed",
        rem_core::evalkit::AttributionMode::Open => "open",
    };
    let tau = report.tau.map_or(String::new(), |t| t.to_string());
    w.write_record([mode, &report.accuracy.to_string(), &tau]).map_err(|e| io::csv_error(&path, e))?;
    io::flush(&path, &mut w)?;

    let path = out.join("confusion.csv");
    let mut w = io::csv_writer(&path)?;
    let mut header = vec!["truth".to_string()];
    header.extend(report.cols.iter().cloned());
    w.write_record(&header).map_err(|e| io::csv_error(&path, e))?;
    for (label, counts) in report.rows.iter().zip(&report.confusion) {
        let mut row = vec![label.clone()];
        row.extend(counts.iter().map(|c| c.to_string()));
        w.write_record(&row).map_err(|e| io::csv_error(&path, e))?;
    }
    io::flush(&path, &mut w)
}

fn attribute(a: Attribute) -> Result<()> {
    let model = io::load_envelope(&a.model)?;
    let gallery = labeled_features(&model, &a.gallery)?;
    let queries = labeled_features(&model, &a.queries)?;
    let mut cfg = ExperimentConfig {
        seed: a.seed,
        ..ExperimentConfig::default()
    };
    if let Ok(text) = std::fs::read_to_string(io::sidecar_path(&a.model)) {
        cfg = ExperimentConfig::parse(&text)?;
        cfg.seed = a.seed;
    }
    let report = match a.mode {
        AttrMode::Closed => {
            let mut rng = SeededRng::new(a.seed, 0);
            attribute_closed_features(&gallery, &queries, &cfg.eval.head, &mut rng)?
        }
        AttrMode::Open => attribute_open_features(&gallery, &queries, a.tau)?,
    };
    io::create_dir(&a.out)?;
    write_attribution(&a.out, &report)?;
    save_config(&a.out, &cfg)
}

fn diagnose(a: Diagnose) -> Result<()> {
    if !a.dg && !a.deltaf && a.sweep_k.is_none() {
        return Err(RemError::Usage("diagnose needs at least one of --dg, --deltaf, --sweep-k".into()));
    }
    let mut cfg = a.config.resolve(a.seed)?;
    if let Some(m) = a.freq_mode {
        cfg.eval.freq_mode = m;
    }
    let set_a = io::read_corpus(&a.manifest_a)?;
    let set_b = io::read_corpus(&a.manifest_b)?;
    io::create_dir(&a.out)?;
    let path = a.out.join("diagnose.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record(["metric", "value"]).map_err(|e| io::csv_error(&path, e))?;
    if a.dg {
        let xa: Vec<&[f32]> = set_a.iter().map(|s| s.payload.values()).collect();
        let xb: Vec<&[f32]> = set_b.iter().map(|s| s.payload.values()).collect();
        let dg = match &a.model {
            Some(p) => feature_discrepancy(&io::load_envelope(p)?, &xa, &xb)?,
            None => feature_discrepancy(&IdentityMap, &xa, &xb)?,
        };
        w.write_record(["dg", &dg.to_string()]).map_err(|e| io::csv_error(&path, e))?;
    }
    if a.deltaf {
        let ia = set_a.iter().map(|s| image_of(s).cloned()).collect::<Result<Vec<_>>>()?;
        let ib = set_b.iter().map(|s| image_of(s).cloned()).collect::<Result<Vec<_>>>()?;
        let df = freq_discrepancy(&ia, &ib, cfg.eval.freq_mode)?;
        w.write_record(["deltaf", &df.to_string()]).map_err(|e| io::csv_error(&path, e))?;
    }
    io::flush(&path, &mut w)?;
    if let Some(ks) = &a.sweep_k {
        let curve = experiments::deltaf_sweep_on(&cfg, &set_a, &set_b, ks)?;
        let path = a.out.join("sweep.csv");
        let mut w = io::csv_writer(&path)?;
        w.write_record(["k", "deltaf"]).map_err(|e| io::csv_error(&path, e))?;
        for (k, v) in &curve {
            w.write_record([k.to_string(), v.to_string()]).map_err(|e| io::csv_error(&path, e))?;
        }
        io::flush(&path, &mut w)?;
        if a.plot {
            let pts = curve.iter().map(|&(k, v)| (k as f64, v)).collect();
            let svg = plot::line_chart("spectral discrepancy vs chain length", "k", &[("deltaf".into(), pts)]);
            io::write_text(&a.out.join("sweep.svg"), &svg)?;
        }
    }
    save_config(&a.out, &cfg)
}

fn ablate(a: Ablate) -> Result<()> {
    let cfg = a.config.resolve(a.seed)?;
    io::create_dir(&a.out)?;
    save_config(&a.out, &cfg)?;
    let rows = experiments::ablation_table(&cfg, &a.drop)?;

    let path = a.out.join("ablation.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record(["seed", "variant", "clean_b_acc", "degraded_b_acc", "drop"])
        .map_err(|e| io::csv_error(&path, e))?;
    for r in &rows {
        w.write_record([
            r.seed.to_string(),
            r.variant.clone(),
            r.clean.to_string(),
            r.degraded.to_string(),
            r.drop().to_string(),
        ])
        .map_err(|e| io::csv_error(&path, e))?;
    }
    io::flush(&path, &mut w)?;

    let mut variants: Vec<String> = Vec::new();
    for r in &rows {
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
    }
    let path = a.out.join("ablation_summary.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record(["variant", "seeds", "clean_b_acc", "degraded_b_acc", "drop"])
        .map_err(|e| io::csv_error(&path, e))?;
    let mut bars = Vec::new();
    for v in &variants {
        let sel: Vec<_> = rows.iter().filter(|r| &r.variant == v).collect();
        let n = sel.len() as f64;
        let clean = sel.iter().map(|r| r.clean).sum::<f64>() / n;
        let degraded = sel.iter().map(|r| r.degraded).sum::<f64>() / n;
        w.write_record([
            v.clone(),
            sel.len().to_string(),
            clean.to_string(),
            degraded.to_string(),
            (clean - degraded).to_string(),
        ])
        .map_err(|e| io::csv_error(&path, e))?;
        bars.push((v.clone(), degraded));
    }
    io::flush(&path, &mut w)?;
    if a.plot {
        io::write_text(&a.out.join("ablation.svg"), &plot::bar_chart("degraded balanced accuracy", &bars))?;
    }
    Ok(())
}
