use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use tempfile::NamedTempFile;

use voxsource::eval::{self, EvaluationDocument, MergeMode};
use voxsource::pooling::{self, PooledFeatureVector};
use voxsource::svm::{self, SvmConfig, SvmModel};
use voxsource::synthgen::{self, SynthSpec};
use voxsource::{corpus, featsel, features, pipeline, FeatureSubset};

const EXIT_DATA: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "voxsource",
    version,
    about = "Live-speaker vs. playback identification of voice commands"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone, Copy)]
struct SvmArgs {
    /// SVM penalty C.
    #[arg(long = "c", default_value_t = 1.0)]
    c: f64,
    /// RBF kernel width gamma.
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    /// Feed plain z-scores to the kernel instead of z-scores divided by sqrt(dim).
    #[arg(long)]
    no_dim_scale: bool,
}

impl SvmArgs {
    fn config(&self) -> SvmConfig {
        SvmConfig {
            c: self.c,
            gamma: self.gamma,
            scale_by_dim: !self.no_dim_scale,
            ..SvmConfig::default()
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MergeArg {
    None,
    Playback,
    IpodHeadphone,
}

impl From<MergeArg> for MergeMode {
    fn from(m: MergeArg) -> Self {
        match m {
            MergeArg::None => MergeMode::None,
            MergeArg::Playback => MergeMode::Playback,
            MergeArg::IpodHeadphone => MergeMode::IpodHeadphone,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum GateArg {
    Human,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract pooled feature vectors for every clip in a manifest.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-frame feature matrices.
        #[arg(long)]
        frames_out: Option<PathBuf>,
    },
    /// Train a model on a pooled feature file.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        svm: SvmArgs,
        /// Restrict training to the dimensions of a `select-features` document.
        #[arg(long)]
        use_selected: Option<PathBuf>,
    },
    /// Classify a WAV file or every row of a pooled feature file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(
            long,
            conflicts_with = "features",
            required_unless_present = "features"
        )]
        wav: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Print ACCEPT/REJECT for the given source instead of the label.
        #[arg(long)]
        gate: Option<GateArg>,
    },
    /// Stratified k-fold cross-validation.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = eval::DEFAULT_FOLDS)]
        k: usize,
        #[arg(long, default_value_t = eval::DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        svm: SvmArgs,
        #[arg(long, value_enum, default_value_t = MergeArg::None)]
        merge: MergeArg,
        /// Score the merged classes with retrained models instead of merged predictions.
        #[arg(long)]
        retrain_binary: bool,
        /// JSON report destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic labelled corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// `key = value` spec file; defaults apply to unset keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Correlation-based feature subset selection.
    SelectFeatures {
        #[arg(long)]
        features: PathBuf,
        /// JSON selection document destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Writes through a temporary file in the destination directory, then renames.
fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_pooled(path: &Path) -> Result<Vec<PooledFeatureVector>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = pooling::read_pooled_csv(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))?;
    if rows.is_empty() {
        bail!("{} contains no feature rows", path.display());
    }
    Ok(rows)
}

fn labelled(rows: &[PooledFeatureVector]) -> Result<Vec<String>> {
    rows.iter()
        .map(|r| {
            r.label
                .clone()
                .with_context(|| format!("clip {:?} has no label", r.clip_id))
        })
        .collect()
}

fn load_model(path: &Path) -> Result<SvmModel> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    SvmModel::from_reader(BufReader::new(file))
        .with_context(|| format!("loading model {}", path.display()))
}

fn featurize(manifest: &Path, out: &Path, frames_out: Option<&Path>) -> Result<()> {
    let manifest = corpus::load_manifest(manifest)
        .with_context(|| format!("loading manifest {}", manifest.display()))?;
    let results = pipeline::featurize_manifest(&manifest);
    let mut rows = Vec::new();
    for (record, result) in manifest.records.iter().zip(results) {
        match result {
            Ok(v) => rows.push(v),
            Err(e) => eprintln!("warning: skipping {}: {e}", record.id),
        }
    }
    if rows.is_empty() {
        bail!("no clip could be featurized");
    }
    eprintln!("featurized {} of {} clips", rows.len(), manifest.len());
    write_atomic(out, |w| Ok(pooling::write_pooled_csv(w, &rows)?))?;

    if let Some(path) = frames_out {
        let mut matrices = Vec::new();
        for record in &manifest.records {
            let Ok(clip) = corpus::ingest(record) else {
                continue;
            };
            if let Ok(frames) = features::extract_frame_features(&clip) {
                matrices.push((record.id.clone(), frames));
            }
        }
        let refs: Vec<(&str, &[features::FrameFeatureVector])> = matrices
            .iter()
            .map(|(id, f)| (id.as_str(), f.as_slice()))
            .collect();
        write_atomic(path, |w| Ok(features::write_frame_csv(w, &refs)?))?;
    }
    Ok(())
}

fn train(
    features: &Path,
    out: &Path,
    config: SvmConfig,
    use_selected: Option<&Path>,
) -> Result<()> {
    let rows = read_pooled(features)?;
    let labels = labelled(&rows)?;
    let vectors: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
    let subset = match use_selected {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let sel: FeatureSubset = serde_json::from_reader(BufReader::new(file))
                .with_context(|| format!("reading selection {}", path.display()))?;
            Some(sel.indices)
        }
        None => None,
    };
    let model = svm::train_multiclass_with(&vectors, &labels, &config, subset)?;
    let unconverged = model.machines.iter().filter(|m| !m.converged).count();
    if unconverged > 0 {
        eprintln!("warning: {unconverged} binary machine(s) hit the iteration limit");
    }
    write_atomic(out, |w| Ok(model.to_writer(w)?))?;
    eprintln!(
        "trained {} machines over classes {} ({} support vectors)",
        model.machines.len(),
        model.classes.join(", "),
        model.support_vectors.len()
    );
    Ok(())
}

fn predict(
    model: &Path,
    wav: Option<&Path>,
    features: Option<&Path>,
    gate: Option<GateArg>,
) -> Result<()> {
    let model = load_model(model)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if let Some(path) = wav {
        let clip = corpus::load_wav(path).with_context(|| format!("loading {}", path.display()))?;
        match gate {
            Some(GateArg::Human) => writeln!(out, "{}", svm::gate_human(&model, &clip)?)?,
            None => {
                let pooled = pipeline::featurize_clip(&clip)?;
                writeln!(out, "{}", model.predict(&pooled.values)?.label)?;
            }
        }
        return Ok(());
    }
    let path = features.expect("clap enforces --wav or --features");
    if gate.is_some() && !model.has_class(svm::HUMAN_LABEL) {
        bail!("model has no {:?} class", svm::HUMAN_LABEL);
    }
    for row in read_pooled(path)? {
        let label = model.predict(&row.values)?.label;
        match gate {
            Some(GateArg::Human) => {
                let verdict = if label == svm::HUMAN_LABEL {
                    "ACCEPT"
                } else {
                    "REJECT"
                };
                writeln!(out, "{}\t{verdict}", row.clip_id)?
            }
            None => writeln!(out, "{}\t{label}", row.clip_id)?,
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    features: &Path,
    k: usize,
    seed: u64,
    config: SvmConfig,
    merge: MergeMode,
    retrain_binary: bool,
    out: Option<&Path>,
) -> Result<()> {
    let rows = read_pooled(features)?;
    let labels = labelled(&rows)?;
    let plan = eval::make_folds(&labels, k, seed)?;
    let report = eval::cross_validate(&rows, &config, &plan)?;

    println!(
        "{k}-fold cross-validation, seed {seed}, C = {}, gamma = {}",
        config.c, config.gamma
    );
    println!();
    print!("{report}");

    let mut merged = BTreeMap::new();
    let mode_name = match merge {
        MergeMode::None => None,
        MergeMode::Playback => Some("playback"),
        MergeMode::IpodHeadphone => Some("ipod-headphone"),
    };
    if let (Some(name), Some(map)) = (mode_name, merge.map()) {
        let variant = if retrain_binary {
            eval::cross_validate_merged(&rows, &config, &plan, &map)?
        } else {
            eval::merge_classes(&report, &map)?
        };
        println!();
        println!(
            "merged ({name}, {}):",
            if retrain_binary {
                "retrained"
            } else {
                "merged predictions"
            }
        );
        print!("{variant}");
        merged.insert(name.to_string(), variant);
    }

    if let Some(path) = out {
        let doc = EvaluationDocument {
            seed,
            k,
            config,
            clip_ids: rows.iter().map(|r| r.clip_id.clone()).collect(),
            fold_assignment: plan.assignment.clone(),
            report,
            merged,
            retrain_binary,
        };
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &doc)?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    Ok(())
}

fn synth(
    out: &Path,
    spec: Option<&Path>,
    seed: Option<u64>,
    n_per_class: Option<usize>,
) -> Result<()> {
    let mut synth_spec = match spec {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SynthSpec::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        synth_spec.seed = s;
    }
    if let Some(n) = n_per_class {
        synth_spec.n_per_class = n;
    }
    let manifest = synthgen::generate_corpus(&synth_spec, out)?;
    eprintln!(
        "wrote {} clips and {} (seed {})",
        manifest.len(),
        out.join(synthgen::MANIFEST_FILE).display(),
        synth_spec.seed
    );
    Ok(())
}

fn select(features: &Path, out: Option<&Path>) -> Result<()> {
    let rows = read_pooled(features)?;
    let subset = featsel::select_pooled(&rows)?;
    print!("{}", featsel::selection_table(&subset));
    if let Some(path) = out {
        let described: Vec<_> = subset
            .indices
            .iter()
            .filter(|&&d| d < pooling::POOLED_DIM)
            .map(|&d| {
                let (stat, family, index) = featsel::describe_pooled_dim(d);
                json!({ "dim": d, "statistic": stat, "feature": family, "index": index })
            })
            .collect();
        let doc = json!({
            "indices": subset.indices,
            "merit": subset.merit,
            "evaluated": subset.evaluated,
            "features": described,
        });
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &doc)?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Featurize {
            manifest,
            out,
            frames_out,
        } => featurize(&manifest, &out, frames_out.as_deref()),
        Command::Train {
            features,
            out,
            svm,
            use_selected,
        } => train(&features, &out, svm.config(), use_selected.as_deref()),
        Command::Predict {
            model,
            wav,
            features,
            gate,
        } => predict(&model, wav.as_deref(), features.as_deref(), gate),
        Command::Evaluate {
            features,
            k,
            seed,
            svm,
            merge,
            retrain_binary,
            out,
        } => evaluate(
            &features,
            k,
            seed,
            svm.config(),
            merge.into(),
            retrain_binary,
            out.as_deref(),
        ),
        Command::Synth {
            out,
            spec,
            seed,
            n_per_class,
        } => synth(&out, spec.as_deref(), seed, n_per_class),
        Command::SelectFeatures { features, out } => select(&features, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let internal = e
                .chain()
                .filter_map(|c| c.downcast_ref::<voxsource::Error>())
                .any(voxsource::Error::is_internal);
            ExitCode::from(if internal { EXIT_INTERNAL } else { EXIT_DATA })
        }
    }
}
