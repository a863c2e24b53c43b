//! Command-line front end: `gen`, `train`, `eval`, `embed`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autodiff::DenseMatrix;
use crate::config::RunConfig;
use crate::data::{
    generate_synthetic, load_features, load_manifest, write_atomic, write_features, Dataset, Instance, LoadedData,
    Manifest, ManifestModality, ModalitySet, SplitSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_all, render_pr_curve, render_results, EmbeddedSet, TaskMatrix};
use crate::network::{checkpoint_digest, load_checkpoint, save_checkpoint, NetworkConfig, StarNetwork};
use crate::trainer::{train_with, TrainReport};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "MHTN_OUT";
const DEFAULT_OUT: &str = "mhtn-out";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "epochs.tsv";
pub const RESULTS_FILE: &str = "results.tsv";

#[derive(Debug, Parser)]
#[command(name = "mhtn", version, about = "Cross-modal retrieval with hybrid transfer networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark: feature files, manifest and a run config.
    Gen(GenArgs),
    /// Train a network and write a checkpoint plus per-epoch losses.
    Train(TrainArgs),
    /// Evaluate bi-modal retrieval on a split.
    Eval(EvalArgs),
    /// Write class-probability embeddings.
    Embed(EmbedArgs),
}

/// Overrides shared by every command that reads a run config.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_source: bool,
    #[arg(long)]
    pub no_sl_net: bool,
    #[arg(long)]
    pub no_adver: bool,
    #[arg(long)]
    pub no_sds: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.schedule.seed = s;
        }
        cfg.ablation.no_source |= self.no_source;
        cfg.ablation.no_sl_net |= self.no_sl_net;
        cfg.ablation.no_adver |= self.no_adver;
        cfg.ablation.no_sds |= self.no_sds;
        if let Some(l) = self.lambda {
            cfg.network.weights.lambda = l;
        }
        if let Some(e) = self.epochs {
            cfg.schedule.epochs = e;
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Synthetic spec (TOML); defaults to the built-in benchmark.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Emit a pair table linking instances across modalities.
    #[arg(long)]
    pub paired: bool,
    /// Layer width written into the generated run config.
    #[arg(long, default_value_t = 128)]
    pub width: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run config; defaults to config.toml next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to model.ckpt in the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Evaluate precomputed embedding files instead of running the network.
    #[arg(long, num_args = 1..)]
    pub embeddings: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Feature file to embed; writes a single embedding file to `--out`.
    #[arg(long, conflicts_with = "split")]
    pub features: Option<PathBuf>,
    /// Embed every modality of this split; writes one file per modality into `--out`.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Output directory: flag, then config, then the environment, then `mhtn-out`.
pub fn resolve_out(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => {
            let out = resolve_out(a.out.as_deref(), None);
            cmd_eval(&a)?;
            let text = std::fs::read_to_string(out.join(RESULTS_FILE)).map_err(|e| Error::io(out.join(RESULTS_FILE), e))?;
            print!("{text}");
            Ok(())
        }
        Command::Embed(a) => cmd_embed(&a).map(|_| ()),
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<PathBuf> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SyntheticSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(c) = args.classes {
        spec.num_classes = c;
    }
    if let Some(n) = args.per_class {
        spec.per_class = n;
    }
    spec.paired |= args.paired;
    if args.width == 0 {
        return Err(Error::Config("--width must be >= 1".into()));
    }
    let (source, target) = generate_synthetic(&spec)?;
    let out = resolve_out(args.out.as_deref(), None);

    let mut modalities = Vec::new();
    for set in &target.modalities {
        let file = PathBuf::from(format!("{}.features", set.modality));
        write_features(&out.join(&file), set, Some(target.num_classes))?;
        modalities.push(ManifestModality {
            tag: set.modality.clone(),
            file,
        });
    }
    write_features(&out.join("source.features"), &source.modalities[0], Some(source.num_classes))?;
    let pair_table = match &target.pair_table {
        Some(rows) => {
            let tags = target.modality_tags();
            write_atomic(&out.join("pairs.tsv"), crate::data::render_pair_table(&tags, rows).as_bytes())?;
            Some(PathBuf::from("pairs.tsv"))
        }
        None => None,
    };
    let manifest = Manifest {
        num_classes: target.num_classes,
        source: Some(PathBuf::from("source.features")),
        source_classes: Some(source.num_classes),
        pair_table,
        split: SplitSpec {
            train: 0.7,
            test: 0.2,
            validation: 0.1,
            seed: spec.seed,
        },
        modalities,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&out.join("manifest.toml"), text.as_bytes())?;
    let spec_text = toml::to_string(&spec).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&out.join("synthetic.toml"), spec_text.as_bytes())?;

    let mut run = RunConfig::new("manifest.toml");
    run.seed = spec.seed;
    run.schedule.seed = spec.seed;
    run.network.specific_widths = vec![args.width; 2];
    run.network.common_widths = vec![args.width; 2];
    run.network.discriminator_widths = vec![args.width; 2];
    write_atomic(&out.join(CONFIG_FILE), run.render().as_bytes())?;
    Ok(out)
}

/// Everything a finished training run produced.
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub network: StarNetwork,
    pub report: TrainReport,
    pub checkpoint_digest: String,
}

fn absolutize(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut cfg = RunConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg);
    let out = resolve_out(args.out.as_deref(), cfg.out_dir.as_deref());
    let data = load_manifest(&cfg.data)?;
    let net_cfg = cfg.network_config(&data)?;
    let digest = net_cfg.digest_hex();
    let mut net = StarNetwork::build(net_cfg, cfg.seed)?;

    // the saved config must reproduce this network from any working directory
    let mut saved = cfg.clone();
    saved.data = absolutize(&cfg.data);
    saved.out_dir = None;
    write_atomic(&out.join(CONFIG_FILE), saved.render().as_bytes())?;

    let train_set = data.splits.train.clone();
    let ckpt = out.join(CHECKPOINT_FILE);
    let quiet = args.quiet;
    let report = train_with(&mut net, data.source.as_ref(), &train_set, &cfg.schedule, |net, rec| {
        if !quiet {
            eprintln!(
            "epoch {:>3}  st {:.5}  sds {:.5}  ct {:.5}  sc {:.5}  mc {:.5}  ({:.2}s)",
                rec.epoch, rec.losses.st, rec.losses.sds, rec.losses.ct, rec.losses.sc, rec.losses.mc, rec.wall_secs
            );
        }
        save_checkpoint(net, &ckpt)
    })?;
    save_checkpoint(&net, &ckpt)?;
    let body = report.render();
    let text = format!("# seed={} config_digest={digest}\n{body}", cfg.seed);
    write_atomic(&out.join(REPORT_FILE), text.as_bytes())?;
    Ok(TrainOutcome {
        out_dir: out,
        checkpoint_digest: checkpoint_digest(&net),
        network: net,
        report,
    })
}

/// Config, data and network for `eval`/`embed`.
struct Loaded {
    cfg: RunConfig,
    data: LoadedData,
    net_cfg: NetworkConfig,
}

fn locate(config: Option<&Path>, checkpoint: Option<&Path>, out: &Path) -> (PathBuf, PathBuf) {
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let cfg = config.map(Path::to_path_buf).unwrap_or_else(|| {
        ckpt.parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .join(CONFIG_FILE)
    });
    (cfg, ckpt)
}

fn load_run(config: &Path, overrides: &Overrides) -> Result<Loaded> {
    let mut cfg = RunConfig::load(config)?;
    overrides.apply(&mut cfg);
    let data = load_manifest(&cfg.data)?;
    let net_cfg = cfg.network_config(&data)?;
    Ok(Loaded { cfg, data, net_cfg })
}

/// Embeds every modality of `ds`; every instance must be labeled.
pub fn embed_dataset(net: &StarNetwork, ds: &Dataset) -> Result<Vec<EmbeddedSet>> {
    ds.modalities
        .iter()
        .map(|m| {
            let labels = m
                .labels()
                .into_iter()
                .zip(&m.instances)
                .map(|(l, inst)| {
                    l.ok_or_else(|| Error::Data(format!("{} instance {} has no label", m.modality, inst.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let emb = net.embed(&m.modality, &m.feature_matrix())?;
            EmbeddedSet::new(m.modality.clone(), m.ids(), labels, emb)
        })
        .collect()
}

fn embedded_to_set(e: &EmbeddedSet) -> ModalitySet {
    let mut set = ModalitySet::new(e.modality.clone(), e.embeddings.cols());
    for (i, (&id, &label)) in e.ids.iter().zip(&e.labels).enumerate() {
        set.instances.push(Instance {
            id,
            features: e.embeddings.row(i).to_vec(),
            label: Some(label),
        });
    }
    set
}

fn write_task_matrix(out: &Path, m: &TaskMatrix, seed: u64, digest: &str) -> Result<()> {
    write_atomic(&out.join(RESULTS_FILE), render_results(m, seed, digest).as_bytes())?;
    for t in &m.tasks {
        let name = format!("pr_{}_{}.tsv", t.query_modality, t.gallery_modality);
        write_atomic(&out.join(name), render_pr_curve(t, seed, digest).as_bytes())?;
    }
    Ok(())
}

fn load_embeddings(paths: &[PathBuf]) -> Result<Vec<EmbeddedSet>> {
    paths
        .iter()
        .map(|p| {
            let f = load_features(p)?;
            let set = f.set;
            let labels = set
                .instances
                .iter()
                .map(|i| i.label.ok_or_else(|| Error::Data(format!("{}: instance {} has no label", p.display(), i.id))))
                .collect::<Result<Vec<_>>>()?;
            let m = set.feature_matrix();
            EmbeddedSet::new(set.modality.clone(), set.ids(), labels, m)
        })
        .collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<TaskMatrix> {
    let out = resolve_out(args.out.as_deref(), None);
    let (cfg_path, ckpt_path) = locate(args.config.as_deref(), args.checkpoint.as_deref(), &out);
    let loaded = load_run(&cfg_path, &args.overrides)?;
    let digest = loaded.net_cfg.digest_hex();
    let sets = if args.embeddings.is_empty() {
        let net = load_checkpoint(&ckpt_path, loaded.net_cfg.clone())?;
        let ds = loaded
            .data
            .splits
            .get(&args.split)
            .ok_or_else(|| Error::Usage(format!("unknown split {:?}; use train, test or validation", args.split)))?;
        embed_dataset(&net, ds)?
    } else {
        load_embeddings(&args.embeddings)?
    };
    let matrix = evaluate_all(&sets)?;
    write_task_matrix(&out, &matrix, loaded.cfg.seed, &digest)?;
    Ok(matrix)
}

/// Returns the written embedding files.
pub fn cmd_embed(args: &EmbedArgs) -> Result<Vec<PathBuf>> {
    let out = resolve_out(args.out.as_deref(), None);
    let (cfg_path, ckpt_path) = locate(args.config.as_deref(), args.checkpoint.as_deref(), &out);
    let loaded = load_run(&cfg_path, &args.overrides)?;
    let classes = loaded.net_cfg.num_classes_target;
    let net = load_checkpoint(&ckpt_path, loaded.net_cfg)?;
    match (&args.features, &args.split) {
        (Some(path), None) => {
            let f = load_features(path)?;
            let set = f.set;
            let emb = if set.is_empty() {
                if net.config().modality_index(&set.modality).is_none() {
                    return Err(Error::Config(format!("unknown modality {:?}", set.modality)));
                }
                DenseMatrix::zeros(0, classes)
            } else {
                net.embed(&set.modality, &set.feature_matrix())?
            };
            let mut out_set = ModalitySet::new(set.modality.clone(), classes);
            for (i, inst) in set.instances.iter().enumerate() {
                out_set.instances.push(Instance {
                    id: inst.id,
                    features: emb.row(i).to_vec(),
                    label: inst.label,
                });
            }
            let target = if out.extension().is_some() {
                out
            } else {
                out.join(format!("{}.emb", set.modality))
            };
            write_features(&target, &out_set, Some(classes))?;
            Ok(vec![target])
        }
        (None, Some(split)) => {
            let ds = loaded
                .data
                .splits
                .get(split)
                .ok_or_else(|| Error::Usage(format!("unknown split {split:?}; use train, test or validation")))?;
            let mut written = Vec::new();
            for e in embed_dataset(&net, ds)? {
                let target = out.join(format!("{}.emb", e.modality));
                write_features(&target, &embedded_to_set(&e), Some(classes))?;
                written.push(target);
            }
            Ok(written)
        }
        _ => Err(Error::Usage("embed needs exactly one of --features or --split".into())),
    }
}
