//! `mca` — experiment runner for the position-layout laboratory.
//!
//! Every command writes its artifacts under `<out-root>/<tag>/` and nothing
//! else; values the contract promises on stdout (index counts, CHAIR
//! ratios, comparison lines) go to stdout, progress chatter to stderr.
//! Reruns with the same flags, seed, and tag produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mca_core::chair::{chair_caption_ratio, chair_object_ratio, read_annotations_file};
use mca_core::decay::{decay_profile, grid_decay_map};
use mca_core::export::{grid_to_csv, grid_to_pgm, grid_to_svg};
use mca_core::layout::{GridSpec, PositionLayout, Scheme};
use mca_core::mask::{index_causal_mask, MultimodalSequence};
use mca_core::rope::RotaryFrequencies;
use mca_core::toy::{
    eval_by_region, gen_dataset, saliency_flow, train, LabelMode, RegionReport, ToyConfig,
    ToyModel, EVAL_SEED_STRIDE,
};
use mca_core::Error as CoreError;

const OUT_ROOT_ENV: &str = "MCA_OUT_ROOT";

#[derive(Parser)]
#[command(name = "mca", version, about = "Position-layout experiments for rotary attention")]
struct Cli {
    /// Output root; defaults to $MCA_OUT_ROOT, then ./runs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run directory name under the output root; defaults to run-<unix secs>.
    #[arg(long, global = true)]
    tag: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export a scheme's position-index grid; prints the distinct count.
    Indices {
        #[arg(long, value_parser = parse_scheme)]
        scheme: Scheme,
        #[arg(long)]
        side: usize,
    },
    /// Export the index-causal attention mask for a full sequence.
    Mask {
        #[arg(long, value_parser = parse_scheme)]
        scheme: Scheme,
        #[arg(long)]
        side: usize,
        /// Text tokens before the image.
        #[arg(long, default_value_t = 0)]
        prefix: usize,
        /// Text tokens after the image.
        #[arg(long, default_value_t = 0)]
        suffix: usize,
    },
    /// Profile positional score decay and map it over the image grid.
    Decay {
        #[arg(long, value_parser = parse_scheme)]
        scheme: Scheme,
        #[arg(long)]
        side: usize,
        #[arg(long = "head-dim", alias = "d", default_value_t = 64)]
        head_dim: usize,
        #[arg(long, default_value_t = 10_000.0)]
        base: f64,
        #[arg(long, default_value_t = 512)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads for the sample loop; any value gives the same bytes.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Train the toy model and report accuracy by image region.
    TrainToy(TrainToyArgs),
    /// Average a trained model's image-to-instruction saliency.
    Saliency {
        /// Model file written by train-toy.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        /// Sample-stream seed; defaults to the model's eval stream.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; any value gives the same bytes.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// CHAIR hallucination ratios over a JSON-lines fixture file.
    Chair {
        #[arg(long, alias = "file")]
        fixtures: PathBuf,
    },
    /// Compare two region reports written by train-toy.
    Compare {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
    },
}

#[derive(clap::Args)]
struct TrainToyArgs {
    /// Flat JSON config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long = "model-dim")]
    model_dim: Option<usize>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long = "marker-kinds")]
    marker_kinds: Option<usize>,
    #[arg(long)]
    cues: Option<usize>,
    #[arg(long)]
    decoys: Option<usize>,
    #[arg(long = "rope-base")]
    rope_base: Option<f64>,
    #[arg(long = "instruction-len")]
    instruction_len: Option<usize>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    #[arg(long = "label-mode", value_parser = parse_label_mode)]
    label_mode: Option<LabelMode>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "train-samples")]
    train_samples: Option<usize>,
    #[arg(long = "eval-samples")]
    eval_samples: Option<usize>,
}

/// Everything a train-toy run depends on, as one flat record. This is the
/// config file schema and also what gets echoed to the run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainSpec {
    layers: usize,
    heads: usize,
    model_dim: usize,
    side: usize,
    vocab: usize,
    marker_kinds: usize,
    cues: usize,
    decoys: usize,
    rope_base: f64,
    instruction_len: usize,
    scheme: Scheme,
    label_mode: LabelMode,
    batch_size: usize,
    seed: u64,
    steps: usize,
    lr: f64,
    train_samples: usize,
    eval_samples: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let toy = ToyConfig::default();
        TrainSpec {
            layers: toy.layers,
            heads: toy.heads,
            model_dim: toy.model_dim,
            side: toy.side,
            vocab: toy.vocab,
            marker_kinds: toy.marker_kinds,
            cues: toy.cues,
            decoys: toy.decoys,
            rope_base: toy.rope_base,
            instruction_len: toy.instruction_len,
            scheme: toy.scheme,
            label_mode: toy.label_mode,
            batch_size: toy.batch_size,
            seed: toy.seed,
            steps: 2000,
            lr: 5e-4,
            train_samples: 8192,
            eval_samples: 2048,
        }
    }
}

impl TrainSpec {
    fn toy_config(&self) -> ToyConfig {
        ToyConfig {
            layers: self.layers,
            heads: self.heads,
            model_dim: self.model_dim,
            side: self.side,
            vocab: self.vocab,
            marker_kinds: self.marker_kinds,
            cues: self.cues,
            decoys: self.decoys,
            rope_base: self.rope_base,
            instruction_len: self.instruction_len,
            scheme: self.scheme,
            label_mode: self.label_mode,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    fn apply(&mut self, args: &TrainToyArgs) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = args.$field { self.$field = v; })*
            };
        }
        take!(
            layers, heads, model_dim, side, vocab, marker_kinds, cues, decoys, rope_base,
            instruction_len, scheme, label_mode, batch_size, seed, steps, lr, train_samples,
            eval_samples
        );
    }
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    let key = s.replace('-', "_");
    Scheme::ALL
        .into_iter()
        .find(|scheme| scheme.name() == key)
        .ok_or_else(|| {
            let names: Vec<&str> = Scheme::ALL.iter().map(|s| s.name()).collect();
            format!("unknown scheme {s:?}; valid schemes: {}", names.join(", "))
        })
}

fn parse_label_mode(s: &str) -> Result<LabelMode, String> {
    match s {
        "marker" => Ok(LabelMode::Marker),
        "cell" => Ok(LabelMode::Cell),
        other => Err(format!("unknown label mode {other:?}; valid modes: marker, cell")),
    }
}

/// Usage/config/IO problems exit 1, numeric failures at runtime exit 2.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<CoreError> for Failure {
    fn from(err: CoreError) -> Self {
        let code = match err {
            CoreError::Diverged { .. } | CoreError::DegenerateMask { .. } => 2,
            _ => 1,
        };
        Failure { code, message: err.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure { code: 1, message: err.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version land here; they are not failures
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

/// Resolved lazily so commands that never write (chair, compare) do not
/// create directories.
struct OutDir {
    root: PathBuf,
    tag: String,
    created: Option<PathBuf>,
}

impl OutDir {
    fn new(out: Option<PathBuf>, tag: Option<String>) -> Self {
        let root = out
            .or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        let tag = tag.unwrap_or_else(|| {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            format!("run-{secs}")
        });
        OutDir { root, tag, created: None }
    }

    fn dir(&mut self) -> Result<&Path, Failure> {
        if self.created.is_none() {
            let dir = self.root.join(&self.tag);
            fs::create_dir_all(&dir)?;
            self.created = Some(dir);
        }
        Ok(self.created.as_deref().expect("just created"))
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, Failure> {
        let path = self.dir()?.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut out = OutDir::new(cli.out, cli.tag);
    match cli.command {
        Command::Indices { scheme, side } => cmd_indices(scheme, side, &mut out),
        Command::Mask { scheme, side, prefix, suffix } => {
            cmd_mask(scheme, side, prefix, suffix, &mut out)
        }
        Command::Decay { scheme, side, head_dim, base, samples, seed, workers } => {
            cmd_decay(scheme, side, head_dim, base, samples, seed, workers, &mut out)
        }
        Command::TrainToy(args) => cmd_train_toy(&args, &mut out),
        Command::Saliency { model, samples, seed, workers } => {
            cmd_saliency(&model, samples, seed, workers, &mut out)
        }
        Command::Chair { fixtures } => cmd_chair(&fixtures),
        Command::Compare { left, right } => cmd_compare(&left, &right),
    }
}

fn cmd_indices(scheme: Scheme, side: usize, out: &mut OutDir) -> Result<(), Failure> {
    let grid = GridSpec::new(side)?;
    let layout = PositionLayout::for_scheme(scheme, grid);
    out.write("indices.csv", &layout.grid_csv())?;
    out.write("indices.txt", &layout.grid_table())?;
    let json = serde_json::to_string_pretty(&layout).map_err(CoreError::from)?;
    out.write("layout.json", &(json + "\n"))?;
    println!("distinct={}", layout.num_distinct);
    eprintln!("wrote {}", out.dir()?.display());
    Ok(())
}

fn cmd_mask(
    scheme: Scheme,
    side: usize,
    prefix: usize,
    suffix: usize,
    out: &mut OutDir,
) -> Result<(), Failure> {
    let grid = GridSpec::new(side)?;
    let layout = PositionLayout::for_scheme(scheme, grid);
    let seq = MultimodalSequence::build(prefix, grid, suffix, &layout)?;
    let mask = index_causal_mask(&seq);
    out.write("mask.pgm", &mask.to_pgm())?;
    out.write("mask.json", &(mask.to_json() + "\n"))?;
    println!("n={}", mask.n());
    eprintln!("wrote {}", out.dir()?.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_decay(
    scheme: Scheme,
    side: usize,
    head_dim: usize,
    base: f64,
    samples: usize,
    seed: u64,
    workers: usize,
    out: &mut OutDir,
) -> Result<(), Failure> {
    let grid = GridSpec::new(side)?;
    let layout = PositionLayout::for_scheme(scheme, grid);
    let freq = RotaryFrequencies::new(head_dim, base)?;
    // the profile spans the distances a query just past the image can see
    let profile = decay_profile(&freq, samples, layout.num_distinct, seed, workers)?;
    out.write("profile.csv", &profile.to_csv())?;
    let map = grid_decay_map(grid, &layout, layout.num_distinct, &freq, samples, seed, workers)?;
    out.write("map.csv", &grid_to_csv(&map))?;
    let (pgm, range) = grid_to_pgm(&map);
    out.write("map.pgm", &pgm)?;
    out.write("map.svg", &grid_to_svg(&map))?;
    let sidecar = serde_json::to_string_pretty(&range).map_err(CoreError::from)?;
    out.write("map_range.json", &(sidecar + "\n"))?;
    eprintln!("wrote {}", out.dir()?.display());
    Ok(())
}

fn cmd_train_toy(args: &TrainToyArgs, out: &mut OutDir) -> Result<(), Failure> {
    let mut spec = TrainSpec::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
        spec = serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
    }
    spec.apply(args);
    let cfg = spec.toy_config();
    let mut model = ToyModel::new(cfg)?;
    let echoed = serde_json::to_string_pretty(&spec).map_err(CoreError::from)?;
    out.write("config.json", &(echoed + "\n"))?;
    let data = gen_dataset(&cfg, spec.train_samples, cfg.seed);
    let trace = train(&mut model, &data, spec.steps, spec.lr)?;
    out.write("loss.csv", &trace.to_csv())?;
    let eval = gen_dataset(&cfg, spec.eval_samples, cfg.seed.wrapping_add(EVAL_SEED_STRIDE));
    let report = eval_by_region(&model, &eval)?;
    out.write("model.json", &(model.to_json() + "\n"))?;
    out.write("report.json", &report.to_json())?;
    println!(
        "scheme={} overall={:.4} spread={:.4}",
        cfg.scheme.name(),
        report.overall_accuracy,
        report.accuracy_spread
    );
    eprintln!("wrote {}", out.dir()?.display());
    Ok(())
}

fn cmd_saliency(
    model_path: &Path,
    samples: usize,
    seed: Option<u64>,
    workers: usize,
    out: &mut OutDir,
) -> Result<(), Failure> {
    let text = fs::read_to_string(model_path)
        .map_err(|e| Failure::usage(format!("model {}: {e}", model_path.display())))?;
    let model = ToyModel::from_json(&text)?;
    let cfg = *model.cfg();
    if samples == 0 {
        return Err(Failure::usage("need at least one sample"));
    }
    let seed = seed.unwrap_or_else(|| cfg.seed.wrapping_add(EVAL_SEED_STRIDE));
    let data = gen_dataset(&cfg, samples, seed);
    let workers = workers.clamp(1, samples);

    // grids are computed shard-parallel but stored by sample index, then
    // reduced in index order, so worker count never changes the bytes
    let mut grids: Vec<Option<ndarray::Array2<f64>>> = vec![None; samples];
    let chunk = samples.div_ceil(workers);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (w, slot_chunk) in grids.chunks_mut(chunk).enumerate() {
            let model = &model;
            let data = &data;
            handles.push(scope.spawn(move || -> Result<(), CoreError> {
                for (k, slot) in slot_chunk.iter_mut().enumerate() {
                    let grid = saliency_flow(model, &data[w * chunk + k])?;
                    *slot = Some(grid.values);
                }
                Ok(())
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("saliency worker panicked"))
            .collect::<Result<Vec<()>, CoreError>>()
    })?;

    let mut mean = ndarray::Array2::<f64>::zeros((cfg.side, cfg.side));
    for grid in &grids {
        mean += grid.as_ref().expect("every slot filled");
    }
    mean /= samples as f64;

    out.write("saliency.csv", &grid_to_csv(&mean))?;
    let (pgm, range) = grid_to_pgm(&mean);
    out.write("saliency.pgm", &pgm)?;
    out.write("saliency.svg", &grid_to_svg(&mean))?;
    let sidecar = serde_json::to_string_pretty(&range).map_err(CoreError::from)?;
    out.write("saliency_range.json", &(sidecar + "\n"))?;
    eprintln!("wrote {}", out.dir()?.display());
    Ok(())
}

fn cmd_chair(fixtures: &Path) -> Result<(), Failure> {
    let batch = read_annotations_file(fixtures)
        .map_err(|e| Failure { code: 1, message: format!("{}: {e}", fixtures.display()) })?;
    let object = chair_object_ratio(&batch)?;
    let caption = chair_caption_ratio(&batch)?;
    println!("object_ratio={object:.4}");
    println!("caption_ratio={caption:.4}");
    Ok(())
}

fn cmd_compare(left: &Path, right: &Path) -> Result<(), Failure> {
    let load = |path: &Path| -> Result<RegionReport, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("report {}: {e}", path.display())))?;
        Ok(RegionReport::from_json(&text)?)
    };
    let l = load(left)?;
    let r = load(right)?;
    for (name, rep) in [("left", &l), ("right", &r)] {
        println!(
            "{name}: scheme={} seed={} overall={:.4} spread={:.4}",
            rep.scheme, rep.seed, rep.overall_accuracy, rep.accuracy_spread
        );
    }
    let verdict = if l.accuracy_spread < r.accuracy_spread {
        "left"
    } else if r.accuracy_spread < l.accuracy_spread {
        "right"
    } else {
        "equal"
    };
    println!("smaller_spread={verdict}");
    Ok(())
}
