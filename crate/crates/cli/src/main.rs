mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use nvforecast::baselines::Baseline;
use nvforecast::metrics::MetricsReport;
use nvforecast::models::{Modalities, Model, ModelInput};
use nvforecast::pipeline::{
    filter_segments, init_model, model_window, noisy_path, predict_segments, score, split_path, train_with, Dataset,
    ModelPredictor, Predictor, RunManifest, Segment, SegmentReport, Source, OBS_LEN,
};
use nvforecast::io::sha256_file;
use nvforecast::synthgen::make_dataset;
use nvforecast::{Error, Result};

use config::{key_help, RunConfig};

#[derive(Parser)]
#[command(name = "nvforecast", version, about = "Forecast non-verbal behaviour in dyadic conversations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file: a JSON object or key = value lines
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        sessions: Option<usize>,
        /// Frames per session
        #[arg(long)]
        length: Option<usize>,
        /// Also write audio and transcript features
        #[arg(long)]
        modalities: bool,
        /// Dataset directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on the train split with early stopping on val
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        fusion: Option<String>,
        /// Frames per forward pass
        #[arg(long, value_parser = ["10", "50"])]
        horizon: Option<String>,
        /// Observed frames fed to the model
        #[arg(long, value_parser = ["100", "10", "5", "2"])]
        obs_frames: Option<String>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Score baselines and checkpoints on a split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// zero-velocity, linear-prop, rto-mean or rto-mean-l; all four when
        /// neither baselines nor checkpoints are given
        #[arg(long)]
        baseline: Vec<String>,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Observe the raw annotations instead of the cleaned ones
        #[arg(long)]
        noisy: bool,
        /// Keep the first N predicted frames and hold frame N afterwards
        #[arg(long, value_name = "N")]
        freeze_after: Option<usize>,
        /// Also score every freeze point from 0 to the prediction length
        #[arg(long)]
        sweep_freeze: bool,
        #[arg(long, value_parser = ["100", "10", "5", "2"])]
        obs_frames: Option<String>,
    },
    /// Attention received by each observed frame
    Attention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Unsupported(_) => 1,
        Error::Numeric(_) | Error::Diff(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let help = key_help();
    let cmd = Cli::command()
        .after_long_help(help.clone())
        .mut_subcommands(|c| c.after_long_help(help.clone()));
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.merge_file(path)?;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    Ok(cfg)
}

fn path_flag(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            common,
            preset,
            sessions,
            length,
            modalities,
            out,
        } => {
            let mut cfg = resolve(
                &common,
                &[
                    ("preset", preset),
                    ("sessions", sessions.map(|s| s.to_string())),
                    ("length", length.map(|s| s.to_string())),
                    ("out_dir", path_flag(&out)),
                ],
            )?;
            cfg.synth_modalities |= modalities;
            cmd_synth(&cfg)
        }
        Command::Train {
            common,
            data,
            out,
            arch,
            fusion,
            horizon,
            obs_frames,
            max_epochs,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("data_dir", path_flag(&data)),
                    ("out_dir", path_flag(&out)),
                    ("arch", arch),
                    ("fusion", fusion),
                    ("horizon", horizon),
                    ("obs_frames", obs_frames),
                    ("max_epochs", max_epochs.map(|s| s.to_string())),
                ],
            )?;
            cmd_train(&cfg)
        }
        Command::Eval {
            common,
            data,
            split,
            out,
            baseline,
            checkpoint,
            noisy,
            freeze_after,
            sweep_freeze,
            obs_frames,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("data_dir", path_flag(&data)),
                    ("split", split),
                    ("out_dir", path_flag(&out)),
                    ("obs_frames", obs_frames),
                ],
            )?;
            let opts = EvalOptions {
                baselines: baseline.iter().map(|b| Baseline::parse(b)).collect::<Result<_>>()?,
                checkpoints: checkpoint,
                noisy,
                freeze_after,
                sweep_freeze,
            };
            cmd_eval(&cfg, &opts)
        }
        Command::Attention {
            common,
            data,
            split,
            checkpoint,
            out,
        } => {
            let cfg = resolve(
                &common,
                &[("data_dir", path_flag(&data)), ("split", split), ("out_dir", path_flag(&out))],
            )?;
            cmd_attention(&cfg, &checkpoint)
        }
    }
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let manifest = make_dataset(&cfg.dataset_spec(), &cfg.out_dir)?;
    let path = cfg.out_dir.join("manifest.json");
    eprintln!(
        "wrote {} sessions ({} files)",
        manifest.splits.values().map(Vec::len).sum::<usize>(),
        manifest.files.len()
    );
    println!("{}", path.display());
    Ok(())
}

fn manifest(command: &str, cfg: &RunConfig) -> RunManifest {
    RunManifest {
        command: command.into(),
        seed: cfg.seed,
        config: cfg.to_json(),
        ..RunManifest::default()
    }
}

fn record_input(m: &mut RunManifest, path: &Path) -> Result<()> {
    m.inputs.insert(path.display().to_string(), sha256_file(path)?);
    Ok(())
}

fn write_output(m: &mut RunManifest, dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    m.outputs.insert(name.into(), sha256_file(&path)?);
    Ok(())
}

fn finish(m: &RunManifest, dir: &Path) -> Result<()> {
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(m)? + "\n")?;
    println!("{}", path.display());
    Ok(())
}

/// Segments of one split, observed over the last `obs_frames` frames.
fn load_segments(cfg: &RunConfig, split: &str, modalities: &Modalities, noisy: bool, m: &mut RunManifest) -> Result<Vec<Segment>> {
    let ds = Dataset::load(&cfg.data_dir, split, modalities)?;
    record_input(m, &split_path(&cfg.data_dir, split))?;
    if noisy {
        if ds.noisy.is_none() {
            return Err(Error::Data(format!("split `{split}` has no raw annotations")));
        }
        record_input(m, &noisy_path(&cfg.data_dir, split))?;
    }
    let mut segs = ds.segments(OBS_LEN, cfg.pred_len, cfg.stride, modalities)?;
    if cfg.filter_hands {
        let (kept, report) = filter_segments(segs);
        eprintln!("{split}: dropped {} of {} segments with reappearing hands", report.dropped, report.total);
        segs = kept;
    }
    if cfg.obs_frames < OBS_LEN {
        let cut = OBS_LEN - cfg.obs_frames;
        for s in &mut segs {
            s.obs.drain(..cut);
            if let Some(n) = &mut s.noisy_obs {
                n.drain(..cut);
            }
        }
    }
    if segs.is_empty() {
        return Err(Error::NoData(format!("split `{split}` yields no segments")));
    }
    Ok(segs)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let mc = cfg.model_config()?;
    let tc = cfg.train_config();
    let mut m = manifest("train", cfg);
    let mut full = cfg.clone();
    full.obs_frames = OBS_LEN;
    let train = load_segments(&full, "train", &mc.modalities, false, &mut m)?;
    let val = load_segments(&full, "val", &mc.modalities, false, &mut m)?;
    let model = init_model(&mc, &train)?;
    eprintln!(
        "{} {}: {} parameters, {} train / {} val segments",
        mc.arch.name(),
        mc.fusion.name(),
        model.num_parameters(),
        train.len(),
        val.len()
    );
    let outcome = train_with(model, &train, &val, &tc, |e| {
        eprintln!("epoch {:>3}  train {:.6}  val {:.6}", e.epoch, e.train_loss, e.val_loss)
    })?;
    eprintln!("best epoch {} with validation loss {:.6}", outcome.best_epoch, outcome.best_val);
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_output(&mut m, &cfg.out_dir, "model.json", outcome.model.to_json()?.as_bytes())?;
    write_output(&mut m, &cfg.out_dir, "history.csv", outcome.history.to_csv().as_bytes())?;
    finish(&m, &cfg.out_dir)
}

struct EvalOptions {
    baselines: Vec<Baseline>,
    checkpoints: Vec<PathBuf>,
    noisy: bool,
    freeze_after: Option<usize>,
    sweep_freeze: bool,
}

fn cmd_eval(cfg: &RunConfig, opts: &EvalOptions) -> Result<()> {
    let mut m = manifest("eval", cfg);
    let mut predictors: Vec<(Box<dyn Predictor>, Modalities)> = Vec::new();
    let mut baselines = opts.baselines.clone();
    if baselines.is_empty() && opts.checkpoints.is_empty() {
        baselines = Baseline::ALL.to_vec();
    }
    for b in baselines {
        predictors.push((Box::new(b), Modalities::default()));
    }
    for path in &opts.checkpoints {
        let model = Model::load(path)?;
        record_input(&mut m, path)?;
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let label = format!("{}:{label}", model.config.arch.name());
        let mods = model.config.modalities;
        predictors.push((Box::new(ModelPredictor::new(model, label)), mods));
    }

    let source = if opts.noisy { Source::Noisy } else { Source::Clean };
    let mut cache: Vec<(Modalities, Vec<Segment>)> = Vec::new();
    let mut metrics_csv = MetricsReport::csv_header() + "\n";
    let mut sweep_csv = String::new();
    if opts.sweep_freeze {
        let header = MetricsReport::csv_header();
        let rest = header.split_once(',').map(|x| x.1).unwrap_or("");
        sweep_csv = format!("model,freeze_after,{rest}\n");
    }
    let mut per_segment: BTreeMap<String, Vec<SegmentReport>> = BTreeMap::new();
    for (p, mods) in &predictors {
        if !cache.iter().any(|(k, _)| k == mods) {
            let segs = load_segments(cfg, &cfg.split, mods, opts.noisy, &mut m)?;
            cache.push((*mods, segs));
        }
        let segs = &cache.iter().find(|(k, _)| k == mods).expect("cached").1;
        let preds = predict_segments(p.as_ref(), segs, source)?;
        let mut label = p.name();
        if let Some(n) = opts.freeze_after {
            label = format!("{label}+freeze{n}");
        }
        let eval = score(&label, segs, &preds, opts.freeze_after)?;
        metrics_csv += &(eval.report.csv_row(&label) + "\n");
        eprintln!("{label}: mpjpe {}", eval.report.all.mpjpe.map(|x| format!("{x:.4}")).unwrap_or_default());
        if opts.sweep_freeze {
            for n in 0..=cfg.pred_len {
                let row = score(&p.name(), segs, &preds, Some(n))?.report.csv_row(&p.name());
                let (name, rest) = row.split_once(',').unwrap_or((&row, ""));
                sweep_csv += &format!("{name},{n},{rest}\n");
            }
        }
        m.metrics.insert(label.clone(), eval.report);
        per_segment.insert(label, eval.segments);
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_output(&mut m, &cfg.out_dir, "metrics.csv", metrics_csv.as_bytes())?;
    write_output(&mut m, &cfg.out_dir, "segments.json", serde_json::to_string(&per_segment)?.as_bytes())?;
    if opts.sweep_freeze {
        write_output(&mut m, &cfg.out_dir, "freeze_sweep.csv", sweep_csv.as_bytes())?;
    }
    finish(&m, &cfg.out_dir)
}

fn cmd_attention(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let mut m = manifest("attention", cfg);
    let model = Model::load(checkpoint)?;
    record_input(&mut m, checkpoint)?;
    if !model.config.arch.is_transformer() {
        return Err(Error::Unsupported(format!("{} has no temporal attention", model.config.arch.name())));
    }
    let segs = load_segments(cfg, &cfg.split, &model.config.modalities, false, &mut m)?;
    let dyadic = model.config.fusion.is_dyadic();
    let units: Vec<Vec<usize>> = if dyadic {
        let mut u = Vec::new();
        for (i, s) in segs.iter().enumerate() {
            match s.partner {
                Some(j) if j > i => u.push(vec![i, j]),
                Some(_) => {}
                None => return Err(Error::Data(format!("{}/{} has no partner segment", s.session_id, s.participant_id))),
            }
        }
        u
    } else {
        (0..segs.len()).map(|i| vec![i]).collect()
    };
    let mut profiles: Vec<Option<Vec<f64>>> = vec![None; segs.len()];
    for chunk in units.chunks(32) {
        let idx: Vec<usize> = chunk.iter().flatten().copied().collect();
        let inputs: Vec<ModelInput> = idx
            .iter()
            .map(|&i| {
                let w = model_window(&model.config, &segs[i].obs, &segs[i].extras)?;
                ModelInput::new(&w, &model.normalizer)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&ModelInput> = inputs.iter().collect();
        let partner: Vec<usize> = (0..idx.len()).map(|k| if dyadic { k ^ 1 } else { k }).collect();
        let out = model.attention_profile(&refs, dyadic.then_some(partner.as_slice()))?;
        for (i, p) in idx.into_iter().zip(out) {
            profiles[i] = Some(p);
        }
    }
    let t = model.config.obs_len;
    let mut mean = vec![0.0; t];
    let profiles: Vec<Vec<f64>> = profiles.into_iter().flatten().collect();
    for p in &profiles {
        for (a, b) in mean.iter_mut().zip(p) {
            *a += b / profiles.len() as f64;
        }
    }
    let cells = |p: &[f64]| p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let frames: Vec<String> = (0..t).map(|i| format!("f{i}")).collect();
    let mut csv = format!("sample,session_id,participant_id,start,{}\n", frames.join(","));
    csv += &format!("mean,,,,{}\n", cells(&mean));
    for (k, (s, p)) in segs.iter().zip(&profiles).enumerate() {
        csv += &format!("{k},{},{},{},{}\n", s.session_id, s.participant_id, s.start, cells(p));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_output(&mut m, &cfg.out_dir, "attention.csv", csv.as_bytes())?;
    finish(&m, &cfg.out_dir)
}
