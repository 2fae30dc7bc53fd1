use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use adjscc::codec::{count_parameters, Side};
use adjscc::data::{load_cifar10_binary, load_image_dir, Split};
use adjscc::evaluation::{
    attention_csv, attention_stats, ensemble_eval, mismatch_csv, mismatch_grid, storage_csv,
    storage_report, sweep, sweep_csv, CsvPreamble,
};
use adjscc::training::{
    final_meta, load_checkpoint, save_checkpoint, train_with, EpochRecord, TrainLog,
};
use adjscc::{Dataset, EvalConfig, Model, TrainConfig};

use crate::config::{ConfigError, DataKind, Experiment, Needs};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<adjscc::Error> for CliError {
    fn from(e: adjscc::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Options shared by every subcommand.
pub struct Run {
    pub exp: Experiment,
    pub timestamp: bool,
}

impl Run {
    fn preamble(&self, psnr: bool) -> CsvPreamble {
        CsvPreamble {
            timestamp: self.timestamp.then(|| {
                let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
                format!("unix={secs}")
            }),
            max_pixel: psnr.then_some(self.exp.config.eval.max_pixel),
        }
    }

    fn eval_config(&self) -> EvalConfig {
        let e = &self.exp.config.eval;
        EvalConfig {
            snr_test_list: e.snr_list.clone(),
            repeats: e.repeats,
            seed: e.seed,
            max_pixel: e.max_pixel,
            max_images: e.max_images,
            attention_side: if e.attention_side == "decoder" { Side::Decoder } else { Side::Encoder },
            ..EvalConfig::default()
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        let dir = &self.exp.out_dir;
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out_dir()?.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn load_data(&self, sources: Vec<PathBuf>, split: Split) -> Result<Dataset> {
        let crop = self.exp.config.data.crop;
        let data = match self.exp.config.data.kind {
            DataKind::Cifar10 => {
                let d = load_cifar10_binary(&sources)?.with_split(split);
                match crop {
                    Some(c) => d.with_crop(c)?,
                    None => d,
                }
            }
            DataKind::ImageDir => {
                let side = self.exp.image_side;
                let stride = self.exp.arch.total_stride();
                let mut images = Vec::new();
                for dir in &sources {
                    images.extend_from_slice(load_image_dir(dir, side, stride)?.images());
                }
                let label = sources.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
                Dataset::new(images, split, format!("dir:{label}")).with_crop(side)?
            }
        };
        data.ensure_nonempty()?;
        log::info!("loaded {} images from {}", data.len(), data.provenance());
        Ok(data)
    }

    fn test_data(&self) -> Result<Dataset> {
        let sources = self.exp.test_sources()?;
        self.load_data(sources, Split::Test)
    }
}

fn model_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(load_checkpoint(path)?.into_model()?)
}

pub fn train(run: &Run) -> Result<()> {
    run.exp.check_paths(Needs::TrainData, &[])?;
    let t = &run.exp.config.train;
    let mut data = run.load_data(run.exp.train_sources()?, Split::Train)?;
    if let Some(n) = t.max_images {
        data = data.take(n);
    }
    let out = run.out_dir()?.to_path_buf();
    let cfg = TrainConfig {
        snr_dist: run.exp.snr_dist,
        learning_rate: t.lr,
        batch_size: t.batch,
        epochs: t.epochs,
        seed: t.seed,
        bandwidth_ratio: Some(run.exp.ratio),
        arch_preset: run.exp.config.model.arch_preset.clone(),
        snr_draw: run.exp.snr_draw,
        noiseless: t.noiseless,
        checkpoint: run.exp.cadence,
        checkpoint_dir: Some(out.join("checkpoints")),
        ..TrainConfig::default()
    };
    fs::create_dir_all(out.join("checkpoints"))
        .map_err(|e| CliError::Runtime(format!("creating checkpoint directory: {e}")))?;
    let log_path = out.join("train_log.csv");
    if log_path.exists() {
        fs::remove_file(&log_path).map_err(|e| CliError::Runtime(format!("{}: {e}", log_path.display())))?;
    }
    let model = Model::<f32>::init(run.exp.arch.clone(), t.seed)?;
    log::info!(
        "training {} ({} parameters, c={}) on {} images for {} epochs",
        if run.exp.arch.use_attention { "ADJSCC" } else { "BDJSCC" },
        model.parameter_count(),
        run.exp.arch.output_channels,
        data.len(),
        t.epochs
    );
    let mut append_err = None;
    let (model, log) = train_with(model, &data, &cfg, |rec: &EpochRecord| {
        if append_err.is_none() {
            append_err = TrainLog::append_csv(&log_path, rec, run.timestamp).err();
        }
    })?;
    if let Some(e) = append_err {
        return Err(e.into());
    }
    let final_path = out.join("final.ckpt");
    save_checkpoint(&final_path, &model, &final_meta(&cfg, &log))?;
    log::info!("wrote {} and {}", final_path.display(), log_path.display());
    Ok(())
}

pub fn sweep_cmd(run: &Run, checkpoints: &[PathBuf]) -> Result<()> {
    run.exp.check_paths(Needs::TestData, checkpoints)?;
    let data = run.test_data()?;
    let cfg = run.eval_config();
    let mut rows = Vec::new();
    for path in checkpoints {
        let model = load_model(path)?;
        let id = model_id(path);
        log::info!("sweeping {id} over {} SNRs", cfg.snr_test_list.len());
        rows.extend(sweep(&model, &data, &cfg, &id)?.rows);
    }
    run.write("sweep.csv", &sweep_csv(&rows, &run.preamble(true)))?;
    Ok(())
}

pub fn mismatch_cmd(run: &Run, checkpoint: &Path) -> Result<()> {
    let grid = run
        .exp
        .config
        .eval
        .mismatch_grid
        .as_ref()
        .ok_or_else(|| run.exp.error("eval", "mismatch_grid", "required by the mismatch command"))?;
    run.exp.check_paths(Needs::TestData, &[checkpoint.to_path_buf()])?;
    let data = run.test_data()?;
    let model = load_model(checkpoint)?;
    let id = model_id(checkpoint);
    let rows = mismatch_grid(&model, &data, &grid.snr_fb, &grid.snr_true, &run.eval_config(), &id)?;
    run.write(&format!("mismatch_{id}.csv"), &mismatch_csv(&rows, &run.preamble(true)))?;
    Ok(())
}

pub fn attention_cmd(run: &Run, checkpoint: &Path) -> Result<()> {
    run.exp.check_paths(Needs::TestData, &[checkpoint.to_path_buf()])?;
    let model = load_model(checkpoint)?;
    if !model.has_attention() {
        return Err(adjscc::Error::NoAttentionModules.into());
    }
    let data = run.test_data()?;
    let cfg = run.eval_config();
    let stats = cfg
        .snr_test_list
        .iter()
        .map(|&snr| attention_stats(&model, &data, snr, &cfg))
        .collect::<adjscc::Result<Vec<_>>>()?;
    let id = model_id(checkpoint);
    run.write(&format!("attention_{id}.csv"), &attention_csv(&stats, &run.preamble(false)))?;
    Ok(())
}

pub fn report_cmd(run: &Run, checkpoints: &[PathBuf]) -> Result<()> {
    let groups = &run.exp.config.report.group;
    if checkpoints.is_empty() && groups.is_empty() {
        return Err(run.exp.bare_error("report needs checkpoints or [[report.group]] entries").into());
    }
    let group_paths: Vec<Vec<PathBuf>> = groups
        .iter()
        .map(|g| g.checkpoints.iter().map(|p| run.exp.resolve(p)).collect())
        .collect();
    let all: Vec<PathBuf> = checkpoints.iter().chain(group_paths.iter().flatten()).cloned().collect();
    let needs = if groups.is_empty() { Needs::Nothing } else { Needs::TestData };
    run.exp.check_paths(needs, &all)?;

    let mut strategies = Vec::new();
    for path in checkpoints {
        let model = load_model(path)?;
        strategies.push((model_id(path), count_parameters(model.params()) as u64, 1));
    }
    let mut ensemble_rows = Vec::new();
    if !groups.is_empty() {
        let data = run.test_data()?;
        let cfg = run.eval_config();
        for (g, paths) in groups.iter().zip(&group_paths) {
            let mut members = Vec::new();
            for p in paths {
                let ck = load_checkpoint(p)?;
                let snr = ck.meta.snr_dist.fixed_value().ok_or_else(|| {
                    CliError::Runtime(format!(
                        "group '{}': {} was trained with {}, not a fixed SNR",
                        g.name,
                        p.display(),
                        ck.meta.snr_dist
                    ))
                })?;
                members.push((snr, ck.into_model()?));
            }
            let count = count_parameters(members[0].1.params()) as u64;
            if members.iter().any(|(_, m)| count_parameters(m.params()) as u64 != count) {
                return Err(CliError::Runtime(format!(
                    "group '{}': members have different parameter counts",
                    g.name
                )));
            }
            strategies.push((g.name.clone(), count, members.len() as u64));
            let refs: Vec<(f64, &Model<f32>)> = members.iter().map(|(s, m)| (*s, m)).collect();
            ensemble_rows.extend(ensemble_eval(&refs, &data, &cfg, &g.name)?.rows);
        }
    }
    let rows = storage_report(&strategies);
    for r in &rows {
        log::info!("{}: {} parameters, {} MB", r.strategy, r.param_count, r.mb_display());
    }
    run.write("storage.csv", &storage_csv(&rows, &run.preamble(false)))?;
    if !ensemble_rows.is_empty() {
        run.write("ensemble.csv", &sweep_csv(&ensemble_rows, &run.preamble(true)))?;
    }
    Ok(())
}
