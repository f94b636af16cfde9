use crate::dsp::Stft;
use crate::io::{Checkpoint, IoError, RunConfig, TrainMeta};
use crate::models::{EnhancerSet, Separator};
use crate::training::{
    aligned_example, fit, segment_songs, EnhancerObjective, Example, SeparatorObjective, Song, SourcePool,
    TrainMode, TrainReport,
};

/// Training pool and fixed validation examples cut from `songs`.
pub fn prepare_data(cfg: &RunConfig, songs: &[Song]) -> Result<(SourcePool, Vec<Example<f32>>), IoError> {
    let rate = songs
        .first()
        .ok_or_else(|| IoError::Data("no songs to train on".into()))?
        .stems[0]
        .sample_rate;
    if let Some(s) = songs.iter().find(|s| s.stems.len() != cfg.sources.len()) {
        return Err(IoError::Data(format!(
            "song `{}` has {} stems, configuration names {}",
            s.name,
            s.stems.len(),
            cfg.sources.len()
        )));
    }
    let seg = segment_songs(songs, cfg.clip_len(rate), cfg.train_ratio, cfg.train.seed)?;
    log::info!(
        "{} training songs, {} validation songs, {} training clips per source",
        seg.train_songs.len(),
        seg.validation_songs.len(),
        seg.pool.clips(0).len()
    );
    let stft = Stft::new(cfg.stft);
    let validation = seg
        .validation
        .iter()
        .map(|group| aligned_example(&stft, &group.iter().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((seg.pool, validation))
}

/// Trains a separator (plain or residual, per `train.mode`) from scratch.
pub fn train_separator(cfg: &RunConfig, songs: &[Song]) -> Result<(Checkpoint<f32>, TrainReport), IoError> {
    cfg.validate()?;
    let residual = cfg.model.residual.is_some();
    match cfg.train.mode {
        TrainMode::Enhancer => {
            return Err(IoError::Config("train.mode=enhancer needs a trained separator checkpoint".into()))
        }
        TrainMode::Residual if !residual => {
            return Err(IoError::Config("train.mode=residual needs model.residual_iterations >= 1".into()))
        }
        TrainMode::Separator if residual => {
            return Err(IoError::Config("model.residual_iterations is set; use train.mode=residual".into()))
        }
        _ => {}
    }
    let (pool, validation) = prepare_data(cfg, songs)?;
    let model = Separator::new(cfg.model.clone(), cfg.train.seed)?;
    log::info!("separator with {} parameters", model.num_params());
    let mut objective = SeparatorObjective::new(model, cfg.train.adam);
    let report = fit(&mut objective, &pool, &validation, &Stft::new(cfg.stft), &cfg.train)?;
    let mut ckpt = Checkpoint::new(cfg.clone(), objective.model);
    ckpt.separator_adam = Some(objective.adam);
    ckpt.meta = TrainMeta {
        seed: cfg.train.seed,
        step: report.steps,
        best_validation: report.best_validation,
    };
    Ok((ckpt, report))
}

/// Trains one enhancer per source on top of the checkpoint's frozen
/// separator, using the training settings in `train`.
pub fn train_enhancers(
    ckpt: Checkpoint<f32>,
    train: &crate::training::TrainConfig,
    songs: &[Song],
) -> Result<(Checkpoint<f32>, TrainReport), IoError> {
    let mut cfg = ckpt.config.clone();
    cfg.train = train.clone();
    cfg.train.mode = TrainMode::Enhancer;
    cfg.validate()?;
    let (pool, validation) = prepare_data(&cfg, songs)?;
    let enhancers = EnhancerSet::new(&cfg.model, cfg.train.seed)?;
    let mut objective = EnhancerObjective::new(ckpt.separator, enhancers, cfg.train.adam);
    let report = fit(&mut objective, &pool, &validation, &Stft::new(cfg.stft), &cfg.train)?;
    let mut separator = objective.separator;
    separator.store_mut().set_frozen(false);
    let out = Checkpoint {
        config: cfg,
        separator,
        separator_adam: ckpt.separator_adam,
        enhancers: Some(objective.enhancers),
        enhancer_adam: objective.adam,
        meta: TrainMeta {
            seed: train.seed,
            step: ckpt.meta.step + report.steps,
            best_validation: report.best_validation,
        },
    };
    Ok((out, report))
}
