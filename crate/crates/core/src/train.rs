//! Cross-learning training and pool construction.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{make_windows, split, SplitSpec, StratifiedSampler, TimeSeries, Window};
use crate::error::{Error, Result};
use crate::loss::{row_variance, LossBreakdown};
use crate::model::{stack_rows, ModelConfig, NBeats};
use crate::nn::{adam_step, AdamState, Checkpoint, ParamStore};
use crate::seed::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub pool_size: usize,
    /// Master seed; member seeds are derived from it.
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 20,
            batches_per_epoch: 100,
            batch_size: 256,
            lr: 0.001,
            pool_size: 16,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("epochs", self.epochs),
            ("batches_per_epoch", self.batches_per_epoch),
            ("batch_size", self.batch_size),
            ("pool_size", self.pool_size),
        ] {
            if v < 1 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("{} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn member_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, stream::MEMBER, index as u64)
    }
}

/// Short stable digest of the model configuration and schedule.
pub fn config_hash(config: &ModelConfig, schedule: &TrainSchedule) -> String {
    let text = serde_json::to_string(&(config, schedule)).expect("config serialises");
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

/// Training windows grouped per series.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub series_ids: Vec<String>,
    pub groups: Vec<Vec<Window>>,
}

impl TrainingData {
    /// Windows from each series' training region under `split_spec`
    /// (pass [`SplitSpec::merged`] to train on train + validation).
    pub fn from_series(series: &[TimeSeries], split_spec: &SplitSpec, lookback: usize, horizon: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(series.len());
        let mut groups = Vec::with_capacity(series.len());
        for s in series {
            let sp = split(s, split_spec, lookback, horizon)?;
            let windows = make_windows(s, sp.train, lookback, horizon);
            for w in &windows {
                // leakage guard: targets must end before the held-out blocks
                assert!(
                    w.anchor + horizon < sp.train.end,
                    "window target of '{}' at {} crosses the training boundary",
                    s.id,
                    w.anchor
                );
                debug_assert_eq!(w.x.as_slice(), &s.values[w.anchor + 1 - lookback..=w.anchor]);
            }
            ids.push(s.id.clone());
            groups.push(windows);
        }
        Ok(Self { series_ids: ids, groups })
    }

    pub fn from_groups(groups: Vec<Vec<Window>>) -> Self {
        let series_ids = groups
            .iter()
            .enumerate()
            .map(|(i, g)| g.first().map_or_else(|| format!("#{i}"), |w| w.series_id.clone()))
            .collect();
        Self { series_ids, groups }
    }

    pub fn num_windows(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    fn check_targets(&self, needs_variance: bool) -> Result<()> {
        if self.num_windows() == 0 {
            return Err(Error::NoWindows);
        }
        if !needs_variance {
            return Ok(());
        }
        for w in self.groups.iter().flatten() {
            if !(row_variance(ndarray::ArrayView1::from(&w.y)) > 0.0) {
                return Err(Error::InvalidSeries {
                    series: w.series_id.clone(),
                    position: format!("window anchor {}", w.anchor),
                    rule: "constant target window has zero variance".into(),
                });
            }
        }
        Ok(())
    }
}

/// Loss components logged during training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub first_step: LossBreakdown,
    /// Mean over the batches of each epoch.
    pub epochs: Vec<LossBreakdown>,
}

impl LossTrace {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.total)
    }
}

#[derive(Clone, Debug)]
pub struct TrainedMember {
    pub index: usize,
    pub seed: u64,
    pub config_hash: String,
    pub params: ParamStore,
    pub trace: LossTrace,
}

impl TrainedMember {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(&self.params, &self.config_hash, self.seed)
    }

    pub fn model(&self, config: &ModelConfig) -> Result<NBeats> {
        NBeats::from_checkpoint(config.clone(), &self.checkpoint())
    }
}

fn batch_matrices(batch: &[&Window], lookback: usize, horizon: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let x = stack_rows(batch.iter().map(|w| w.x.as_slice()), lookback)?;
    let y = stack_rows(batch.iter().map(|w| w.y.as_slice()), horizon)?;
    Ok((x, y))
}

/// Train one model for `epochs * batches_per_epoch` Adam steps on batches
/// drawn from the stratified sampler.
pub fn train_one(
    data: &TrainingData,
    config: &ModelConfig,
    schedule: &TrainSchedule,
    member_seed: u64,
) -> Result<TrainedMember> {
    config.validate()?;
    schedule.validate()?;
    data.check_targets(config.loss_config().needs_variance())?;

    let hash = config_hash(config, schedule);
    let mut model = NBeats::new(config.clone(), derive_seed(member_seed, stream::INIT, 0))?;
    let mut sampler = StratifiedSampler::new(&data.groups, derive_seed(member_seed, stream::SAMPLER, 0))?;
    let mut adam = AdamState::new(&model.params, schedule.lr);
    let mut trace = LossTrace::default();

    for epoch in 0..schedule.epochs {
        let mut acc = LossBreakdown::default();
        for b in 0..schedule.batches_per_epoch {
            let batch = sampler.batch(schedule.batch_size);
            let (x, y) = batch_matrices(&batch, config.lookback, config.horizon)?;
            let (mut tape, loss, parts) = model.record_loss(&model.params, &x, &y)?;
            if !parts.total.is_finite() {
                let mut ids: Vec<&str> = batch.iter().map(|w| w.series_id.as_str()).collect();
                ids.sort_unstable();
                ids.dedup();
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    series: ids.join(","),
                });
            }
            if epoch == 0 && b == 0 {
                trace.first_step = parts;
            }
            acc.pmape += parts.pmape;
            acc.nmse_term += parts.nmse_term;
            acc.total += parts.total;
            let grads = tape.backward(loss, &model.params)?;
            adam_step(&mut model.params, &grads, &mut adam)?;
        }
        let n = schedule.batches_per_epoch as f64;
        trace.epochs.push(LossBreakdown {
            pmape: acc.pmape / n,
            nmse_term: acc.nmse_term / n,
            total: acc.total / n,
        });
        log::debug!("member {member_seed:#x} epoch {epoch}: loss {:.6}", acc.total / n);
    }

    Ok(TrainedMember {
        index: 0,
        seed: member_seed,
        config_hash: hash,
        params: model.params,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub index: usize,
    pub seed: u64,
    /// Relative to the manifest directory.
    pub checkpoint: String,
    pub final_loss: f64,
    pub trace: LossTrace,
}

pub const MANIFEST_FORMAT: &str = "nbeats-star-pool";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub format: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub members: Vec<MemberRecord>,
}

#[derive(Clone, Debug)]
pub struct Pool {
    pub config: ModelConfig,
    pub schedule: TrainSchedule,
    pub config_hash: String,
    pub members: Vec<TrainedMember>,
}

fn checkpoint_name(index: usize) -> String {
    format!("member_{index:04}.ckpt.json")
}

fn trace_name(index: usize) -> String {
    format!("member_{index:04}.trace.json")
}

pub const MANIFEST_FILE: &str = "pool.json";

impl Pool {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn models(&self) -> Result<Vec<NBeats>> {
        self.members.iter().map(|m| m.model(&self.config)).collect()
    }

    pub fn manifest(&self) -> PoolManifest {
        PoolManifest {
            format: MANIFEST_FORMAT.into(),
            config_hash: self.config_hash.clone(),
            master_seed: self.schedule.seed,
            model: self.config.clone(),
            schedule: self.schedule.clone(),
            members: self
                .members
                .iter()
                .map(|m| MemberRecord {
                    index: m.index,
                    seed: m.seed,
                    checkpoint: checkpoint_name(m.index),
                    final_loss: m.trace.final_loss(),
                    trace: m.trace.clone(),
                })
                .collect(),
        }
    }

    /// Write checkpoints and `pool.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for m in &self.members {
            m.checkpoint().save(&dir.join(checkpoint_name(m.index)))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: PoolManifest = serde_json::from_str(&text)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Checkpoint(format!("unknown manifest format '{}'", manifest.format)));
        }
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut members = Vec::with_capacity(manifest.members.len());
        for rec in &manifest.members {
            let ck = Checkpoint::load(&dir.join(&rec.checkpoint))?;
            if ck.config_hash != manifest.config_hash || ck.seed != rec.seed {
                return Err(Error::Checkpoint(format!("{} does not belong to this pool", rec.checkpoint)));
            }
            let mut model = NBeats::new(manifest.model.clone(), 0)?;
            ck.restore_into(&mut model.params)?;
            members.push(TrainedMember {
                index: rec.index,
                seed: rec.seed,
                config_hash: ck.config_hash,
                params: model.params,
                trace: rec.trace.clone(),
            });
        }
        Ok(Self {
            config: manifest.model,
            schedule: manifest.schedule,
            config_hash: manifest.config_hash,
            members,
        })
    }
}

fn try_resume(dir: &Path, index: usize, seed: u64, hash: &str, config: &ModelConfig) -> Option<TrainedMember> {
    let ck = Checkpoint::load(&dir.join(checkpoint_name(index))).ok()?;
    if ck.config_hash != hash || ck.seed != seed {
        return None;
    }
    let text = std::fs::read_to_string(dir.join(trace_name(index))).ok()?;
    let trace: LossTrace = serde_json::from_str(&text).ok()?;
    let mut model = NBeats::new(config.clone(), 0).ok()?;
    ck.restore_into(&mut model.params).ok()?;
    Some(TrainedMember {
        index,
        seed,
        config_hash: ck.config_hash,
        params: model.params,
        trace,
    })
}

/// Train `schedule.pool_size` members with seeds derived from the master
/// seed. Members train in parallel. With `out_dir`, every finished member is
/// checkpointed immediately and members already checkpointed there (same
/// config hash and seed) are reused, so an interrupted pool can resume.
pub fn build_pool(
    data: &TrainingData,
    config: &ModelConfig,
    schedule: &TrainSchedule,
    out_dir: Option<&Path>,
) -> Result<Pool> {
    config.validate()?;
    schedule.validate()?;
    let hash = config_hash(config, schedule);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let members = (0..schedule.pool_size)
        .into_par_iter()
        .map(|index| -> Result<TrainedMember> {
            let seed = schedule.member_seed(index);
            if let Some(dir) = out_dir {
                if let Some(m) = try_resume(dir, index, seed, &hash, config) {
                    log::info!("member {index}: resumed from checkpoint");
                    return Ok(m);
                }
            }
            let mut member = train_one(data, config, schedule, seed)?;
            member.index = index;
            log::info!("member {index}: final loss {:.6}", member.trace.final_loss());
            if let Some(dir) = out_dir {
                member.checkpoint().save(&dir.join(checkpoint_name(index)))?;
                let path = dir.join(trace_name(index));
                std::fs::write(&path, serde_json::to_string(&member.trace)?).map_err(|e| Error::io(&path, e))?;
            }
            Ok(member)
        })
        .collect::<Result<Vec<_>>>()?;

    let pool = Pool {
        config: config.clone(),
        schedule: schedule.clone(),
        config_hash: hash,
        members,
    };
    if let Some(dir) = out_dir {
        pool.save(dir)?;
    }
    Ok(pool)
}
