//! Batch commands behind the `nbeats-star` binary. Each command reads a
//! [`RunConfig`], writes its outputs below `output_dir` and returns a summary
//! value so the same flows can be driven from code and tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baseline::{seasonal_naive, MONTHS_PER_YEAR};
use crate::data::{load_dataset, split, DatasetFormat, LoadOptions, SplitSpec, TimeSeries, Window, YearMonth};
use crate::ensemble::{aggregate_forecasts, draw_ensemble, EnsembleSpec, MemberForecasts, TrialReport};
use crate::error::{Error, Result};
use crate::eval::{aggregate_metrics, diebold_mariano, dm_decision, point_errors, DmDecision, DmLoss, DmResult, Metrics, MetricsReport};
use crate::model::{decompose, Ablation, Diagnostics, ModelConfig};
use crate::train::{build_pool, Pool, TrainSchedule, TrainingData, MANIFEST_FILE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub ensemble: EnsembleSpec,
    pub split: SplitSpec,
    /// Drop too-short series with a warning instead of failing.
    pub drop_short: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset.csv"),
            output_dir: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            schedule: TrainSchedule::default(),
            ensemble: EnsembleSpec::default(),
            split: SplitSpec::default(),
            drop_short: false,
        }
    }
}

impl RunConfig {
    /// Parse a JSON config. Relative paths resolve against the config file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = parse_json_file(path, |value, key| match key {
            "model" => field_error::<ModelConfig>(value, "model."),
            "schedule" => field_error::<TrainSchedule>(value, "schedule."),
            "ensemble" => field_error::<EnsembleSpec>(value, "ensemble."),
            "split" => field_error::<SplitSpec>(value, "split."),
            _ => None,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if cfg.dataset.is_relative() {
            cfg.dataset = base.join(&cfg.dataset);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.ensemble.validate()?;
        if !self.dataset.exists() {
            return Err(Error::config("dataset", format!("{} does not exist", self.dataset.display())));
        }
        if self.model.horizon > self.split.test_months {
            return Err(Error::config("split.test_months", "must be at least the forecast horizon"));
        }
        if self.split.val_months > 0 && self.model.horizon > self.split.val_months {
            return Err(Error::config("split.val_months", "must be 0 or at least the forecast horizon"));
        }
        Ok(())
    }

    pub fn min_length(&self) -> usize {
        self.model.lookback + self.model.horizon + self.split.test_months
    }

    pub fn load_series(&self) -> Result<Vec<TimeSeries>> {
        let opts = LoadOptions {
            min_length: Some(self.min_length()),
            drop_short: self.drop_short,
        };
        let series = load_dataset(&self.dataset, DatasetFormat::from_path(&self.dataset), opts)?;
        if series.is_empty() {
            return Err(Error::Empty(format!("no usable series in {}", self.dataset.display())));
        }
        Ok(series)
    }

    pub fn pool_dir(&self) -> PathBuf {
        self.output_dir.join("pool")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.pool_dir().join(MANIFEST_FILE)
    }
}

/// First top-level key of `value` that `T` rejects on its own, with the
/// serde message.
fn field_error<T: DeserializeOwned>(value: &serde_json::Value, prefix: &str) -> Option<(String, String)> {
    let obj = value.as_object()?;
    obj.iter().find_map(|(k, v)| {
        let single = serde_json::Value::Object([(k.clone(), v.clone())].into_iter().collect());
        serde_json::from_value::<T>(single)
            .err()
            .map(|e| (format!("{prefix}{k}"), e.to_string()))
    })
}

/// Deserialize a JSON file, naming the offending field on failure. `nested`
/// may refine the location inside a top-level key.
fn parse_json_file<T, F>(path: &Path, nested: F) -> Result<T>
where
    T: DeserializeOwned,
    F: Fn(&serde_json::Value, &str) -> Option<(String, String)>,
{
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    serde_json::from_value::<T>(value.clone()).map_err(|whole| {
        let (field, message) = field_error::<T>(&value, "")
            .map(|(key, msg)| nested(&value[&key], &key).unwrap_or((key, msg)))
            .unwrap_or_else(|| (path.display().to_string(), whole.to_string()));
        Error::config(field, message)
    })
}

/// Which held-out block an evaluation targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Holdout {
    Validation,
    Test,
}

/// One window per series: lookback ending right before the held-out block,
/// target = the first `horizon` months of it.
pub fn holdout_windows(series: &[TimeSeries], spec: &SplitSpec, config: &ModelConfig, holdout: Holdout) -> Result<Vec<Window>> {
    series
        .iter()
        .map(|s| {
            let sp = split(s, spec, config.lookback, config.horizon)?;
            let region = match holdout {
                Holdout::Validation => sp.val,
                Holdout::Test => sp.test,
            };
            if region.len() < config.horizon {
                return Err(Error::config("split", format!("held-out block shorter than horizon for '{}'", s.id)));
            }
            Window::at(s, region.start - 1, config.lookback, config.horizon)
        })
        .collect()
}

pub fn seasonal_naive_report(series: &[TimeSeries], windows: &[Window]) -> Result<MetricsReport> {
    let groups = windows
        .iter()
        .map(|w| {
            let s = series
                .iter()
                .find(|s| s.id == w.series_id)
                .ok_or_else(|| Error::UnknownSeries(w.series_id.clone()))?;
            let f = seasonal_naive(&s.values[..=w.anchor], w.y.len(), MONTHS_PER_YEAR)?;
            Ok((w.series_id.clone(), point_errors(&w.y, &f)?))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_metrics(&groups)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub manifest: PathBuf,
    pub pool: Pool,
}

/// Train the pool on train + validation (the final-model setting).
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let series = cfg.load_series()?;
    let data = TrainingData::from_series(&series, &cfg.split.merged(), cfg.model.lookback, cfg.model.horizon)?;
    let dir = cfg.pool_dir();
    let pool = build_pool(&data, &cfg.model, &cfg.schedule, Some(&dir))?;
    Ok(TrainOutcome {
        manifest: dir.join(MANIFEST_FILE),
        pool,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPayload {
    pub config_hash: String,
    pub master_seed: u64,
    pub report: TrialReport,
    pub seasonal_naive: MetricsReport,
}

#[derive(Debug)]
pub struct EvaluateOutcome {
    pub payload: EvaluationPayload,
    pub metrics_json: PathBuf,
}

/// Evaluate a pool on the test block of every series.
pub fn cmd_evaluate(cfg: &RunConfig, manifest: &Path) -> Result<EvaluateOutcome> {
    cfg.validate()?;
    let pool = Pool::load(manifest)?;
    let series = cfg.load_series()?;
    let windows = holdout_windows(&series, &cfg.split, &pool.config, Holdout::Test)?;
    let forecasts = MemberForecasts::compute(&pool, &windows)?;
    evaluate_member_forecasts(
        &series,
        &forecasts,
        &cfg.ensemble,
        &pool.config_hash,
        pool.schedule.seed,
        &cfg.output_dir.join("evaluation"),
    )
}

/// Run the trials on precomputed member forecasts and write the report
/// files. Exposed so forecasts from any source can be scored.
pub fn evaluate_member_forecasts(
    series: &[TimeSeries],
    forecasts: &MemberForecasts,
    spec: &EnsembleSpec,
    config_hash: &str,
    master_seed: u64,
    out_dir: &Path,
) -> Result<EvaluateOutcome> {
    let report = crate::ensemble::run_trials(forecasts, spec)?;
    let naive = seasonal_naive_report(series, &forecasts.windows)?;
    let payload = EvaluationPayload {
        config_hash: config_hash.to_string(),
        master_seed,
        report,
        seasonal_naive: naive,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let metrics_json = out_dir.join("metrics.json");
    write_text(&metrics_json, &serde_json::to_string_pretty(&payload)?)?;

    let mut by_series = csv::Writer::from_path(out_dir.join("metrics_by_series.csv"))?;
    by_series.write_record(["model", "country", "MedAPE", "MAPE", "IQR_APE", "RMSE", "MPE", "config_hash", "master_seed"])?;
    let seed = master_seed.to_string();
    for (model, report) in [("N-BEATS*", &payload.report.averaged), ("seasonal-naive", &payload.seasonal_naive)] {
        for s in &report.per_series {
            write_metrics_row(&mut by_series, model, &s.series_id, &s.metrics, config_hash, &seed)?;
        }
        write_metrics_row(&mut by_series, model, "ALL", &report.aggregate, config_hash, &seed)?;
    }
    by_series.flush().map_err(|e| Error::io(out_dir, e))?;

    let mut hist = csv::Writer::from_path(out_dir.join("mpe_histogram.csv"))?;
    hist.write_record(["trial", "series_id", "mpe", "config_hash", "master_seed"])?;
    for t in &payload.report.trials {
        for s in &t.report.per_series {
            hist.write_record([t.trial.to_string(), s.series_id.clone(), s.metrics.mpe.to_string(), config_hash.into(), seed.clone()])?;
        }
    }
    hist.flush().map_err(|e| Error::io(out_dir, e))?;

    // point errors of the whole pool aggregated once, for paired DM tests
    let all: Vec<usize> = (0..forecasts.pool_size()).collect();
    let mut errs = csv::Writer::from_path(out_dir.join("errors.csv"))?;
    errs.write_record(["series_id", "year", "month", "actual", "forecast", "error", "config_hash", "master_seed"])?;
    for (w, window) in forecasts.windows.iter().enumerate() {
        let f = forecasts.ensemble_forecast(&all, w, spec.aggregation)?;
        let s = series
            .iter()
            .find(|s| s.id == window.series_id)
            .ok_or_else(|| Error::UnknownSeries(window.series_id.clone()))?;
        for (j, (a, p)) in window.y.iter().zip(&f).enumerate() {
            let m = s.month_at(window.anchor + 1 + j);
            errs.write_record([
                window.series_id.clone(),
                m.year.to_string(),
                m.month.to_string(),
                a.to_string(),
                p.to_string(),
                (a - p).to_string(),
                config_hash.into(),
                seed.clone(),
            ])?;
        }
    }
    errs.flush().map_err(|e| Error::io(out_dir, e))?;

    Ok(EvaluateOutcome { payload, metrics_json })
}

fn write_metrics_row<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    model: &str,
    country: &str,
    m: &Metrics,
    hash: &str,
    seed: &str,
) -> Result<()> {
    let mut row = vec![model.to_string(), country.to_string()];
    row.extend(m.as_array().iter().map(|v| v.to_string()));
    row.push(hash.to_string());
    row.push(seed.to_string());
    w.write_record(&row)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesDecomposition {
    pub series_id: String,
    pub anchor: YearMonth,
    pub months: Vec<YearMonth>,
    /// Aggregated ensemble forecast (the forecast CSV column).
    pub forecast: Vec<f64>,
    /// Mean of the member forecasts; equals `forecast` for mean aggregation
    /// or a single member.
    pub mean_forecast: Vec<f64>,
    /// Per-block contributions averaged over members; rows sum to
    /// `mean_forecast`.
    pub block_contributions: Vec<Vec<f64>>,
    /// Full block trace of the first drawn member.
    pub first_member: Diagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastPayload {
    pub config_hash: String,
    pub master_seed: u64,
    pub members: Vec<usize>,
    pub series: Vec<SeriesDecomposition>,
}

#[derive(Debug)]
pub struct ForecastOutcome {
    pub forecast_csv: PathBuf,
    pub decomposition_json: PathBuf,
    pub payload: ForecastPayload,
}

/// Forecast `horizon` months after `anchor` (default: each series' last
/// observation) with the first bootstrap ensemble of `cfg.ensemble`.
pub fn cmd_forecast(
    cfg: &RunConfig,
    manifest: &Path,
    series_ids: &[String],
    anchor: Option<YearMonth>,
    out_dir: &Path,
) -> Result<ForecastOutcome> {
    cfg.ensemble.validate()?;
    let pool = Pool::load(manifest)?;
    let opts = LoadOptions::default();
    let all = load_dataset(&cfg.dataset, DatasetFormat::from_path(&cfg.dataset), opts)?;
    let targets: Vec<&TimeSeries> = if series_ids.is_empty() {
        all.iter().collect()
    } else {
        series_ids
            .iter()
            .map(|id| all.iter().find(|s| &s.id == id).ok_or_else(|| Error::UnknownSeries(id.clone())))
            .collect::<Result<_>>()?
    };
    let members = draw_ensemble(pool.len(), &cfg.ensemble, 0)?;
    let models = pool.models()?;
    let lookback = pool.config.lookback;

    let mut out = Vec::with_capacity(targets.len());
    for s in targets {
        let anchor_idx = match anchor {
            None => s.len() - 1,
            Some(m) => s.index_of(m).ok_or_else(|| {
                Error::config("anchor", format!("{m} is outside series '{}' ({}..{})", s.id, s.start, s.end()))
            })?,
        };
        let window = Window::lookback_only(s, anchor_idx, lookback)?;
        let mut forecasts = Vec::with_capacity(members.len());
        let mut contributions: Vec<Vec<f64>> = Vec::new();
        let mut first = None;
        for &m in &members {
            let (f, diag) = models[m].forward(&window.x)?;
            let parts = decompose(&diag);
            if contributions.is_empty() {
                contributions = vec![vec![0.0; f.len()]; parts.len()];
            }
            for (acc, p) in contributions.iter_mut().zip(&parts) {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v;
                }
            }
            forecasts.push(f);
            first.get_or_insert(diag);
        }
        let n = members.len() as f64;
        for row in &mut contributions {
            row.iter_mut().for_each(|v| *v /= n);
        }
        let mean_forecast = (0..pool.config.horizon)
            .map(|j| contributions.iter().map(|c| c[j]).sum())
            .collect();
        let anchor_month = s.month_at(anchor_idx);
        out.push(SeriesDecomposition {
            series_id: s.id.clone(),
            anchor: anchor_month,
            months: (1..=pool.config.horizon as i64).map(|j| anchor_month.plus(j)).collect(),
            forecast: aggregate_forecasts(&forecasts, cfg.ensemble.aggregation)?,
            mean_forecast,
            block_contributions: contributions,
            first_member: first.expect("ensemble is nonempty"),
        });
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let forecast_csv = out_dir.join("forecast.csv");
    let mut w = csv::Writer::from_path(&forecast_csv)?;
    w.write_record(["series_id", "year", "month", "forecast"])?;
    for s in &out {
        for (m, f) in s.months.iter().zip(&s.forecast) {
            w.write_record([s.series_id.clone(), m.year.to_string(), m.month.to_string(), f.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&forecast_csv, e))?;

    let payload = ForecastPayload {
        config_hash: pool.config_hash.clone(),
        master_seed: pool.schedule.seed,
        members,
        series: out,
    };
    let decomposition_json = out_dir.join("decomposition.json");
    write_text(&decomposition_json, &serde_json::to_string_pretty(&payload)?)?;
    Ok(ForecastOutcome {
        forecast_csv,
        decomposition_json,
        payload,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub mape: f64,
    pub rmse: f64,
    /// Mean over members of the final-epoch `lambda * nMSE` component.
    pub final_nmse_term: f64,
    pub final_pmape: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub master_seed: u64,
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_VARIANTS: [Option<Ablation>; 5] =
    [None, Some(Ablation::NoL2), Some(Ablation::NoVar), Some(Ablation::NoDestd), Some(Ablation::NoRelu)];

/// Train and evaluate the full model and each single-component ablation
/// with identical seeds.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationTable> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for variant in ABLATION_VARIANTS {
        let mut model = cfg.model.clone();
        model.ablation.clear();
        let name = match variant {
            Some(a) => {
                model.ablation.insert(a);
                a.label()
            }
            None => "full",
        };
        let run = RunConfig {
            model,
            output_dir: cfg.output_dir.join("ablation").join(name),
            ..cfg.clone()
        };
        let trained = cmd_train(&run)?;
        let eval = cmd_evaluate(&run, &trained.manifest)?;
        let last = |f: fn(&crate::loss::LossBreakdown) -> f64| {
            crate::eval::mean(
                &trained
                    .pool
                    .members
                    .iter()
                    .map(|m| m.trace.epochs.last().map_or(f64::NAN, f))
                    .collect::<Vec<_>>(),
            )
        };
        let agg = eval.payload.report.averaged.aggregate;
        rows.push(AblationRow {
            variant: name.to_string(),
            mape: agg.mape,
            rmse: agg.rmse,
            final_nmse_term: last(|b| b.nmse_term),
            final_pmape: last(|b| b.pmape),
            config_hash: trained.pool.config_hash.clone(),
        });
    }
    let table = AblationTable {
        master_seed: cfg.schedule.seed,
        rows,
    };
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    write_text(&cfg.output_dir.join("ablation.json"), &serde_json::to_string_pretty(&table)?)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("ablation.csv"))?;
    w.write_record(["variant", "MAPE", "RMSE", "config_hash", "master_seed"])?;
    for r in &table.rows {
        w.write_record([r.variant.clone(), r.mape.to_string(), r.rmse.to_string(), r.config_hash.clone(), table.master_seed.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&cfg.output_dir, e))?;
    Ok(table)
}

/// Candidate values per hyperparameter; omitted fields keep the config value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub tau: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub fc_width: Option<Vec<usize>>,
    pub blocks: Option<Vec<usize>>,
    pub fc_layers: Option<Vec<usize>>,
    pub sharing: Option<Vec<bool>>,
    pub lookback: Option<Vec<usize>>,
    pub batches_per_epoch: Option<Vec<usize>>,
    pub batch_size: Option<Vec<usize>>,
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let grid: SweepGrid = parse_json_file(path, |_, _| None)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let lens = [
            ("tau", self.tau.as_ref().map(Vec::len)),
            ("lambda", self.lambda.as_ref().map(Vec::len)),
            ("fc_width", self.fc_width.as_ref().map(Vec::len)),
            ("blocks", self.blocks.as_ref().map(Vec::len)),
            ("fc_layers", self.fc_layers.as_ref().map(Vec::len)),
            ("sharing", self.sharing.as_ref().map(Vec::len)),
            ("lookback", self.lookback.as_ref().map(Vec::len)),
            ("batches_per_epoch", self.batches_per_epoch.as_ref().map(Vec::len)),
            ("batch_size", self.batch_size.as_ref().map(Vec::len)),
        ];
        for (field, len) in lens {
            if len == Some(0) {
                return Err(Error::config(field, "grid list is empty"));
            }
        }
        Ok(())
    }

    /// Cartesian product applied on top of `base`.
    pub fn combinations(&self, base: &RunConfig) -> Vec<(BTreeMap<String, serde_json::Value>, RunConfig)> {
        let mut out = vec![(BTreeMap::new(), base.clone())];
        fn expand<T: Clone + Serialize>(
            out: Vec<(BTreeMap<String, serde_json::Value>, RunConfig)>,
            name: &str,
            values: &Option<Vec<T>>,
            set: impl Fn(&mut RunConfig, T),
        ) -> Vec<(BTreeMap<String, serde_json::Value>, RunConfig)> {
            let Some(values) = values else { return out };
            let mut next = Vec::with_capacity(out.len() * values.len());
            for (params, cfg) in out {
                for v in values {
                    let mut p = params.clone();
                    p.insert(name.to_string(), serde_json::to_value(v).expect("serialisable"));
                    let mut c = cfg.clone();
                    set(&mut c, v.clone());
                    next.push((p, c));
                }
            }
            next
        }
        out = expand(out, "tau", &self.tau, |c, v| c.model.tau = v);
        out = expand(out, "lambda", &self.lambda, |c, v| c.model.lambda = v);
        out = expand(out, "fc_width", &self.fc_width, |c, v| c.model.fc_width = v);
        out = expand(out, "blocks", &self.blocks, |c, v| c.model.blocks = v);
        out = expand(out, "fc_layers", &self.fc_layers, |c, v| c.model.fc_layers = v);
        out = expand(out, "sharing", &self.sharing, |c, v| c.model.sharing = v);
        out = expand(out, "lookback", &self.lookback, |c, v| c.model.lookback = v);
        out = expand(out, "batches_per_epoch", &self.batches_per_epoch, |c, v| c.schedule.batches_per_epoch = v);
        out = expand(out, "batch_size", &self.batch_size, |c, v| c.schedule.batch_size = v);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub params: BTreeMap<String, serde_json::Value>,
    pub config_hash: String,
    pub metrics: Metrics,
    pub best: bool,
}

/// Train on the training block and score on the validation block for every
/// grid combination; the lowest validation MAPE is flagged.
pub fn cmd_sweep(cfg: &RunConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    cfg.validate()?;
    if cfg.split.val_months == 0 {
        return Err(Error::config("split.val_months", "sweeping needs a validation block"));
    }
    let series = cfg.load_series()?;
    let mut rows = Vec::new();
    for (i, (params, run)) in grid.combinations(cfg).into_iter().enumerate() {
        run.model.validate()?;
        run.schedule.validate()?;
        let data = TrainingData::from_series(&series, &run.split, run.model.lookback, run.model.horizon)?;
        let dir = cfg.output_dir.join("sweep").join(format!("combo_{i:03}"));
        let pool = build_pool(&data, &run.model, &run.schedule, Some(&dir))?;
        let windows = holdout_windows(&series, &run.split, &run.model, Holdout::Validation)?;
        let forecasts = MemberForecasts::compute(&pool, &windows)?;
        let report = crate::ensemble::run_trials(&forecasts, &run.ensemble)?;
        rows.push(SweepRow {
            params,
            config_hash: pool.config_hash.clone(),
            metrics: report.averaged.aggregate,
            best: false,
        });
    }
    if let Some(best) = rows
        .iter_mut()
        .min_by(|a, b| a.metrics.mape.total_cmp(&b.metrics.mape))
    {
        best.best = true;
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    write_text(&cfg.output_dir.join("sweep.json"), &serde_json::to_string_pretty(&rows)?)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("sweep.csv"))?;
    w.write_record(["params", "MedAPE", "MAPE", "IQR_APE", "RMSE", "MPE", "best", "config_hash", "master_seed"])?;
    for r in &rows {
        let mut rec = vec![serde_json::to_string(&r.params)?];
        rec.extend(r.metrics.as_array().iter().map(|v| v.to_string()));
        rec.push(r.best.to_string());
        rec.push(r.config_hash.clone());
        rec.push(cfg.schedule.seed.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&cfg.output_dir, e))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmReport {
    pub result: DmResult,
    pub decision: Option<DmDecision>,
}

/// `(series_id, year, month)`
pub type ErrorKey = (String, i32, u32);

/// Read `series_id,year,month,...,error` rows keyed by month.
pub fn read_errors(path: &Path) -> Result<Vec<(ErrorKey, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    })?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column '{name}'"),
        })
    };
    let (ci, cy, cm, ce) = (col("series_id")?, col("year")?, col("month")?, col("error")?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("invalid {what}"),
        };
        let year = rec[cy].parse().map_err(|_| bad("year"))?;
        let month = rec[cm].parse().map_err(|_| bad("month"))?;
        let err = rec[ce].parse().map_err(|_| bad("error"))?;
        out.push(((rec[ci].to_string(), year, month), err));
    }
    Ok(out)
}

pub fn cmd_dm_test(a: &Path, b: &Path, loss: DmLoss, horizon: usize, alpha: f64) -> Result<DmReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha", format!("{alpha} is not in (0, 1)")));
    }
    let ea = read_errors(a)?;
    let eb = read_errors(b)?;
    if ea.len() != eb.len() {
        return Err(Error::Misaligned(format!("{} rows vs {} rows", ea.len(), eb.len())));
    }
    for (x, y) in ea.iter().zip(&eb) {
        if x.0 != y.0 {
            return Err(Error::Misaligned(format!("{:?} vs {:?}", x.0, y.0)));
        }
    }
    let va: Vec<f64> = ea.iter().map(|e| e.1).collect();
    let vb: Vec<f64> = eb.iter().map(|e| e.1).collect();
    let result = diebold_mariano(&va, &vb, loss, horizon)?;
    Ok(DmReport {
        decision: result.statistic.map(|s| dm_decision(s, alpha)),
        result,
    })
}

pub fn cmd_synth(spec: &crate::synth::SynthSpec, out: &Path) -> Result<Vec<TimeSeries>> {
    let series = crate::synth::generate(spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match DatasetFormat::from_path(out) {
        DatasetFormat::Csv => crate::data::write_csv(&series, out)?,
        DatasetFormat::Json => crate::data::write_json(&series, out)?,
    }
    Ok(series)
}
