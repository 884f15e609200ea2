//! The N-BEATS* network.
//!
//! Each lookback is divided by its maximum. Every block runs a ReLU MLP and
//! two linear heads (backcast and forecast) whose raw outputs are
//! destandardised with the mean and population standard deviation of the
//! block input. The next block sees `ReLU(x - backcast)`; the forecast is the
//! sum of block forecasts multiplied back by the lookback maximum.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{self, LossBreakdown, LossConfig};
use crate::nn::{Checkpoint, DenseLayer, Init, ParamStore, Tape, Var};
use crate::seed::rng_from;

/// Model and loss components that can be switched off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "noL2")]
    NoL2,
    #[serde(rename = "noVar")]
    NoVar,
    #[serde(rename = "noDestd")]
    NoDestd,
    #[serde(rename = "noReLU")]
    NoRelu,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::NoL2, Ablation::NoVar, Ablation::NoDestd, Ablation::NoRelu];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::NoL2 => "noL2",
            Ablation::NoVar => "noVar",
            Ablation::NoDestd => "noDestd",
            Ablation::NoRelu => "noReLU",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Lookback length in months.
    pub lookback: usize,
    /// Forecast horizon in months.
    pub horizon: usize,
    pub blocks: usize,
    pub fc_width: usize,
    pub fc_layers: usize,
    /// One parameter set shared by every block.
    pub sharing: bool,
    pub tau: f64,
    pub lambda: f64,
    pub ablation: BTreeSet<Ablation>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lookback: 12,
            horizon: 12,
            blocks: 6,
            fc_width: 512,
            fc_layers: 3,
            sharing: true,
            tau: 0.35,
            lambda: 0.35,
            ablation: BTreeSet::new(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("blocks", self.blocks),
            ("fc_width", self.fc_width),
            ("fc_layers", self.fc_layers),
        ] {
            if v < 1 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        self.loss_config().validate()
    }

    pub fn has(&self, a: Ablation) -> bool {
        self.ablation.contains(&a)
    }

    pub fn with_ablation(mut self, a: Ablation) -> Self {
        self.ablation.insert(a);
        self
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            lambda: self.lambda,
            no_l2: self.has(Ablation::NoL2),
            no_var: self.has(Ablation::NoVar),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockLayers {
    pub hidden: Vec<DenseLayer>,
    pub backcast: DenseLayer,
    pub forecast: DenseLayer,
}

/// One block's outputs in the normalised-input scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockOutput {
    pub backcast: Vec<f64>,
    pub forecast: Vec<f64>,
}

/// Per-block intermediate values of a single forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub scale: f64,
    /// `x^(m)` for every block, normalised scale.
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<BlockOutput>,
    pub forecast: Vec<f64>,
}

/// Tape handles produced by [`NBeats::record`].
pub struct Recorded {
    pub forecast: Var,
    pub block_inputs: Vec<Var>,
    pub backcasts: Vec<Var>,
    pub block_forecasts: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct NBeats {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub blocks: Vec<BlockLayers>,
}

/// `x / max(x)` and `max(x)`.
pub fn normalize_input(x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let scale = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::NonPositiveScale(scale));
    }
    Ok((x.iter().map(|v| v / scale).collect(), scale))
}

/// Row-wise [`normalize_input`].
pub fn normalize_batch(x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut out = x.clone();
    let mut scales = Array1::zeros(x.nrows());
    for (mut row, s) in out.outer_iter_mut().zip(scales.iter_mut()) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::NonPositiveScale(m));
        }
        row.mapv_inplace(|v| v / m);
        *s = m;
    }
    Ok((out, scales))
}

fn row_matrix(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

impl NBeats {
    /// Fresh model. Hidden layers use He-uniform weights, the two heads
    /// uniform weights in `±0.01`, all biases start at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(seed);
        let mut params = ParamStore::new();
        let distinct = if config.sharing { 1 } else { config.blocks };
        let mut owned = Vec::with_capacity(distinct);
        for b in 0..distinct {
            let prefix = if config.sharing { "shared".to_string() } else { format!("block{b}") };
            let mut hidden = Vec::with_capacity(config.fc_layers);
            let mut in_dim = config.lookback;
            for l in 0..config.fc_layers {
                hidden.push(DenseLayer::new(
                    &mut params,
                    &format!("{prefix}.fc{l}"),
                    in_dim,
                    config.fc_width,
                    Init::HeUniform,
                    &mut rng,
                ));
                in_dim = config.fc_width;
            }
            let backcast = DenseLayer::new(
                &mut params,
                &format!("{prefix}.backcast"),
                config.fc_width,
                config.lookback,
                Init::Uniform(0.01),
                &mut rng,
            );
            let forecast = DenseLayer::new(
                &mut params,
                &format!("{prefix}.forecast"),
                config.fc_width,
                config.horizon,
                Init::Uniform(0.01),
                &mut rng,
            );
            owned.push(BlockLayers {
                hidden,
                backcast,
                forecast,
            });
        }
        let blocks = (0..config.blocks)
            .map(|m| owned[if config.sharing { 0 } else { m }].clone())
            .collect();
        Ok(Self { config, params, blocks })
    }

    pub fn from_checkpoint(config: ModelConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config, checkpoint.seed)?;
        checkpoint.restore_into(&mut model.params)?;
        Ok(model)
    }

    fn record_block(&self, params: &ParamStore, tape: &mut Tape, block: &BlockLayers, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for layer in &block.hidden {
            let z = layer.forward(tape, params, h)?;
            h = tape.relu(z);
        }
        let raw_back = block.backcast.forward(tape, params, h)?;
        let raw_fore = block.forecast.forward(tape, params, h)?;
        if self.config.has(Ablation::NoDestd) {
            return Ok((raw_back, raw_fore));
        }
        let mean = tape.row_mean(x);
        let std = tape.row_std(x);
        Ok((
            tape.destandardize(raw_back, mean, std),
            tape.destandardize(raw_fore, mean, std),
        ))
    }

    /// Record the forward pass for a normalised batch on `tape`, using
    /// `params` in place of the model's own parameters.
    pub fn record(&self, params: &ParamStore, tape: &mut Tape, x_norm: Var, scale: Array1<f64>) -> Result<Recorded> {
        let width = tape.value(x_norm).ncols();
        if width != self.config.lookback {
            return Err(Error::shape("model input", self.config.lookback, width));
        }
        let mut x = x_norm;
        let mut total: Option<Var> = None;
        let mut rec = Recorded {
            forecast: x_norm,
            block_inputs: Vec::with_capacity(self.blocks.len()),
            backcasts: Vec::with_capacity(self.blocks.len()),
            block_forecasts: Vec::with_capacity(self.blocks.len()),
        };
        for (m, block) in self.blocks.iter().enumerate() {
            rec.block_inputs.push(x);
            let (back, fore) = self.record_block(params, tape, block, x)?;
            rec.backcasts.push(back);
            rec.block_forecasts.push(fore);
            total = Some(match total {
                None => fore,
                Some(t) => tape.add(t, fore)?,
            });
            if m + 1 < self.blocks.len() {
                let residual = tape.sub(x, back)?;
                x = if self.config.has(Ablation::NoRelu) {
                    residual
                } else {
                    tape.relu(residual)
                };
            }
        }
        rec.forecast = tape.scale_rows(total.expect("at least one block"), scale);
        Ok(rec)
    }

    /// Record forward pass and loss for raw lookbacks `x` and targets `y`.
    pub fn record_loss(
        &self,
        params: &ParamStore,
        x: &Array2<f64>,
        y: &Array2<f64>,
    ) -> Result<(Tape, Var, LossBreakdown)> {
        let (x_norm, scale) = normalize_batch(x)?;
        let mut tape = Tape::new();
        let input = tape.input(x_norm);
        let rec = self.record(params, &mut tape, input, scale)?;
        let y_hat = tape.value(rec.forecast).clone();
        let cfg = self.config.loss_config();
        let breakdown = loss::combined_loss(y, &y_hat, &cfg)?;
        let grad = loss::loss_gradients(y, &y_hat, &cfg)?;
        let branches = loss::pinball_branches(y, &y_hat);
        let l = tape.external_scalar(rec.forecast, breakdown.total, grad, branches)?;
        Ok((tape, l, breakdown))
    }

    /// Forecasts for a batch of raw lookbacks (`batch x lookback`).
    pub fn forecast_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let (x_norm, scale) = normalize_batch(x)?;
        let mut tape = Tape::new();
        let input = tape.input(x_norm);
        let rec = self.record(&self.params, &mut tape, input, scale)?;
        Ok(tape.value(rec.forecast).clone())
    }

    /// Single block applied to `x_m` (normalised scale).
    pub fn block_forward(&self, block: usize, x_m: &[f64]) -> Result<BlockOutput> {
        if x_m.len() != self.config.lookback {
            return Err(Error::shape("block input", self.config.lookback, x_m.len()));
        }
        let layers = self
            .blocks
            .get(block)
            .ok_or_else(|| Error::config("block", format!("{block} out of range")))?;
        let mut tape = Tape::new();
        let x = tape.input(row_matrix(x_m));
        let (b, f) = self.record_block(&self.params, &mut tape, layers, x)?;
        Ok(BlockOutput {
            backcast: tape.value(b).row(0).to_vec(),
            forecast: tape.value(f).row(0).to_vec(),
        })
    }

    /// Forecast for one raw lookback plus every intermediate block value.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Diagnostics)> {
        let (x_norm, scale) = normalize_input(x)?;
        let mut tape = Tape::new();
        let input = tape.input(row_matrix(&x_norm));
        let rec = self.record(&self.params, &mut tape, input, Array1::from_elem(1, scale))?;
        let row = |v: Var| tape.value(v).row(0).to_vec();
        let forecast = row(rec.forecast);
        let diagnostics = Diagnostics {
            scale,
            inputs: rec.block_inputs.iter().map(|&v| row(v)).collect(),
            outputs: rec
                .backcasts
                .iter()
                .zip(&rec.block_forecasts)
                .map(|(&b, &f)| BlockOutput {
                    backcast: row(b),
                    forecast: row(f),
                })
                .collect(),
            forecast: forecast.clone(),
        };
        Ok((forecast, diagnostics))
    }

    /// Set both heads of every block to zero.
    pub fn zero_heads(&mut self) {
        for block in self.blocks.clone() {
            for layer in [block.backcast, block.forecast] {
                self.params.get_mut(layer.weight).fill(0.0);
                self.params.get_mut(layer.bias).fill(0.0);
            }
        }
    }
}

/// Per-block forecast contributions in the original scale. They add up to
/// the forecast.
pub fn decompose(diagnostics: &Diagnostics) -> Vec<Vec<f64>> {
    diagnostics
        .outputs
        .iter()
        .map(|o| o.forecast.iter().map(|v| v * diagnostics.scale).collect())
        .collect()
}

/// Stack per-window lookbacks into a `batch x lookback` matrix.
pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != width {
            return Err(Error::shape("stacked row", width, r.len()));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, width), data).expect("row-major stack"))
}
