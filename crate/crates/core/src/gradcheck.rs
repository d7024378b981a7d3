//! Central finite-difference check of full-model gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::Result;
use crate::model::{loss, LossConfig, Model, ModelSpec, Variant, N_CLASSES};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub n_params: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn sample_loss(model: &Model, input: &Tensor, label: Label, cfg: &LossConfig) -> Result<f64> {
    Ok(loss(model.logits(input)?.data(), label, cfg)?.0)
}

/// Compares analytic loss gradients against `(L(θ+h) − L(θ−h)) / 2h` for
/// every parameter.
pub fn gradcheck(
    model: &Model,
    input: &Tensor,
    label: Label,
    cfg: &LossConfig,
    h: f64,
) -> Result<GradcheckReport> {
    let (logits, cache) = model.forward(input)?;
    let (_, dl) = loss(logits.data(), label, cfg)?;
    let analytic: Vec<f64> = model
        .backward(&Tensor::from_parts(vec![N_CLASSES], dl), &cache)?
        .into_iter()
        .flat_map(|t| t.into_data())
        .collect();
    let base = model.params_flat();
    let mut probe = model.clone();
    let mut flat = base.clone();
    let mut report = GradcheckReport {
        n_params: base.len(),
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.set_params_flat(&flat)?;
        let plus = sample_loss(&probe, input, label, cfg)?;
        flat[i] = base[i] - h;
        probe.set_params_flat(&flat)?;
        let minus = sample_loss(&probe, input, label, cfg)?;
        flat[i] = base[i];
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error {
            report = GradcheckReport {
                max_rel_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
                ..report
            };
        }
    }
    Ok(report)
}

/// Checks a freshly initialised 4×4 micro model on one random sample with
/// class weight 2. Everything is derived from `seed`.
pub fn gradcheck_micro(variant: Variant, seed: u64, h: f64) -> Result<GradcheckReport> {
    let model = Model::new(ModelSpec::micro(variant), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::new(vec![1, 4, 4], (0..16).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let label = Label::from_index(rng.random_range(0..2))?;
    gradcheck(&model, &input, label, &LossConfig::new(2.0)?, h)
}
