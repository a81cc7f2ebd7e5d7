//! The universal-perturbation accumulation loop and the lp-ball projection.

use std::path::Path;

use crate::classifier::Model;
use crate::dataset::Dataset;
use crate::deepfool::{deepfool, DeepFoolConfig};
use crate::error::{Error, Result};
use crate::evaluation::fooling_rate;
use crate::io::{Reader, Writer};
use crate::rng::Rng;
use crate::tensor::{lp_norm, Norm, Tensor};

const PERTURBATION_MAGIC: &str = "UAPP";
const PERTURBATION_VERSION: u8 = 1;

/// Relative slack allowed on the budget to absorb f32 rounding.
pub const BUDGET_TOLERANCE: f64 = 1e-6;

/// Euclidean projection onto the lp ball of radius `xi`: rescaling for p=2,
/// coordinate clamping for p=inf. Feasible inputs pass through bit-identical.
pub fn project_lp_ball(v: &Tensor, p: Norm, xi: f64) -> Result<Tensor> {
    if !(xi > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "xi must be positive, got {xi}"
        )));
    }
    if v.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "lp-ball projection input",
        });
    }
    match p {
        Norm::L2 => {
            let norm = lp_norm(v, Norm::L2)?;
            if norm <= xi {
                return Ok(v.clone());
            }
            let factor = xi / norm;
            Ok(Tensor::from_vec(
                v.data()
                    .iter()
                    .map(|&x| (factor * x as f64) as f32)
                    .collect(),
            ))
        }
        Norm::LInf => Ok(Tensor::from_vec(
            v.data()
                .iter()
                .map(|&x| (x as f64).clamp(-xi, xi) as f32)
                .collect(),
        )),
    }
}

/// A universal perturbation with its budget and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub v: Tensor,
    pub p: Norm,
    pub xi: f64,
    pub passes_used: usize,
    pub achieved_fooling_rate: f64,
    /// One of "cold-start", "warm-start", "random", "loaded".
    pub source: String,
}

impl Perturbation {
    /// Checks the budget invariant ‖v‖_p ≤ ξ(1 + tolerance).
    pub fn new(
        v: Tensor,
        p: Norm,
        xi: f64,
        passes_used: usize,
        achieved_fooling_rate: f64,
        source: String,
    ) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "xi must be positive, got {xi}"
            )));
        }
        let norm = lp_norm(&v, p)?;
        if norm > xi * (1.0 + BUDGET_TOLERANCE) {
            return Err(Error::InvalidParameter(format!(
                "perturbation norm {norm} exceeds budget {xi}"
            )));
        }
        if !(0.0..=1.0).contains(&achieved_fooling_rate) {
            return Err(Error::InvalidParameter(format!(
                "fooling rate {achieved_fooling_rate} outside [0, 1]"
            )));
        }
        Ok(Self {
            v,
            p,
            xi,
            passes_used,
            achieved_fooling_rate,
            source,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub p: Norm,
    pub xi: f64,
    /// Stop once the fooling rate on the attack set reaches this.
    pub target_fooling_rate: f64,
    /// 0 is allowed and returns the (projected) starting vector.
    pub max_passes: usize,
    pub deepfool: DeepFoolConfig,
    pub shuffle_each_pass: bool,
    pub shuffle_seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            p: Norm::L2,
            xi: 1.0,
            target_fooling_rate: 0.8,
            max_passes: 10,
            deepfool: DeepFoolConfig::default(),
            shuffle_each_pass: true,
            shuffle_seed: 0,
        }
    }
}

/// Result of one accumulation run: the perturbation plus loop telemetry.
#[derive(Debug, Clone)]
pub struct UapRun {
    pub perturbation: Perturbation,
    /// A full pass produced zero successful per-point perturbations.
    pub stalled: bool,
    /// Fooling rate on the attack set after each completed pass.
    pub pass_rates: Vec<f64>,
}

/// Accumulates a universal perturbation over passes of the attack set:
/// every point still classified as its clean label gets a minimal per-point
/// perturbation at the shifted position, which is added to `v` and projected
/// back onto the budget ball.
pub fn compute_uap(
    x: &Dataset,
    model: &Model,
    cfg: &AttackConfig,
    v0: Option<&Tensor>,
) -> Result<UapRun> {
    let d = x.dim();
    if d != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: d,
        });
    }
    if !(cfg.target_fooling_rate > 0.0 && cfg.target_fooling_rate <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target_fooling_rate must be in (0, 1], got {}",
            cfg.target_fooling_rate
        )));
    }

    let mut v = match v0 {
        Some(start) => {
            if start.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: start.len(),
                });
            }
            project_lp_ball(start, cfg.p, cfg.xi)?
        }
        None => Tensor::from_vec(vec![0.0; d]),
    };
    let source = if v0.is_some() {
        "warm-start"
    } else {
        "cold-start"
    };

    let clean_labels: Vec<usize> = (0..x.num_images())
        .map(|i| model.predict_slice(x.row(i)))
        .collect();

    let mut rng = Rng::new(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..x.num_images()).collect();
    let mut rate = fooling_rate(x, &v, model, false)?.rate;
    let mut pass_rates = Vec::new();
    let mut passes_used = 0;
    let mut stalled = false;

    while passes_used < cfg.max_passes && rate < cfg.target_fooling_rate {
        if cfg.shuffle_each_pass {
            rng.shuffle(&mut order);
        }
        let mut successes = 0usize;
        for &i in &order {
            let row = x.row(i);
            let shifted =
                Tensor::from_vec(row.iter().zip(v.data()).map(|(&xi, &vi)| xi + vi).collect());
            if model.predict(&shifted)? != clean_labels[i] {
                continue;
            }
            let result = deepfool(&shifted, model, &cfg.deepfool)?;
            if !result.success {
                continue;
            }
            let updated = crate::tensor::axpy(1.0, &result.r, &v)?;
            v = project_lp_ball(&updated, cfg.p, cfg.xi)?;
            let norm = lp_norm(&v, cfg.p)?;
            assert!(
                norm <= cfg.xi * (1.0 + BUDGET_TOLERANCE),
                "mid-loop budget violation: ||v|| = {norm} > xi = {}",
                cfg.xi
            );
            successes += 1;
        }
        passes_used += 1;
        rate = fooling_rate(x, &v, model, false)?.rate;
        pass_rates.push(rate);
        if successes == 0 {
            stalled = true;
            break;
        }
    }

    Ok(UapRun {
        perturbation: Perturbation::new(v, cfg.p, cfg.xi, passes_used, rate, source.to_string())?,
        stalled,
        pass_rates,
    })
}

fn norm_byte(p: Norm) -> u8 {
    match p {
        Norm::L2 => 2,
        Norm::LInf => 255,
    }
}

pub fn perturbation_to_bytes(pert: &Perturbation) -> Vec<u8> {
    let mut w = Writer::new();
    w.magic(PERTURBATION_MAGIC);
    w.u8(PERTURBATION_VERSION);
    w.u8(norm_byte(pert.p));
    w.f64(pert.xi);
    w.u32(pert.v.len() as u32);
    w.f32_slice(pert.v.data());
    w.f64(pert.achieved_fooling_rate);
    w.u32(pert.passes_used as u32);
    w.string(&pert.source);
    w.into_bytes()
}

pub fn perturbation_from_bytes(bytes: &[u8]) -> Result<Perturbation> {
    let mut r = Reader::new(bytes);
    r.expect_magic(PERTURBATION_MAGIC)?;
    let version = r.u8("version")?;
    if version != PERTURBATION_VERSION {
        return Err(Error::Parse {
            offset: r.offset() - 1,
            what: format!("unsupported perturbation version {version}"),
        });
    }
    let at = r.offset();
    let p = match r.u8("norm order")? {
        2 => Norm::L2,
        255 => Norm::LInf,
        other => {
            return Err(Error::Parse {
                offset: at,
                what: format!("norm order byte must be 2 or 255, got {other}"),
            })
        }
    };
    let xi = r.f64("xi")?;
    let d = r.u32("dimension")? as usize;
    let at = r.offset();
    let data = r.f32_vec(d, "perturbation values")?;
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parse {
            offset: at,
            what: "non-finite perturbation values".into(),
        });
    }
    let rate = r.f64("achieved rate")?;
    let passes = r.u32("pass count")? as usize;
    let source = r.string("source")?;
    r.finish("perturbation")?;
    Perturbation::new(Tensor::from_vec(data), p, xi, passes, rate, source)
}

pub fn save_perturbation(pert: &Perturbation, path: &Path) -> Result<()> {
    std::fs::write(path, perturbation_to_bytes(pert))?;
    Ok(())
}

pub fn load_perturbation(path: &Path) -> Result<Perturbation> {
    perturbation_from_bytes(&std::fs::read(path)?)
}
