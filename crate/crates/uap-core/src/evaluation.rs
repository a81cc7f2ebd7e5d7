//! Fooling-rate measurement, random baselines, norm sweeps, and CSV output.

use std::collections::BTreeMap;
use std::path::Path;

use crate::classifier::Model;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{lp_norm, Norm, Tensor};

/// Outcome of measuring one perturbation against one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FoolingReport {
    pub total: usize,
    pub fooled: usize,
    /// fooled / total.
    pub rate: f64,
    /// (clean_label, perturbed_label, count), sorted, including unchanged
    /// pairs; entries with clean != perturbed sum to `fooled`.
    pub transitions: Vec<(usize, usize, usize)>,
    pub clamp_applied: bool,
}

/// Fraction of images whose prediction changes under `v`, measured against
/// the model's own clean predictions (not the dataset labels). With `clamp`,
/// perturbed inputs are restricted to the dataset's global value range.
pub fn fooling_rate(x: &Dataset, v: &Tensor, model: &Model, clamp: bool) -> Result<FoolingReport> {
    let d = x.dim();
    if d != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: d,
        });
    }
    if v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    let (lo, hi) = x.value_range();
    let mut transitions: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut fooled = 0usize;
    let mut perturbed = vec![0.0f32; d];
    for i in 0..x.num_images() {
        let row = x.row(i);
        let clean = model.predict_slice(row);
        for (p, (&xi, &vi)) in perturbed.iter_mut().zip(row.iter().zip(v.data())) {
            let val = xi + vi;
            *p = if clamp { val.clamp(lo, hi) } else { val };
        }
        let after = model.predict_slice(&perturbed);
        *transitions.entry((clean, after)).or_insert(0) += 1;
        if after != clean {
            fooled += 1;
        }
    }
    let total = x.num_images();
    Ok(FoolingReport {
        total,
        fooled,
        rate: fooled as f64 / total as f64,
        transitions: transitions
            .into_iter()
            .map(|((a, b), c)| (a, b, c))
            .collect(),
        clamp_applied: clamp,
    })
}

/// Random vector of exact norm `xi`: uniform on the sphere for p=2,
/// i.i.d. signs times `xi` for p=inf.
pub fn random_perturbation(d: usize, p: Norm, xi: f64, rng: &mut Rng) -> Result<Tensor> {
    if d == 0 {
        return Err(Error::EmptyTensor);
    }
    if !(xi > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "xi must be positive, got {xi}"
        )));
    }
    match p {
        Norm::L2 => loop {
            let dir: Vec<f64> = (0..d).map(|_| rng.standard_normal() as f64).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return Ok(Tensor::from_vec(
                    dir.iter().map(|&v| (xi * v / norm) as f32).collect(),
                ));
            }
        },
        Norm::LInf => Ok(Tensor::from_vec(
            (0..d)
                .map(|_| if rng.bit() { xi as f32 } else { -(xi as f32) })
                .collect(),
        )),
    }
}

/// `v` rescaled so its p-norm equals `target_norm` (exact up to rounding,
/// since both norms are positively homogeneous).
pub fn scale_to_norm(v: &Tensor, p: Norm, target_norm: f64) -> Result<Tensor> {
    if !(target_norm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target norm must be positive, got {target_norm}"
        )));
    }
    let current = lp_norm(v, p)?;
    if current <= 0.0 {
        return Err(Error::InvalidParameter(
            "cannot rescale a zero perturbation".into(),
        ));
    }
    let factor = target_norm / current;
    Ok(Tensor::from_vec(
        v.data()
            .iter()
            .map(|&x| (factor * x as f64) as f32)
            .collect(),
    ))
}

/// Fooling rates of one perturbation rescaled across a grid of norms.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub norms: Vec<f64>,
    pub rates: Vec<f64>,
    pub perturbation_id: String,
}

pub fn norm_sweep(
    x: &Dataset,
    v: &Tensor,
    model: &Model,
    p: Norm,
    norms: &[f64],
    clamp: bool,
    perturbation_id: &str,
) -> Result<SweepCurve> {
    if norms.is_empty() {
        return Err(Error::InvalidParameter("empty norm list".into()));
    }
    for pair in norms.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::InvalidParameter(format!(
                "norms must be strictly increasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    if !(norms[0] > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "norms must be positive, got {}",
            norms[0]
        )));
    }
    let mut rates = Vec::with_capacity(norms.len());
    for &target in norms {
        let scaled = scale_to_norm(v, p, target)?;
        rates.push(fooling_rate(x, &scaled, model, clamp)?.rate);
    }
    Ok(SweepCurve {
        norms: norms.to_vec(),
        rates,
        perturbation_id: perturbation_id.to_string(),
    })
}

/// Renders with 6 significant digits, trimming trailing zeros. Values far
/// from 1 stay in exponential notation.
pub(crate) fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exponential = format!("{x:.5e}");
    let rounded: f64 = exponential.parse().expect("own formatting parses back");
    let mag = rounded.abs().log10().floor() as i32;
    if (-4..=8).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{rounded:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        exponential
    }
}

pub fn curves_to_csv(curves: &[SweepCurve]) -> Result<String> {
    let mut out = String::from("norm");
    for c in curves {
        out.push(',');
        out.push_str(&c.perturbation_id);
    }
    out.push('\n');
    let Some(first) = curves.first() else {
        return Ok(out);
    };
    for c in &curves[1..] {
        if c.norms != first.norms {
            return Err(Error::InvalidParameter(format!(
                "curve {:?} has a different norm grid than {:?}",
                c.perturbation_id, first.perturbation_id
            )));
        }
    }
    for (row, &norm) in first.norms.iter().enumerate() {
        out.push_str(&sig6(norm));
        for c in curves {
            out.push(',');
            out.push_str(&sig6(c.rates[row]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_curve_csv(curves: &[SweepCurve], path: &Path) -> Result<()> {
    std::fs::write(path, curves_to_csv(curves)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{train, Layer, TrainConfig};
    use crate::dataset::generate_blobs;

    /// 1-D model scoring [x, -x]: label 0 for positive x, 1 for negative.
    fn threshold_model() -> Model {
        Model::new(
            vec![Layer::Affine {
                weights: Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap(),
                bias: Tensor::from_vec(vec![0.0, 0.0]),
            }],
            Tensor::from_vec(vec![0.0]),
            Tensor::from_vec(vec![1.0]),
        )
        .unwrap()
    }

    #[test]
    fn zero_perturbation_never_fools() {
        let ds = generate_blobs(3, 20, 4, 6.0, 1.0, 1).unwrap();
        let model = train(
            &ds,
            &TrainConfig {
                epochs: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let report = fooling_rate(&ds, &Tensor::from_vec(vec![0.0; 4]), &model, false).unwrap();
        assert_eq!(report.fooled, 0);
        assert_eq!(report.rate, 0.0);
        assert_eq!(report.total, 60);
        // Only identity transitions present.
        assert!(report.transitions.iter().all(|&(a, b, _)| a == b));
    }

    #[test]
    fn threshold_model_half_fooled() {
        let images = Tensor::new(vec![2, 1], vec![-1.0, 1.0]).unwrap();
        let ds = crate::dataset::Dataset::new(images, vec![1, 0], vec!["pos".into(), "neg".into()])
            .unwrap();
        let report =
            fooling_rate(&ds, &Tensor::from_vec(vec![1.5]), &threshold_model(), false).unwrap();
        assert_eq!(report.fooled, 1);
        assert_eq!(report.rate, 0.5);
        assert_eq!(report.transitions, vec![(0, 0, 1), (1, 0, 1)]);
    }

    #[test]
    fn transition_counts_conserve_fooled_and_total() {
        let ds = generate_blobs(4, 25, 6, 5.0, 1.0, 13).unwrap();
        let model = train(
            &ds,
            &TrainConfig {
                epochs: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = Rng::new(4);
        let v = random_perturbation(6, Norm::L2, 4.0, &mut rng).unwrap();
        let report = fooling_rate(&ds, &v, &model, false).unwrap();
        let fooled: usize = report
            .transitions
            .iter()
            .filter(|&&(a, b, _)| a != b)
            .map(|&(_, _, c)| c)
            .sum();
        let total: usize = report.transitions.iter().map(|&(_, _, c)| c).sum();
        assert_eq!(fooled, report.fooled);
        assert_eq!(total, report.total);
        assert!((0.0..=1.0).contains(&report.rate));
    }

    #[test]
    fn fooling_rate_is_permutation_invariant() {
        let ds = generate_blobs(3, 15, 5, 5.0, 1.0, 6).unwrap();
        let model = train(
            &ds,
            &TrainConfig {
                epochs: 10,
                ..Default::default()
            },
        )
        .unwrap();
        let shuffled = crate::dataset::sample_attack_set(&ds, 15, 99).unwrap();
        let mut rng = Rng::new(8);
        let v = random_perturbation(5, Norm::L2, 3.0, &mut rng).unwrap();
        let a = fooling_rate(&ds, &v, &model, false).unwrap();
        let b = fooling_rate(&shuffled, &v, &model, false).unwrap();
        assert_eq!(a.rate, b.rate);
        assert_eq!(a.transitions, b.transitions);
    }

    #[test]
    fn clamp_restricts_to_data_range() {
        let images = Tensor::new(vec![2, 1], vec![-1.0, 1.0]).unwrap();
        let ds = crate::dataset::Dataset::new(images, vec![1, 0], vec!["pos".into(), "neg".into()])
            .unwrap();
        // Unclamped, +10 flips the negative point; clamped to [-1, 1] the
        // perturbed value saturates at 1.0, which still flips it, while the
        // positive point stays at 1.0 and keeps its label.
        let v = Tensor::from_vec(vec![10.0]);
        let unclamped = fooling_rate(&ds, &v, &threshold_model(), false).unwrap();
        let clamped = fooling_rate(&ds, &v, &threshold_model(), true).unwrap();
        assert_eq!(unclamped.fooled, 1);
        assert_eq!(clamped.fooled, 1);
        assert!(clamped.clamp_applied);
        assert!(!unclamped.clamp_applied);
    }

    #[test]
    fn random_perturbation_has_exact_norm() {
        let mut rng = Rng::new(17);
        for &(p, xi) in &[(Norm::L2, 7.5), (Norm::LInf, 0.25)] {
            let v = random_perturbation(64, p, xi, &mut rng).unwrap();
            let norm = lp_norm(&v, p).unwrap();
            assert!(
                (norm - xi).abs() <= 1e-5 * xi,
                "{p:?} norm {norm} vs xi {xi}"
            );
        }
    }

    #[test]
    fn random_perturbation_is_seed_reproducible() {
        let a = random_perturbation(16, Norm::L2, 2.0, &mut Rng::new(5)).unwrap();
        let b = random_perturbation(16, Norm::L2, 2.0, &mut Rng::new(5)).unwrap();
        assert_eq!(a.data(), b.data());
        let c = random_perturbation(16, Norm::L2, 2.0, &mut Rng::new(6)).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn sphere_sample_is_nearly_orthogonal_to_a_fixed_axis() {
        let d = 10_000;
        let mut rng = Rng::new(2);
        let v = random_perturbation(d, Norm::L2, 1.0, &mut rng).unwrap();
        // Inner product with e_0 for a unit sphere sample has std 1/sqrt(d).
        let dot = v.data()[0] as f64;
        assert!(dot.abs() <= 3.0 / (d as f64).sqrt(), "dot {dot}");
    }

    #[test]
    fn linf_random_is_sign_valued() {
        let mut rng = Rng::new(9);
        let v = random_perturbation(32, Norm::LInf, 0.5, &mut rng).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.5 || x == -0.5));
        assert!(v.data().iter().any(|&x| x > 0.0));
        assert!(v.data().iter().any(|&x| x < 0.0));
    }

    #[test]
    fn scale_to_norm_examples() {
        let v = Tensor::from_vec(vec![3.0, 4.0]);
        let scaled = scale_to_norm(&v, Norm::L2, 10.0).unwrap();
        assert_eq!(scaled.data(), &[6.0, 8.0]);

        let same = scale_to_norm(&v, Norm::L2, 5.0).unwrap();
        for (&a, &b) in same.data().iter().zip(v.data()) {
            assert!((a - b).abs() <= 1e-6);
        }

        let target = 0.123;
        let rescaled = scale_to_norm(&v, Norm::LInf, target).unwrap();
        let norm = lp_norm(&rescaled, Norm::LInf).unwrap();
        assert!((norm - target).abs() <= 1e-5 * target);

        assert!(scale_to_norm(&Tensor::from_vec(vec![0.0, 0.0]), Norm::L2, 1.0).is_err());
        assert!(scale_to_norm(&v, Norm::L2, 0.0).is_err());
    }

    #[test]
    fn vanishing_norm_sweep_point_has_near_zero_rate() {
        let ds = generate_blobs(3, 20, 4, 8.0, 1.0, 3).unwrap();
        let model = train(&ds, &TrainConfig::default()).unwrap();
        let mut rng = Rng::new(1);
        let v = random_perturbation(4, Norm::L2, 1.0, &mut rng).unwrap();
        let curve = norm_sweep(&ds, &v, &model, Norm::L2, &[1e-9], false, "tiny").unwrap();
        assert_eq!(curve.rates, vec![0.0]);
    }

    #[test]
    fn norm_sweep_validates_the_grid() {
        let ds = generate_blobs(2, 5, 3, 8.0, 1.0, 0).unwrap();
        let model = train(
            &ds,
            &TrainConfig {
                epochs: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let v = Tensor::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(norm_sweep(&ds, &v, &model, Norm::L2, &[], false, "x").is_err());
        assert!(norm_sweep(&ds, &v, &model, Norm::L2, &[2.0, 1.0], false, "x").is_err());
        assert!(norm_sweep(&ds, &v, &model, Norm::L2, &[0.0, 1.0], false, "x").is_err());
        assert!(norm_sweep(&ds, &v, &model, Norm::L2, &[1.0, 1.0], false, "x").is_err());
    }

    #[test]
    fn csv_rendering_is_deterministic_and_compact() {
        let a = SweepCurve {
            norms: vec![0.5, 2.0, 2000.0],
            rates: vec![0.0, 0.4166666666, 1.0],
            perturbation_id: "uap".into(),
        };
        let b = SweepCurve {
            norms: vec![0.5, 2.0, 2000.0],
            rates: vec![0.001234567, 0.25, 0.5],
            perturbation_id: "random-0".into(),
        };
        let csv = curves_to_csv(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(
            csv,
            "norm,uap,random-0\n0.5,0,0.00123457\n2,0.416667,0.25\n2000,1,0.5\n"
        );
        assert_eq!(curves_to_csv(&[a.clone(), b]).unwrap(), csv);

        assert_eq!(curves_to_csv(&[]).unwrap(), "norm\n");

        let mismatched = SweepCurve {
            norms: vec![1.0, 2.0, 3.0],
            rates: vec![0.0, 0.0, 0.0],
            perturbation_id: "other".into(),
        };
        assert!(curves_to_csv(&[a, mismatched]).is_err());
    }

    #[test]
    fn csv_file_round_trip_and_line_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let c1 = SweepCurve {
            norms: vec![1.0, 2.0, 3.0],
            rates: vec![0.1, 0.2, 0.3],
            perturbation_id: "a".into(),
        };
        let c2 = SweepCurve {
            norms: vec![1.0, 2.0, 3.0],
            rates: vec![0.15, 0.25, 0.35],
            perturbation_id: "b".into(),
        };
        write_curve_csv(&[c1.clone(), c2.clone()], &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        assert_eq!(String::from_utf8_lossy(&first).lines().count(), 4);
        write_curve_csv(&[c1, c2], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(0.5), "0.5");
        assert_eq!(sig6(2000.0), "2000");
        assert_eq!(sig6(0.4166666666), "0.416667");
        assert_eq!(sig6(123456789.0), "123457000");
        assert_eq!(sig6(1.23456789e-7), "1.23457e-7");
        assert_eq!(sig6(-0.25), "-0.25");
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let ds = generate_blobs(2, 5, 3, 8.0, 1.0, 0).unwrap();
        let model = train(
            &ds,
            &TrainConfig {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fooling_rate(&ds, &Tensor::from_vec(vec![0.0; 2]), &model, false).is_err());
        let other = generate_blobs(2, 5, 4, 8.0, 1.0, 0).unwrap();
        assert!(fooling_rate(&other, &Tensor::from_vec(vec![0.0; 4]), &model, false).is_err());
    }
}
