//! Minimal per-example adversarial perturbations by iterative linearization.

use crate::classifier::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradient differences smaller than this are treated as degenerate geometry
/// rather than divided by.
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DeepFoolConfig {
    /// Multiplicative factor (1 + overshoot) pushing the accumulated step
    /// strictly across the boundary; the crossing check runs at the overshot
    /// point, which is what makes the affine case terminate in one step.
    pub overshoot: f64,
    pub max_iterations: usize,
    /// Restrict competitors to the top-k classes by score at the starting
    /// point; `None` considers every class.
    pub num_candidate_classes: Option<usize>,
}

impl Default for DeepFoolConfig {
    fn default() -> Self {
        Self {
            overshoot: 0.02,
            max_iterations: 50,
            num_candidate_classes: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeepFoolResult {
    /// Perturbation including the overshoot factor; `x + r` flips on success.
    pub r: Tensor,
    /// Number of linearization steps taken.
    pub iterations: usize,
    pub success: bool,
    pub original_label: usize,
    /// Prediction at `x + r`; equals `original_label` on failure.
    pub new_label: usize,
    /// Aborted because the chosen boundary had a vanishing gradient
    /// difference.
    pub degenerate: bool,
    /// ‖accumulated r‖₂ (pre-overshoot) after each step.
    pub norm_trace: Vec<f64>,
}

/// Smallest label-flipping perturbation for `x`, approximated by stepping to
/// the nearest linearized decision boundary until the prediction changes.
pub fn deepfool(x: &Tensor, model: &Model, cfg: &DeepFoolConfig) -> Result<DeepFoolResult> {
    if !(cfg.overshoot > 0.0 && cfg.overshoot < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "overshoot must be in (0, 1), got {}",
            cfg.overshoot
        )));
    }
    if cfg.max_iterations == 0 {
        return Err(Error::InvalidParameter(
            "max_iterations must be >= 1".into(),
        ));
    }
    let num_classes = model.num_classes();
    if let Some(k) = cfg.num_candidate_classes {
        if k < 2 || k > num_classes {
            return Err(Error::InvalidParameter(format!(
                "num_candidate_classes must be in [2, {num_classes}], got {k}"
            )));
        }
    }

    let d = model.input_dim();
    let initial_scores = model.scores_f64(x)?;
    let original_label = argmax(&initial_scores);

    // Competitors fixed from the starting point's score order.
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| initial_scores[b].partial_cmp(&initial_scores[a]).unwrap());
    let keep = cfg.num_candidate_classes.unwrap_or(num_classes);
    let competitors: Vec<usize> = order
        .into_iter()
        .take(keep)
        .filter(|&k| k != original_label)
        .collect();

    let scale = 1.0 + cfg.overshoot;
    let mut r_tot = vec![0.0f64; d];
    let mut iterations = 0;
    let mut degenerate = false;
    let mut norm_trace = Vec::new();
    let mut current_label = original_label;

    while iterations < cfg.max_iterations {
        let x_cur = Tensor::from_vec(
            x.data()
                .iter()
                .zip(&r_tot)
                .map(|(&xi, &ri)| (xi as f64 + scale * ri) as f32)
                .collect(),
        );
        let scores = model.scores_f64(&x_cur)?;
        current_label = argmax(&scores);
        if current_label != original_label {
            break;
        }

        let grad_orig = model.input_gradient(&x_cur, original_label)?;
        let mut best: Option<(f64, Vec<f64>, f64)> = None; // (ratio, w, |f|)
        for &k in &competitors {
            let grad_k = model.input_gradient(&x_cur, k)?;
            let w: Vec<f64> = grad_k
                .data()
                .iter()
                .zip(grad_orig.data())
                .map(|(&gk, &go)| gk as f64 - go as f64)
                .collect();
            let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if w_norm < DEGENERATE_NORM {
                continue;
            }
            let f = (scores[k] - scores[original_label]).abs();
            let ratio = f / w_norm;
            if best.as_ref().is_none_or(|(r, _, _)| ratio < *r) {
                best = Some((ratio, w, f));
            }
        }
        let Some((_, w, f)) = best else {
            degenerate = true;
            break;
        };

        let w_sq: f64 = w.iter().map(|v| v * v).sum();
        let step = f / w_sq;
        for (ri, wi) in r_tot.iter_mut().zip(&w) {
            *ri += step * wi;
        }
        iterations += 1;
        norm_trace.push(r_tot.iter().map(|v| v * v).sum::<f64>().sqrt());
    }

    let r = Tensor::from_vec(r_tot.iter().map(|&ri| (scale * ri) as f32).collect());
    let x_final = crate::tensor::axpy(1.0, &r, x)?;
    let final_label = model.predict(&x_final)?;
    let success = final_label != original_label;
    let new_label = if success { final_label } else { original_label };
    let _ = current_label;
    Ok(DeepFoolResult {
        r,
        iterations,
        success,
        original_label,
        new_label,
        degenerate,
        norm_trace,
    })
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Layer, Model};
    use crate::rng::Rng;
    use crate::tensor::lp_norm;

    fn affine_model(
        num_classes: usize,
        d: usize,
        rng: &mut Rng,
        with_normalization: bool,
    ) -> Model {
        let s = 1.0 / (d as f32).sqrt();
        let w: Vec<f32> = (0..num_classes * d).map(|_| rng.uniform(-s, s)).collect();
        let b: Vec<f32> = (0..num_classes).map(|_| rng.uniform(-0.2, 0.2)).collect();
        let (mean, std) = if with_normalization {
            (
                (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                (0..d).map(|_| rng.uniform(0.5, 2.0)).collect(),
            )
        } else {
            (vec![0.0; d], vec![1.0; d])
        };
        Model::new(
            vec![Layer::Affine {
                weights: Tensor::new(vec![num_classes, d], w).unwrap(),
                bias: Tensor::from_vec(b),
            }],
            Tensor::from_vec(mean),
            Tensor::from_vec(std),
        )
        .unwrap()
    }

    /// Analytic minimal distance to the nearest class boundary of an affine
    /// model, derived by hand: score_k(x) = w_k (x - m)/s + b_k, so the
    /// boundary against k0 is a hyperplane with effective normal
    /// (w_k - w_k0)/s.
    fn affine_min_distance(model: &Model, x: &Tensor) -> f64 {
        let scores = model.scores_f64(x).unwrap();
        let k0 = {
            let mut best = 0;
            for (i, &v) in scores.iter().enumerate().skip(1) {
                if v > scores[best] {
                    best = i;
                }
            }
            best
        };
        let Layer::Affine { weights, .. } = &model.layers()[0] else {
            panic!("affine model expected");
        };
        let (_, std) = model.normalization();
        let d = model.input_dim();
        let w = weights.data();
        let mut min = f64::INFINITY;
        for k in 0..model.num_classes() {
            if k == k0 {
                continue;
            }
            let mut norm_sq = 0.0f64;
            for j in 0..d {
                let eff = (w[k * d + j] as f64 - w[k0 * d + j] as f64) / std.data()[j] as f64;
                norm_sq += eff * eff;
            }
            let dist = (scores[k] - scores[k0]).abs() / norm_sq.sqrt();
            min = min.min(dist);
        }
        min
    }

    #[test]
    fn affine_models_flip_in_one_iteration_at_the_analytic_distance() {
        let mut rng = Rng::new(7);
        let cfg = DeepFoolConfig::default();
        for trial in 0..50 {
            let num_classes = 2 + rng.index(9);
            let d = 2 + rng.index(63);
            let model = affine_model(num_classes, d, &mut rng, trial % 2 == 0);
            let x = Tensor::from_vec((0..d).map(|_| rng.uniform(-2.0, 2.0)).collect());
            let res = deepfool(&x, &model, &cfg).unwrap();
            assert!(res.success, "trial {trial} did not flip");
            assert_eq!(res.iterations, 1, "trial {trial}");
            assert!(!res.degenerate);
            let got = lp_norm(&res.r, crate::tensor::Norm::L2).unwrap() / (1.0 + cfg.overshoot);
            let want = affine_min_distance(&model, &x);
            assert!(
                (got - want).abs() <= 1e-4 * want.max(1e-12),
                "trial {trial}: {got} vs analytic {want}"
            );
            let moved = crate::tensor::axpy(1.0, &res.r, &x).unwrap();
            assert_eq!(model.predict(&moved).unwrap(), res.new_label);
            assert_ne!(res.new_label, res.original_label);
        }
    }

    // Hand case: scores are [x0, -x0], so from x = [2, 0] the boundary
    // x0 = 0 is at distance 2 and the step is [-2, 0].
    #[test]
    fn two_class_hand_computed_step() {
        let model = Model::new(
            vec![Layer::Affine {
                weights: Tensor::new(vec![2, 2], vec![1.0, 0.0, -1.0, 0.0]).unwrap(),
                bias: Tensor::from_vec(vec![0.0, 0.0]),
            }],
            Tensor::from_vec(vec![0.0, 0.0]),
            Tensor::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let x = Tensor::from_vec(vec![2.0, 0.0]);
        let res = deepfool(&x, &model, &DeepFoolConfig::default()).unwrap();
        assert!(res.success);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.original_label, 0);
        assert_eq!(res.new_label, 1);
        assert!((res.r.data()[0] as f64 + 2.04).abs() <= 1e-6);
        assert!((res.r.data()[1] as f64).abs() <= 1e-9);
    }

    #[test]
    fn three_class_matches_radial_brute_force() {
        let mut rng = Rng::new(11);
        let cfg = DeepFoolConfig::default();
        for trial in 0..5 {
            let model = affine_model(3, 2, &mut rng, false);
            let x = Tensor::from_vec(vec![rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)]);
            let res = deepfool(&x, &model, &cfg).unwrap();
            assert!(res.success);
            let df_norm = lp_norm(&res.r, crate::tensor::Norm::L2).unwrap() / (1.0 + cfg.overshoot);

            // 360 directions x 2000 radii out to twice the deepfool norm.
            let k0 = model.predict(&x).unwrap();
            let max_radius = 2.0 * df_norm;
            let mut brute = f64::INFINITY;
            for a in 0..360 {
                let theta = a as f64 * std::f64::consts::PI / 180.0;
                let (dx, dy) = (theta.cos(), theta.sin());
                for step in 1..=2000 {
                    let radius = max_radius * step as f64 / 2000.0;
                    if radius >= brute {
                        break;
                    }
                    let probe = Tensor::from_vec(vec![
                        (x.data()[0] as f64 + radius * dx) as f32,
                        (x.data()[1] as f64 + radius * dy) as f32,
                    ]);
                    if model.predict(&probe).unwrap() != k0 {
                        brute = brute.min(radius);
                        break;
                    }
                }
            }
            assert!(
                brute.is_finite(),
                "trial {trial}: brute force found no flip"
            );
            let rel = (df_norm - brute).abs() / brute;
            assert!(
                rel <= 0.05,
                "trial {trial}: deepfool {df_norm} vs brute {brute} (rel {rel})"
            );
        }
    }

    #[test]
    fn identical_class_rows_are_degenerate() {
        let model = Model::new(
            vec![Layer::Affine {
                weights: Tensor::new(vec![2, 2], vec![0.3, -0.7, 0.3, -0.7]).unwrap(),
                bias: Tensor::from_vec(vec![0.1, 0.1]),
            }],
            Tensor::from_vec(vec![0.0, 0.0]),
            Tensor::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let res = deepfool(
            &Tensor::from_vec(vec![1.0, 1.0]),
            &model,
            &DeepFoolConfig::default(),
        )
        .unwrap();
        assert!(!res.success);
        assert!(res.degenerate);
        assert_eq!(res.iterations, 0);
        assert_eq!(res.new_label, res.original_label);
        assert_eq!(res.r.data(), &[0.0, 0.0]);
    }

    fn trained_blob_model() -> (crate::dataset::Dataset, Model) {
        let ds = crate::dataset::generate_blobs(5, 40, 32, 5.0, 1.0, 23).unwrap();
        let model = crate::classifier::train(
            &ds,
            &crate::classifier::TrainConfig {
                epochs: 30,
                ..Default::default()
            },
        )
        .unwrap();
        (ds, model)
    }

    #[test]
    fn success_always_means_a_label_flip_on_nonlinear_models() {
        let (ds, model) = trained_blob_model();
        let cfg = DeepFoolConfig::default();
        let mut successes = 0;
        for i in 0..ds.num_images() {
            let x = ds.image(i);
            let res = deepfool(&x, &model, &cfg).unwrap();
            assert!(res.iterations <= cfg.max_iterations);
            if res.success {
                successes += 1;
                let moved = crate::tensor::axpy(1.0, &res.r, &x).unwrap();
                let label = model.predict(&moved).unwrap();
                assert_eq!(label, res.new_label);
                assert_ne!(label, res.original_label);
            }
            for pair in res.norm_trace.windows(2) {
                assert!(
                    pair[1] >= pair[0] - 1e-12,
                    "norm trace decreased: {:?}",
                    res.norm_trace
                );
            }
        }
        assert!(successes >= ds.num_images() * 9 / 10, "{successes} flips");
    }

    /// Bisection along random directions gives an independent upper bound on
    /// the minimal flipping norm; deepfool should beat it almost always.
    #[test]
    fn deepfool_beats_random_direction_bisection() {
        let (ds, model) = trained_blob_model();
        let cfg = DeepFoolConfig::default();
        let mut rng = Rng::new(501);
        let mut wins = 0;
        let mut total = 0;
        for i in (0..ds.num_images()).step_by(2) {
            let x = ds.image(i);
            let res = deepfool(&x, &model, &cfg).unwrap();
            if !res.success {
                continue;
            }
            let df_norm = lp_norm(&res.r, crate::tensor::Norm::L2).unwrap() / (1.0 + cfg.overshoot);
            let k0 = res.original_label;
            let d = ds.dim();
            let mut best = f64::INFINITY;
            for _ in 0..100 {
                let dir: Vec<f64> = (0..d).map(|_| rng.standard_normal() as f64).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let flips_at = |radius: f64| {
                    let probe = Tensor::from_vec(
                        x.data()
                            .iter()
                            .zip(&dir)
                            .map(|(&xi, &di)| (xi as f64 + radius * di / norm) as f32)
                            .collect(),
                    );
                    model.predict(&probe).unwrap() != k0
                };
                // Outward scan, then bisect.
                let mut hi = df_norm.max(1e-3);
                let mut found = false;
                for _ in 0..12 {
                    if flips_at(hi) {
                        found = true;
                        break;
                    }
                    hi *= 2.0;
                }
                if !found {
                    continue;
                }
                let mut lo = 0.0;
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if flips_at(mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                best = best.min(hi);
            }
            if best.is_finite() {
                total += 1;
                if df_norm <= best {
                    wins += 1;
                }
            }
        }
        assert!(total >= 50, "only {total} comparisons");
        assert!(
            wins * 100 >= total * 95,
            "deepfool smaller in only {wins}/{total} cases"
        );
    }

    #[test]
    fn candidate_restriction_and_validation() {
        let mut rng = Rng::new(3);
        let model = affine_model(6, 4, &mut rng, false);
        let x = Tensor::from_vec(vec![0.3, -0.2, 0.9, 0.1]);
        let all = deepfool(&x, &model, &DeepFoolConfig::default()).unwrap();
        let restricted = deepfool(
            &x,
            &model,
            &DeepFoolConfig {
                num_candidate_classes: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(all.success && restricted.success);
        // The restricted search still flips, at a norm no smaller than the
        // unrestricted one.
        let n_all = lp_norm(&all.r, crate::tensor::Norm::L2).unwrap();
        let n_res = lp_norm(&restricted.r, crate::tensor::Norm::L2).unwrap();
        assert!(n_res >= n_all - 1e-9);

        for bad in [0, 1, 7] {
            let err = deepfool(
                &x,
                &model,
                &DeepFoolConfig {
                    num_candidate_classes: Some(bad),
                    ..Default::default()
                },
            );
            assert!(err.is_err(), "num_candidate_classes={bad} accepted");
        }
        assert!(deepfool(
            &x,
            &model,
            &DeepFoolConfig {
                overshoot: 0.0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(deepfool(
            &x,
            &model,
            &DeepFoolConfig {
                max_iterations: 0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = Rng::new(3);
        let model = affine_model(3, 4, &mut rng, false);
        let err = deepfool(
            &Tensor::from_vec(vec![1.0, 2.0]),
            &model,
            &DeepFoolConfig::default(),
        );
        assert!(err.is_err());
    }
}
