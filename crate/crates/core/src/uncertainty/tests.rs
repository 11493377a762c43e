use super::*;
use crate::net::Activation;
use crate::numerics::sample_gaussian;

fn arch_2layer(dropout: f64) -> MlpArchitecture {
    MlpArchitecture::new(
        vec![5, 4, 3],
        vec![Activation::Relu],
        vec![0.0, dropout],
    )
    .unwrap()
}

fn seeded_params(arch: &MlpArchitecture, seed: u64) -> ParameterSet {
    ParameterSet::init_gaussian(arch, &mut RngStream::new(seed)).unwrap()
}

#[test]
fn entropy_known_values() {
    assert_eq!(predictive_entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
    let uniform = vec![0.1; 10];
    assert!((predictive_entropy(&uniform).unwrap() - 10.0f64.ln()).abs() < 1e-12);
    let two_point = [0.5, 0.5, 0.0, 0.0];
    assert!((predictive_entropy(&two_point).unwrap() - 2.0f64.ln()).abs() < 1e-15);
    assert!(predictive_entropy(&[-0.1, 1.1]).is_err());
}

#[test]
fn zero_dropout_prediction_is_deterministic() {
    let arch = arch_2layer(0.0);
    let params = seeded_params(&arch, 1);
    let x = [0.3, 0.1, 0.9, 0.2, 0.5];
    let a = mc_predict_classification(&params, &arch, &x, Some(1), 1, &mut RngStream::new(7)).unwrap();
    let b = mc_predict_classification(&params, &arch, &x, Some(1), 64, &mut RngStream::new(8)).unwrap();
    for (pa, pb) in a.mean.iter().zip(&b.mean) {
        assert!((pa - pb).abs() < 1e-12);
    }
}

#[test]
fn mean_probs_sum_to_one() {
    let arch = arch_2layer(0.5);
    let params = seeded_params(&arch, 2);
    let x = [0.3, 0.1, 0.9, 0.2, 0.5];
    let s = mc_predict_classification(&params, &arch, &x, None, 33, &mut RngStream::new(3)).unwrap();
    let total: f64 = s.mean.iter().sum();
    assert!((total - 1.0).abs() < 1e-10);
    let h = s.entropy.unwrap();
    assert!((0.0..=(3.0f64).ln() + 1e-12).contains(&h));
}

#[test]
fn mc_prediction_matches_exhaustive_mask_enumeration() {
    // One dropout layer with 4 units: enumerate all 16 masks exactly,
    // weight by their Bernoulli probabilities, and compare the MC average.
    let arch = arch_2layer(0.3);
    let params = seeded_params(&arch, 5);
    let x = [0.3, 0.1, 0.9, 0.2, 0.5];
    let x_t = Tensor::from_vec(vec![1, 5], x.to_vec()).unwrap();

    let p_keep: f64 = 0.7;
    let mut exact = vec![0.0; 3];
    for bits in 0..16u32 {
        let mask_vals: Vec<f64> = (0..4).map(|u| ((bits >> u) & 1) as f64).collect();
        let kept = mask_vals.iter().sum::<f64>();
        let weight = p_keep.powf(kept) * (1.0 - p_keep).powf(4.0 - kept);
        let masks = MaskSet::from_tensors(
            vec![vec![
                Tensor::from_vec(vec![1, 5], vec![1.0; 5]).unwrap(),
                Tensor::from_vec(vec![1, 4], mask_vals).unwrap(),
            ]],
            1,
        );
        let (logits, _) = forward_with_masks(&params, &arch, &x_t, &masks, 1).unwrap();
        let row: Vec<f64> = (0..3).map(|j| logits.at3(0, 0, j)).collect();
        let probs: Vec<f64> = log_softmax(&row).unwrap().iter().map(|v| v.exp()).collect();
        for (e, p) in exact.iter_mut().zip(&probs) {
            *e += weight * p;
        }
    }

    let k_test = 10_000;
    let s = mc_predict_classification(&params, &arch, &x, None, k_test, &mut RngStream::new(11)).unwrap();
    // Bernoulli MC error per class is below sqrt(1/(4 K)); 3 sigma bound.
    let bound = 3.0 * (0.25 / k_test as f64).sqrt();
    for (mc, ex) in s.mean.iter().zip(&exact) {
        assert!((mc - ex).abs() < bound, "mc {mc} vs exact {ex}");
    }
}

#[test]
fn regression_log_likelihood_with_identical_samples_is_gaussian_density() {
    let arch = MlpArchitecture::new(vec![2, 1], vec![], vec![0.0]).unwrap();
    let params = seeded_params(&arch, 4);
    let x = [0.2, -0.4];
    let tau = 2.0;
    let s = mc_predict_regression(&params, &arch, &x, Some(&[0.9]), tau, 16, &mut RngStream::new(1)).unwrap();
    // Dropout 0: all K samples identical, so the LL is the single Gaussian
    // log-density at the deterministic prediction.
    let pred = s.mean[0];
    let expected = 0.5 * (tau / (2.0 * std::f64::consts::PI)).ln() - tau / 2.0 * (0.9 - pred).powi(2);
    assert!((s.log_likelihood.unwrap() - expected).abs() < 1e-12);
}

#[test]
fn fgs_zero_step_is_identity_and_linf_bound_holds() {
    let arch = arch_2layer(0.4);
    let params = seeded_params(&arch, 6);
    let x = [0.3, 0.1, 0.9, 0.2, 0.5];
    let adv0 = fgs_untargeted(&params, &arch, &x, 0.0, 10, &mut RngStream::new(5)).unwrap();
    assert_eq!(adv0, x.to_vec());
    for eta in [0.05, 0.3, 0.5] {
        let adv = fgs_untargeted(&params, &arch, &x, eta, 10, &mut RngStream::new(5)).unwrap();
        for (a, b) in adv.iter().zip(&x) {
            assert!((a - b).abs() <= eta + 1e-15);
            assert!((0.0..=1.0).contains(a));
        }
    }
}

#[test]
fn targeted_trajectory_respects_step_bounds() {
    let arch = arch_2layer(0.4);
    let params = seeded_params(&arch, 9);
    let x = [0.3, 0.1, 0.9, 0.2, 0.5];
    let steps = 7;
    let eta = 0.01;
    let traj =
        targeted_iterative(&params, &arch, &x, 2, eta, steps, 10, &mut RngStream::new(3)).unwrap();
    assert_eq!(traj.len(), steps + 1);
    assert_eq!(traj[0], x.to_vec());
    for (t, point) in traj.iter().enumerate() {
        for (a, b) in point.iter().zip(&x) {
            assert!((a - b).abs() <= t as f64 * eta + 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
    }
    let empty = targeted_iterative(&params, &arch, &x, 2, eta, 0, 10, &mut RngStream::new(3)).unwrap();
    assert_eq!(empty, vec![x.to_vec()]);
}

#[test]
fn input_grad_of_log_mean_prob_matches_finite_differences() {
    let arch = arch_2layer(0.4);
    let params = seeded_params(&arch, 13);
    let x = [0.3, 0.1, 0.9, 0.2, 0.5];
    let mut rng = RngStream::new(21);
    let masks = sample_masks(&arch, 1, 6, &mut rng).unwrap();
    let class = 1;
    let (grad, _) = log_mean_prob_input_grad(&params, &arch, &x, class, &masks).unwrap();
    let f = |pt: &[f64]| {
        let x_t = Tensor::from_vec(vec![1, 5], pt.to_vec()).unwrap();
        let (logits, _) = forward_with_masks(&params, &arch, &x_t, &masks, 1).unwrap();
        let per_k = softmax_rows(&logits).unwrap();
        let mean: f64 = per_k.iter().map(|p| p[class]).sum::<f64>() / per_k.len() as f64;
        mean.ln()
    };
    let h = 1e-6;
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        assert!(
            (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3) < 1e-5,
            "coord {i}: {fd} vs {}",
            grad[i]
        );
    }
}

#[test]
fn detection_curve_eta_zero_row_equals_clean_metrics() {
    let arch = arch_2layer(0.4);
    let params = seeded_params(&arch, 17);
    let mut rng = RngStream::new(2);
    let n = 12;
    let xs = sample_gaussian(&mut rng, 0.5, 0.15, &[n, 5]).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let base = RngStream::new(77);
    let rows = detection_curve(
        &params, &arch, &xs, &labels,
        &SweepSpec::FgsEtas(vec![0.0, 0.2]),
        10, 10, &base, 1,
    )
    .unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].n_points, n);

    // Recompute the eta = 0 row by hand with the same substream layout.
    let mut correct = 0;
    let mut entropy = 0.0;
    for i in 0..n {
        let mut stream = base.substream(i as u64);
        let x = xs.row(i).to_vec();
        let adv = fgs_untargeted(&params, &arch, &x, 0.0, 10, &mut stream).unwrap();
        assert_eq!(adv, x);
        let s = mc_predict_classification(&params, &arch, &adv, Some(labels[i]), 10, &mut stream).unwrap();
        correct += (argmax(&s.mean) == labels[i]) as usize;
        entropy += s.entropy.unwrap();
    }
    assert_eq!(rows[0].accuracy, correct as f64 / n as f64);
    assert!((rows[0].mean_entropy - entropy / n as f64).abs() < 1e-15);
}

#[test]
fn detection_curve_is_thread_count_invariant() {
    let arch = arch_2layer(0.5);
    let params = seeded_params(&arch, 23);
    let mut rng = RngStream::new(4);
    let xs = sample_gaussian(&mut rng, 0.5, 0.2, &[9, 5]).unwrap();
    let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
    let base = RngStream::new(3);
    let spec = SweepSpec::TargetedSteps { target: 0, eta: 0.01, steps: vec![0, 3, 5] };
    let serial = detection_curve(&params, &arch, &xs, &labels, &spec, 5, 7, &base, 1).unwrap();
    let parallel_rows = detection_curve(&params, &arch, &xs, &labels, &spec, 5, 7, &base, 4).unwrap();
    assert_eq!(serial, parallel_rows);
    assert_eq!(serial[0].sweep_value, 0.0);
}
