mod common;

use approx::assert_abs_diff_eq;
use common::*;
use nalgebra::DMatrix;
use wonder_core::spectral::*;

#[test]
fn stieltjes_matches_self_consistency_root() {
    for &(g, l) in &[(1.0, 1.0), (2.0, 1.0), (0.5, 1e6), (0.1, 0.1), (7.0, 0.3), (0.3, 9.0)] {
        let closed = mp_stieltjes_isotropic(g, l).unwrap();
        let oracle = mp_stieltjes_bisect(g, l);
        assert!((closed - oracle).abs() <= 1e-9 * oracle.max(1.0), "γ={g} λ={l}");
    }
    assert_abs_diff_eq!(mp_stieltjes_bisect(1.0, 1.0), 0.618_033_988_7, epsilon = 1e-10);
    assert_abs_diff_eq!(mp_stieltjes_bisect(2.0, 1.0), 8f64.sqrt() / 4.0, epsilon = 1e-10);
    assert_abs_diff_eq!(mp_stieltjes_isotropic(0.5, 1e6).unwrap(), 1e-6, epsilon = 1e-9);
}

#[test]
fn stieltjes_matches_white_wishart() {
    let (n, p) = (2000, 2000);
    let x = gaussian_matrix(n, p, &mut rng(17));
    let s = x.transpose() * &x / n as f64;
    let empirical = normalized_resolvent_trace(&s, 1.0);
    assert_abs_diff_eq!(empirical, mp_stieltjes_isotropic(1.0, 1.0).unwrap(), epsilon = 0.01);
}

#[test]
fn derivative_matches_finite_differences() {
    let h = 1e-6;
    for &(g, l) in &[(1.0, 1.0), (2.0, 1.0)] {
        let fd = (mp_stieltjes_isotropic(g, l - h).unwrap() - mp_stieltjes_isotropic(g, l + h).unwrap()) / (2.0 * h);
        assert_abs_diff_eq!(mp_stieltjes_derivative_isotropic(g, l).unwrap(), fd, epsilon = 1e-6);
    }
    let far = mp_stieltjes_derivative_isotropic(0.5, 1e6).unwrap();
    assert_abs_diff_eq!(far, 1e-12, epsilon = 1e-15);
}

#[test]
fn companion_matches_bisection() {
    let h = SpectralDistribution::identity();
    assert_abs_diff_eq!(solve_companion_x(&h, 1.0, 1.0).unwrap(), 0.618_033_988_7, epsilon = 1e-10);
    assert_abs_diff_eq!(companion_bisect(&[1.0], &[1.0], 1.0, 1.0), 0.618_033_988_7, epsilon = 1e-10);

    let atoms = [1.0, 3.0];
    let masses = [0.5, 0.5];
    let h2 = SpectralDistribution::new(atoms.to_vec(), masses.to_vec()).unwrap();
    let oracle = companion_bisect(&atoms, &masses, 0.5, 0.5);
    let x = solve_companion_x(&h2, 0.5, 0.5).unwrap();
    assert_abs_diff_eq!(x, oracle, epsilon = 1e-10);
    let residual = (1.0 - x) - 0.5 * (1.0 - h2.expect(|t| 0.5 / (x * t + 0.5)));
    assert!(residual.abs() <= 1e-10);

    for &(g, l) in &[(1e-8, 1.0), (1e-8, 0.01)] {
        let h3 = SpectralDistribution::new(vec![0.2, 5.0], vec![0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(solve_companion_x(&h3, g, l).unwrap(), 1.0, epsilon = 1e-6);
    }
}

#[test]
fn companion_is_a_deterministic_equivalent() {
    // Σ = diag(1, …, 1, 3, …, 3), n = 2p so γ = 0.5, λ = 0.5.
    let (p, n, lambda) = (1000, 2000, 0.5);
    let h = SpectralDistribution::new(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap();
    let x = solve_companion_x(&h, 0.5, lambda).unwrap();
    let equivalent = h.expect(|t| 1.0 / (x * t + lambda));

    let scale: Vec<f64> = (0..p).map(|j| if j < p / 2 { 1.0 } else { 3f64.sqrt() }).collect();
    let mut z = gaussian_matrix(n, p, &mut rng(23));
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    let s = z.transpose() * &z / n as f64;
    let empirical = normalized_resolvent_trace(&s, lambda);
    assert!((empirical - equivalent).abs() <= 0.02 * equivalent, "{empirical} vs {equivalent}");
}

#[test]
fn moments_from_two_paths_agree() {
    let h = SpectralDistribution::identity();
    let theta = SignalNoise::new(1.0, 1.0).unwrap();
    let gammas = [0.2, 0.9, 3.0];
    let lambdas = [0.4, 2.0, 0.7];
    let mom = asymptotic_moments(&h, &gammas, &lambdas, theta).unwrap();
    for i in 0..3 {
        let m = mp_stieltjes_bisect(gammas[i], lambdas[i]);
        assert_abs_diff_eq!(mom.v()[i], 1.0 - lambdas[i] * m, epsilon = 1e-10);
    }
    let single = asymptotic_moments(&h, &[1.0], &[1.0], theta).unwrap();
    assert_abs_diff_eq!(single.risk().unwrap(), mp_stieltjes_bisect(1.0, 1.0), epsilon = 1e-10);
}

#[test]
fn general_spectrum_moments_are_well_formed() {
    let h = SpectralDistribution::new(vec![0.5, 1.0, 4.0], vec![0.3, 0.3, 0.4]).unwrap();
    let theta = SignalNoise::new(0.8, 2.0).unwrap();
    let gammas = [0.5f64, 1.5, 3.0];
    let lambdas = [0.3, 1.0, 2.5];
    let mom = asymptotic_moments(&h, &gammas, &lambdas, theta).unwrap();
    let k = gammas.len();
    let a = DMatrix::from_fn(k, k, |i, j| mom.a(i, j));
    assert_eq!(a, a.transpose());
    assert!(a.iter().all(|&v| v >= 0.0));
    assert!(mom.r().iter().all(|&v| v >= 0.0));
    for (i, &x) in mom.x().iter().enumerate() {
        assert!(x > (1.0 - gammas[i]).max(0.0) && x <= 1.0);
    }
    let risk = mom.risk().unwrap();
    assert!(risk > 0.0 && risk < theta.signal());
}

#[test]
fn equal_split_examples() {
    let theta = SignalNoise::new(1.0, 1.0).unwrap();
    let (k, g) = (5usize, 0.2);
    let lambda = k as f64 * g;
    let m = mp_stieltjes_bisect(k as f64 * g, lambda);
    let mprime = mp_stieltjes_derivative_isotropic(k as f64 * g, lambda).unwrap();
    let (_, risk) = equal_split_weights_risk(k, g, lambda, theta, m, mprime).unwrap();
    let gammas = vec![k as f64 * g; k];
    let lambdas = vec![lambda; k];
    let matrix_risk = isotropic_moments(&gammas, &lambdas, theta).unwrap().risk().unwrap();
    assert_abs_diff_eq!(risk, matrix_risk, epsilon = 1e-8);
    assert!(risk >= 0.0 && risk <= theta.signal());
}

#[test]
fn phi_examples() {
    assert_abs_diff_eq!(optimal_risk_phi(1e6, 1.0).unwrap(), 1.0, epsilon = 1e-3);
    assert_abs_diff_eq!(optimal_risk_phi(1e-8, 1.0).unwrap(), 0.0, epsilon = 1e-3);
    assert_abs_diff_eq!(optimal_risk_phi(1.0, 1.0).unwrap(), mp_stieltjes_bisect(1.0, 1.0), epsilon = 1e-10);
}

#[test]
fn are_examples() {
    assert_abs_diff_eq!(are_equal_split(1, 0.4, 3.0).unwrap(), 1.0, epsilon = 1e-8);
    assert_abs_diff_eq!(
        are_equal_split(1_000_000, 0.17, 1.0).unwrap(),
        infinite_worker_limit_h(1.0, 0.17).unwrap(),
        epsilon = 1e-4
    );
    // Composition through independently computed φ(γ) and φ(kγ).
    let phi = 0.1 * mp_stieltjes_bisect(0.1, 0.1);
    let phi2 = 0.2 * mp_stieltjes_bisect(0.2, 0.2);
    assert_abs_diff_eq!(are_equal_split(2, 0.1, 1.0).unwrap(), phi * (1.0 - 2.0 + 2.0 / phi2), epsilon = 1e-10);
}

#[test]
fn weight_example() {
    let phi = mp_stieltjes_bisect(1.0, 1.0);
    assert_abs_diff_eq!(optimal_weight_equal_split(2, 0.5, 1.0).unwrap(), 1.0 / (2.0 - phi), epsilon = 1e-10);
}

#[test]
fn out_of_sample_examples() {
    assert_abs_diff_eq!(out_of_sample_efficiency(1, 0.3, 2.0, 1.5).unwrap().0, 1.0, epsilon = 1e-12);
    let (far, _) = out_of_sample_efficiency(1_000_000, 0.17, 1.0, 1.0).unwrap();
    assert_abs_diff_eq!(far, out_of_sample_limit(1.0, 0.17).unwrap(), epsilon = 1e-4);
}

#[test]
fn domain_errors() {
    assert!(are_equal_split(0, 0.1, 1.0).is_err());
    assert!(infinite_worker_limit_h(0.0, 1.0).is_err());
    assert!(optimal_weight_equal_split(2, -1.0, 1.0).is_err());
    assert!(out_of_sample_efficiency(2, 0.1, 1.0, 0.0).is_err());
    assert!(solve_companion_x(&SpectralDistribution::identity(), 1.0, 1e-11).is_err());
}
