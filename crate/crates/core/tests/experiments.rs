use besselq::brownian::IncrementCovariance;
use besselq::experiments::{
    convergence_study, delta_study, estimate_error, fit_rate, path_dump, supnorm_study, write_estimates_csv,
    write_fits_csv, FineReference, Method, StudyConfig,
};
use besselq::{Error, ModelParams, SchemeKind, StreamRng};

const EULER: Method = Method::Scheme(SchemeKind::DriftImplicitEuler);

fn small_config() -> StudyConfig {
    StudyConfig {
        methods: vec![EULER, Method::OptimalL2, Method::Adaptive { lambda: 4.0 }],
        n_list: vec![4, 16, 64],
        samples: 500,
        seed: 17,
        ..StudyConfig::figure3()
    }
}

fn csv(cfg: &StudyConfig) -> Vec<u8> {
    let report = convergence_study(cfg).unwrap();
    let mut out = Vec::new();
    write_estimates_csv(&mut out, &report.estimates).unwrap();
    write_fits_csv(&mut out, &report.fits).unwrap();
    out
}

#[test]
fn study_output_is_reproducible_and_thread_count_independent() {
    let cfg = small_config();
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let parallel = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = serial.install(|| csv(&cfg));
    let b = parallel.install(|| csv(&cfg));
    assert_eq!(a, b);
    assert_eq!(a, csv(&cfg));
    let other = StudyConfig { seed: 18, ..cfg };
    assert_ne!(a, csv(&other));
}

#[test]
fn euler_error_at_1024_is_of_the_published_size() {
    let params = ModelParams::new(0.5, 0.0).unwrap();
    let e = estimate_error(EULER, 1024, 2.0, &params, 10_000, 0).unwrap();
    // 0.63 / sqrt(1024) ≈ 0.0197; the constant comes from a fit over all n.
    assert!((e.estimate / 0.0197 - 1.0).abs() < 0.15, "e_2 = {} ± {}", e.estimate, e.stderr);
    assert!(e.stderr < 0.05 * e.estimate);
}

/// Discrete monitoring of Brownian motion overestimates the minimum by
/// about -zeta(1/2) / sqrt(2 pi) ≈ 0.5826 grid-scaled units.
#[test]
fn delta_mean_approaches_the_monitoring_constant() {
    let stats = delta_study(&[4096], &[1.0], 20_000, 3).unwrap();
    let s = &stats[0];
    assert!((s.moment_estimate - 0.5826).abs() < 4.0 * s.stderr + 0.01, "{} ± {}", s.moment_estimate, s.stderr);
}

#[test]
fn fine_reference_at_full_resolution_has_no_error_for_b0() {
    let params = ModelParams::new(0.5, 0.0).unwrap();
    let covs: Vec<_> = (0..256)
        .map(|j| IncrementCovariance::new(j as f64 / 256.0, (j + 1) as f64 / 256.0, 0.0).unwrap())
        .collect();
    let mut rng = StreamRng::new(40, 0);
    for _ in 0..20 {
        let r = FineReference::sample(&covs, &params, &mut rng).unwrap();
        assert!(r.supnorm_error(256, &params).unwrap() <= 1e-12);
        for n in [4, 16, 64] {
            assert!(r.supnorm_error(n, &params).unwrap() >= r.final_error(n, &params).unwrap());
        }
        assert!(r.coarse_path(3).is_err());
    }
}

#[test]
fn supnorm_errors_decrease_with_n() {
    let params = ModelParams::new(0.5, 1.0).unwrap();
    let report = supnorm_study(&[4, 16, 64], 2.0, &params, 300, 4096, 2).unwrap();
    let e: Vec<f64> = report.estimates.iter().map(|e| e.estimate).collect();
    assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    assert!(supnorm_study(&[4, 16, 64], 2.0, &params, 300, 1024, 2).is_err());
}

#[test]
fn fit_recovers_an_exact_power_law() {
    let points: Vec<(usize, f64)> = [8, 32, 128, 512].iter().map(|&n| (n, 3.0 * (n as f64).powf(-0.75))).collect();
    let fit = fit_rate(&points).unwrap();
    assert!((fit.slope + 0.75).abs() < 1e-12);
    assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    assert!(fit.max_residual < 1e-12);
    assert!(fit_rate(&points[..2]).is_err());
}

#[test]
fn invalid_configurations_are_rejected() {
    let empty = StudyConfig { n_list: vec![], ..small_config() };
    assert!(matches!(convergence_study(&empty), Err(Error::Config(_))));
    let bad_p = StudyConfig { p: 0.5, ..small_config() };
    assert!(convergence_study(&bad_p).is_err());
    let drift = StudyConfig { b: 1.0, ..small_config() };
    assert!(convergence_study(&drift).is_err());
    assert!(path_dump(1, 0.5, 0).is_err());
    assert!(delta_study(&[3, 8], &[1.0], 10, 0).is_err());
}

#[test]
fn path_dump_is_consistent() {
    let mut zero_hits = 0;
    for seed in 0..20 {
        let rows = path_dump(512, 0.05, seed).unwrap();
        assert_eq!(rows.len(), 513);
        assert_eq!((rows[0].t, rows[0].w, rows[0].x), (0.0, 0.0, 0.05));
        for r in &rows {
            assert!(r.x >= 0.0);
            if r.hits_zero {
                assert_eq!(r.x, 0.0);
                zero_hits += 1;
            }
        }
    }
    // Started at sqrt(0.05) ≈ 0.22, most paths reach zero before t = 1.
    assert!(zero_hits > 0);
    assert_eq!(path_dump(512, 0.05, 4).unwrap(), path_dump(512, 0.05, 4).unwrap());
}
