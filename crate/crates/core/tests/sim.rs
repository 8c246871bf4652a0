use std::collections::BTreeSet;

use tweedie_spatial::fixtures;
use tweedie_spatial::optimizer::Variant;
use tweedie_spatial::sim::{
    deviance_ratio, generate_pattern, longitude_regions, reference_phi_range, simulate_dataset, simulate_with_effects,
    sse, Allocation, Pattern, PatternKind, PatternSpec, SimConfig,
};
use tweedie_spatial::study::{run_study, StudyConfig, StudyRow};

fn distinct(a: &[f64]) -> usize {
    a.iter().map(|x| x.to_bits()).collect::<BTreeSet<_>>().len()
}

#[test]
fn single_region_block_is_constant() {
    let coords = fixtures::ct_like().coords;
    let spec = PatternSpec::new(Pattern::Block { levels: vec![0.7] }, coords);
    assert!(generate_pattern(&spec, 1).unwrap().iter().all(|&a| a == 0.7));
}

#[test]
fn hotspot_peaks_at_its_centres() {
    let coords = fixtures::ct_like().coords;
    let spec = PatternSpec::new(Pattern::Hotspot { centers: Some(vec![10, 200]), peak: 3.0, decay: 2.0 }, coords);
    let a = generate_pattern(&spec, 1).unwrap();
    assert_eq!(a[10], 3.0);
    assert_eq!(a[200], 3.0);
    assert!(a.iter().all(|&x| x > 0.0 && x <= 3.0));
}

#[test]
fn patterns_are_deterministic_with_configured_levels() {
    let coords = fixtures::ct_like().coords;
    for kind in PatternKind::ALL {
        let spec = PatternSpec::default_for(kind, coords.clone());
        assert_eq!(generate_pattern(&spec, 5).unwrap(), generate_pattern(&spec, 5).unwrap());
    }
    let block = generate_pattern(&PatternSpec::default_for(PatternKind::Block, coords.clone()), 0).unwrap();
    let smooth = generate_pattern(&PatternSpec::default_for(PatternKind::Smooth, coords.clone()), 0).unwrap();
    assert_eq!(distinct(&block), 4);
    assert_eq!(distinct(&smooth), 10);
    let s1 = generate_pattern(&PatternSpec::default_for(PatternKind::Structured, coords.clone()), 1).unwrap();
    let s2 = generate_pattern(&PatternSpec::default_for(PatternKind::Structured, coords), 2).unwrap();
    assert_ne!(s1, s2);
}

#[test]
fn structured_draws_follow_exponential_covariance() {
    let coords: Vec<(f64, f64)> = (0..20).map(|i| ((i % 5) as f64 * 0.4, (i / 5) as f64 * 0.4)).collect();
    let spec = PatternSpec::new(Pattern::Structured { sigma2: 1.0, phi_cov: 1.0 }, coords.clone());
    let draws: Vec<Vec<f64>> = (0..200).map(|s| generate_pattern(&spec, s).unwrap()).collect();
    let n = draws.len() as f64;
    for (i, j) in [(0, 1), (0, 6), (3, 17)] {
        let d = ((coords[i].0 - coords[j].0).powi(2) + (coords[i].1 - coords[j].1).powi(2)).sqrt();
        let rho = (-d).exp();
        let cov = draws.iter().map(|a| a[i] * a[j]).sum::<f64>() / n;
        let se = ((1.0 + rho * rho) / n).sqrt();
        assert!((cov - rho).abs() < 3.0 * se, "pair ({i}, {j}): {cov} vs {rho}");
    }
}

#[test]
fn reference_ranges_hit_the_thirty_percent_target() {
    let coords = fixtures::ct_like().coords;
    assert_eq!(reference_phi_range(PatternKind::Block, 0.30), Some((12.0, 30.0)));
    let spec = PatternSpec::default_for(PatternKind::Block, coords);
    let sim = SimConfig::reference(PatternKind::Block, 0.30, 10_000, 3).unwrap();
    let (data, _) = simulate_dataset(&spec, &sim, &Allocation::Uniform).unwrap();
    assert!((data.zero_fraction() - 0.30).abs() <= 0.05);
}

#[test]
fn null_effects_give_unbiased_means() {
    let l = 50;
    let sim = SimConfig::reference(PatternKind::Block, 0.15, 20_000, 4).unwrap();
    let data = simulate_with_effects(&vec![0.0; l], &sim, &Allocation::Uniform).unwrap();
    let n = data.len() as f64;
    let mean_y = data.y.iter().sum::<f64>() / n;
    let mu: Vec<f64> = data.lp_mean.iter().map(|l| l.exp()).collect();
    let mean_mu = mu.iter().sum::<f64>() / n;
    // Var(y_i) = phi_i mu_i^p given the design; the design spread adds Var(mu).
    let var = (0..data.len()).map(|i| data.phi[i] * mu[i].powf(1.5)).sum::<f64>() / n;
    let se = (var / n).sqrt();
    assert!((mean_y - mean_mu).abs() < 3.0 * se, "{mean_y} vs {mean_mu} (se {se})");
}

#[test]
fn low_effect_regions_have_more_zeros() {
    let coords = fixtures::ct_like().coords;
    let spec = PatternSpec::default_for(PatternKind::Block, coords.clone());
    let sim = SimConfig::reference(PatternKind::Block, 0.15, 10_000, 6).unwrap();
    let (data, alpha) = simulate_dataset(&spec, &sim, &Allocation::Uniform).unwrap();
    let frac = |level: f64| {
        let (mut z, mut t) = (0usize, 0usize);
        for i in 0..data.len() {
            if alpha[data.location[i]] == level {
                t += 1;
                z += usize::from(data.y[i] == 0.0);
            }
        }
        z as f64 / t as f64
    };
    assert!(frac(-3.0) > frac(3.0));
    let regions = longitude_regions(&coords, 4).unwrap();
    let sizes: Vec<usize> = (0..4).map(|r| regions.iter().filter(|&&x| x == r).count()).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
}

#[test]
fn zero_fraction_increases_with_dispersion() {
    let spec = PatternSpec::default_for(PatternKind::Block, fixtures::ct_like().coords);
    let mut last = 0.0;
    for target in [0.15, 0.30, 0.60, 0.80] {
        let sim = SimConfig::reference(PatternKind::Block, target, 10_000, 7).unwrap();
        let z = simulate_dataset(&spec, &sim, &Allocation::Uniform).unwrap().0.zero_fraction();
        assert!(z > last);
        last = z;
    }
}

#[test]
fn error_metrics() {
    assert_eq!(sse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(sse(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
    assert_eq!(sse(&[0.3, -2.0], &[1.0, 4.0]).unwrap(), sse(&[1.0, 4.0], &[0.3, -2.0]).unwrap());
    let spec = PatternSpec::default_for(PatternKind::Block, fixtures::ct_like().coords);
    let sim = SimConfig::reference(PatternKind::Block, 0.15, 10_000, 8).unwrap();
    let (data, alpha) = simulate_dataset(&spec, &sim, &Allocation::Uniform).unwrap();
    assert_eq!(deviance_ratio(&data, &alpha, &alpha, 0.0, 0.0, 1.5).unwrap(), 1.0);
    let zero = vec![0.0; alpha.len()];
    assert!(deviance_ratio(&data, &alpha, &zero, 0.0, 0.0, 1.5).unwrap() > 1.0);
}

#[test]
fn estimator_ordering_holds_for_every_pattern() {
    let fixture = fixtures::ct_like();
    let cfg = StudyConfig { zero_targets: vec![0.15], n: 10_000, reps: 10, seed: 21, ..StudyConfig::default() };
    let rows = run_study(&cfg, &fixture).unwrap();
    for kind in PatternKind::ALL {
        let mean = |v: Variant| {
            let s: Vec<f64> = rows.iter().filter(|r: &&StudyRow| r.pattern == kind && r.variant == v).map(|r| r.sse).collect();
            s.iter().sum::<f64>() / s.len() as f64
        };
        let (gl, ridge, mle) = (mean(Variant::Gl), mean(Variant::Ridge), mean(Variant::Unpenalized));
        assert!(gl < ridge && ridge <= mle, "{kind}: gl {gl}, ridge {ridge}, mle {mle}");
    }
}
