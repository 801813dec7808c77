use std::io::Write;
use std::time::{Duration, Instant};

use patience::cli::{parse_blocks, parse_spec, SystemSpec};
use patience::delay::{delay_blocks, embed_map, embed_matrix, DelayMatrix, DelayPolicy, DelayedSwitchedSystem};
use patience::linalg::{spectral_radius, SpectralOptions};
use patience::sim::{estimate_decay, mc_p_radius_estimate, simulate, DecayOptions, Initial, ProductSource, SimConfig};
use patience::stability::{model_p_radius, p_radius, verify_reduction_equivalence};
use patience::systems::{find_shared_fixed_point, seeded_rng, FixedPointOptions, MapSpec, SwitchedSystem, SystemModel};
use patience::Matrix;
use rand::Rng;

fn fixture(name: &str) -> SystemSpec {
    let path = format!("{}/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    parse_spec(&text).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn switched(spec: &SystemSpec) -> &SwitchedSystem {
    match &spec.model {
        SystemModel::Switched(s) => s,
        SystemModel::Ensemble(_) => panic!("expected a finite map family"),
    }
}

// Goes straight to stdout so the line shows up without --nocapture.
fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance criterion {criterion:>2}: {verdict}  {detail}");
    let _ = out.flush();
    assert!(pass, "criterion {criterion}: {detail}");
}

fn rho(m: &Matrix) -> f64 {
    spectral_radius(m, &SpectralOptions::default()).expect("spectral radius").radius
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, zero_prob: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.gen_bool(zero_prob) {
            0.0
        } else {
            rng.gen_range(lo..hi)
        }
    })
}

fn random_map<R: Rng>(n: usize, rng: &mut R) -> MapSpec {
    let linear = random_matrix(n, n, -1.0, 1.0, 0.3, rng);
    let gain = random_matrix(n, n, -1.0, 1.0, 0.3, rng);
    let bias = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    MapSpec::new(linear, gain, bias).expect("valid map")
}

fn normalized<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

#[test]
fn criterion_01_expectation_radii() {
    let mut details = Vec::new();
    let mut pass = true;
    for (name, expected) in [("example1_mu1", 0.5), ("example1_mu2", 0.8), ("example1_mu3", 1.0)] {
        let ls = switched(&fixture(name)).lipschitz_set();
        let _ = p_radius(&ls, 1).expect("radius");
        let start = Instant::now();
        let r = p_radius(&ls, 1).expect("radius");
        let elapsed = start.elapsed();
        let ok = (r - expected).abs() <= 1e-9 && elapsed < Duration::from_millis(1);
        pass &= ok;
        details.push(format!("{name}: {r:.12} in {elapsed:?}"));
    }
    report(1, pass, &details.join("; "));
}

#[test]
fn criterion_02_delayed_companion_radius() {
    let h = fixture("example2_h");
    let a = switched(&h).maps()[0].lipschitz_matrix();
    let d = DelayMatrix::new(&[[0, 1, 1], [0, 0, 1], [0, 0, 0]], 1).unwrap();
    let a_d = embed_matrix(&a, &d, 1).unwrap();
    let blocks = delay_blocks(&a, &d, 1).unwrap();
    let stored = parse_blocks(include_str!("../fixtures/dh_blocks.json")).unwrap();
    let sum = blocks[0].add(&blocks[1]).unwrap();
    let r_d = rho(&a_d);
    let r_sum = rho(&sum);
    let exact_sum = (6.0 + 17f64.sqrt()) / 4.0;
    let check = verify_reduction_equivalence(&blocks).unwrap();
    let pass = (r_d - 2.0239).abs() <= 5e-4
        && (r_sum - exact_sum).abs() <= 1e-9
        && stored == blocks
        && check.rho_companion > 1.0
        && check.rho_sum > 1.0
        && check.summary() == "both above 1";
    report(
        2,
        pass,
        &format!(
            "companion {r_d:.6}, block sum {r_sum:.12} (closed form {exact_sum:.12}), reduction check: {}",
            check.summary()
        ),
    );
}

#[test]
fn criterion_03_ensemble_mean_and_radius() {
    let spec = fixture("example5");
    let e = match &spec.model {
        SystemModel::Ensemble(e) => e,
        SystemModel::Switched(_) => panic!("expected an ensemble"),
    };
    let mean = e.mean(true);
    let target = Matrix::from_rows(&[[0.4, 0.2], [0.2, 0.04]]).unwrap();
    // 0.05 and 0.35 are not representable; their midpoint rounds one ulp
    // below the double nearest 0.2.
    let mean_ok = mean.max_abs_diff(&target) <= 1e-15 && mean[(0, 0)] == 0.4 && mean[(1, 1)] == 0.04;
    let (_, r) = model_p_radius(&spec.model, 1, &SpectralOptions::default()).unwrap();
    // Symmetric 2x2 closed form.
    let (p, q, s) = (mean[(0, 0)], mean[(0, 1)], mean[(1, 1)]);
    let closed = 0.5 * (p + s) + (0.25 * (p - s).powi(2) + q * q).sqrt();
    let pass = mean_ok && (r - closed).abs() <= 1e-12 && (r - 0.489).abs() <= 1e-3;
    report(3, pass, &format!("mean {:?}, radius {r:.12} (closed form {closed:.12})", mean.to_rows()));
}

#[test]
fn criterion_04_reduction_side_of_one() {
    let mut rng = seeded_rng(4, 0);
    let start = Instant::now();
    let mut agree = 0;
    let mut cases = 0;
    let mut below = 0;
    while cases < 500 {
        let n = rng.gen_range(1..=4);
        let bound = rng.gen_range(0..=3);
        let zero_prob = rng.gen_range(0.0..0.6);
        let blocks: Vec<Matrix> = (0..=bound).map(|_| random_matrix(n, n, 0.0, 1.0, zero_prob, &mut rng)).collect();
        let mut sum = Matrix::zeros(n, n);
        for b in &blocks {
            sum.axpy(1.0, b).unwrap();
        }
        let r = rho(&sum);
        if r == 0.0 {
            continue;
        }
        let target = if rng.gen_bool(0.5) {
            rng.gen_range(0.3..0.94)
        } else {
            rng.gen_range(1.06..2.0)
        };
        let blocks: Vec<Matrix> = blocks.iter().map(|b| b.scale(target / r)).collect();
        let check = verify_reduction_equivalence(&blocks).unwrap();
        assert!(!(0.95..=1.05).contains(&check.rho_sum), "rescaled radius {}", check.rho_sum);
        cases += 1;
        if check.rho_sum < 1.0 {
            below += 1;
        }
        if check.equivalent_side_of_one && !check.at_boundary {
            agree += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = agree == 500 && elapsed < Duration::from_secs(10);
    report(4, pass, &format!("{agree}/500 on the same side ({below} below 1) in {elapsed:?}"));
}

#[test]
fn criterion_05_block_row_sums() {
    let mut rng = seeded_rng(5, 0);
    let mut worst = 0.0f64;
    let mut enumerated = 0;
    let mut worst_enum = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=3);
        let count = rng.gen_range(1..=3);
        let bound = rng.gen_range(0..=4);
        let maps: Vec<MapSpec> = (0..count).map(|_| random_map(n, &mut rng)).collect();
        let weights = normalized(count, &mut rng);
        let policy = match rng.gen_range(0..4) {
            0 => DelayPolicy::None,
            1 => DelayPolicy::Fixed(DelayMatrix::sample_uniform(n, bound, &mut rng)),
            2 => DelayPolicy::IidUniformEntries,
            _ => DelayPolicy::Explicit(
                (0..count)
                    .map(|_| {
                        let k = rng.gen_range(1..=3);
                        let probs = normalized(k, &mut rng);
                        probs
                            .into_iter()
                            .map(|q| (DelayMatrix::sample_uniform(n, bound, &mut rng), q))
                            .collect()
                    })
                    .collect(),
            ),
        };
        let sys = SwitchedSystem::new(maps, weights).unwrap();
        let base = sys.lipschitz_set().expectation();
        let ds = DelayedSwitchedSystem::new(sys.clone(), policy, bound).unwrap();
        let big = ds.expected_lipschitz().unwrap();
        let cols: Vec<usize> = (0..n).collect();
        for r in 0..=bound {
            let rows: Vec<usize> = (r * n..(r + 1) * n).collect();
            let mut acc = Matrix::zeros(n, n);
            for c in 0..=bound {
                let cs: Vec<usize> = cols.iter().map(|j| c * n + j).collect();
                acc.axpy(1.0, &big.submatrix(&rows, &cs)).unwrap();
            }
            let expected = if r == 0 { base.clone() } else { Matrix::identity(n) };
            worst = worst.max(acc.max_abs_diff(&expected));
        }
        // Direct average over the support when it is small enough to list.
        if let Ok(support) = ds.support() {
            let ls = sys.lipschitz_set();
            let mut avg = Matrix::zeros(n * (bound + 1), n * (bound + 1));
            let mut filler = Matrix::zeros(n * (bound + 1), n * (bound + 1));
            for (k, d, prob) in &support {
                avg.axpy(*prob, &embed_matrix(&ls.matrices()[*k], d, bound).unwrap()).unwrap();
            }
            // Filler rows are identities in every realization, so their
            // probability-weighted sum is only 1 up to rounding.
            let total: f64 = support.iter().map(|s| s.2).sum();
            for i in n..n * (bound + 1) {
                filler[(i, i - n)] = 1.0 - total;
            }
            avg.axpy(1.0, &filler).unwrap();
            worst_enum = worst_enum.max(avg.max_abs_diff(&big));
            enumerated += 1;
        }
    }
    let pass = worst <= 1e-13 && worst_enum <= 1e-13;
    report(
        5,
        pass,
        &format!("max block-row deviation {worst:.2e}; {enumerated} supports enumerated, max deviation {worst_enum:.2e}"),
    );
}

#[test]
fn criterion_06_embedding_commutes_with_lipschitz() {
    let mut rng = seeded_rng(6, 0);
    let mut exact = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=4);
        let bound = rng.gen_range(0..=4);
        let f = random_map(n, &mut rng);
        let d = DelayMatrix::sample_uniform(n, bound, &mut rng);
        let lhs = embed_map(&f, &d, bound).unwrap().lipschitz_matrix();
        let rhs = embed_matrix(&f.lipschitz_matrix(), &d, bound).unwrap();
        if lhs == rhs {
            exact += 1;
        }
    }
    report(6, exact == 200, &format!("{exact}/200 pairs equal entrywise"));
}

#[test]
fn criterion_07_lipschitz_domination() {
    let spec = fixture("example1_mu2");
    let sys = switched(&spec);
    let fp = find_shared_fixed_point(sys, &FixedPointOptions::default()).unwrap();
    let mut held = 0;
    for t in 0..100u64 {
        let angle = t as f64 * std::f64::consts::TAU / 100.0;
        let x0 = vec![fp[0] + angle.cos(), fp[1] + angle.sin()];
        let trace = patience::sim::lipschitz_domination(sys, &x0, &fp, 100, 7, t);
        let norm_ok = trace
            .deviation
            .iter()
            .zip(&trace.comparison)
            .all(|(d, c)| *d <= c * (1.0 + 1e-12) + 1e-300);
        if trace.componentwise && norm_ok && trace.deviation.len() == 101 {
            held += 1;
        }
    }
    report(7, held == 100, &format!("{held}/100 trajectories dominated for 100 steps"));
}

#[test]
fn criterion_08_qualitative_decay() {
    let cases = [
        ("example1_mu1", true),
        ("example1_mu2", true),
        ("example4_mu2_pi2", true),
        ("example4_bar", true),
        ("example1_mu3", false),
        ("example4_bar_pi", false),
        ("example5_delayed_L5", true),
    ];
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for (name, expect) in cases {
        let spec = fixture(name);
        let (bound, policy) = spec.delay.clone().unwrap_or((0, DelayPolicy::None));
        let center = match &spec.model {
            SystemModel::Switched(s) => find_shared_fixed_point(s, &FixedPointOptions::default()).unwrap(),
            SystemModel::Ensemble(e) => e.shared_fixed_point(),
        };
        let ds = DelayedSwitchedSystem::new(spec.model.clone(), policy, bound).unwrap();
        let cfg = SimConfig {
            horizon: 300,
            trajectories: 1000,
            seed: 0,
        };
        let batch = simulate(&ds, &Initial::UnitSphere { center: center.clone() }, &cfg).unwrap();
        let est = estimate_decay(&batch, &center, 1, &DecayOptions::default()).unwrap();
        pass &= est.decay_detected == expect;
        details.push(format!("{name}={}", est.decay_detected));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    report(8, pass, &format!("{} in {elapsed:?}", details.join(", ")));
}

#[test]
fn criterion_09_monte_carlo_radius() {
    let mu2 = fixture("example1_mu2");
    let ls = switched(&mu2).lipschitz_set();
    let exact_mu2 = p_radius(&ls, 1).unwrap();
    let est_mu2 = mc_p_radius_estimate(ProductSource::Set(&ls), 1, 200, 2000, 9).unwrap();
    let ens = fixture("example5");
    let e = match &ens.model {
        SystemModel::Ensemble(e) => e,
        SystemModel::Switched(_) => panic!("expected an ensemble"),
    };
    let (_, exact_e) = model_p_radius(&ens.model, 1, &SpectralOptions::default()).unwrap();
    let est_e = mc_p_radius_estimate(ProductSource::Ensemble(e), 1, 200, 2000, 9).unwrap();
    let pass = (est_mu2 - 0.8).abs() <= 0.05
        && (est_mu2 - exact_mu2).abs() <= 0.05
        && (est_e - 0.489).abs() <= 0.05
        && (est_e - exact_e).abs() <= 0.05;
    report(
        9,
        pass,
        &format!("mu2 {est_mu2:.4} vs {exact_mu2:.4}; ensemble {est_e:.4} vs {exact_e:.4}"),
    );
}

#[test]
fn criterion_10_fixed_point() {
    let spec = fixture("example2_h");
    let sys = switched(&spec);
    let x = find_shared_fixed_point(sys, &FixedPointOptions::default()).unwrap();
    let fx = sys.maps()[0].eval(&x).unwrap();
    let residual = fx.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let reference = [-1.05, 0.62, 0.14];
    let distance = x.iter().zip(&reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let pass = residual < 1e-10 && distance <= 5e-2;
    report(
        10,
        pass,
        &format!("found {x:?}, residual {residual:.2e}; distance to [-1.05, 0.62, 0.14] is {distance:.3}"),
    );
}
