use got_core::measures::{make_empirical, DiscreteMeasure, PointCloud};
use got_core::ot_exact::{check_duality, solve_transport, w1_1d};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
    let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    PointCloud::new(d, data).unwrap()
}

fn random_measure(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    let pts = random_cloud(rng, n, d);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    DiscreteMeasure::normalized(pts, w).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Minimum over all n! assignments (Heap's algorithm).
fn brute_force_assignment(a: &PointCloud, b: &PointCloud) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| (0..n).map(|i| dist(a.point(i), b.point(p[i]))).sum::<f64>() / n as f64;
    let mut best = eval(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

#[test]
fn matches_permutation_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..60 {
        let n = rng.random_range(1..=7);
        let d = rng.random_range(1..=3);
        let a = random_cloud(&mut rng, n, d);
        let b = random_cloud(&mut rng, n, d);
        let expect = brute_force_assignment(&a, &b);
        let sol = solve_transport(&make_empirical(a).unwrap(), &make_empirical(b).unwrap()).unwrap();
        assert!((sol.cost - expect).abs() <= 1e-9, "{} vs {}", sol.cost, expect);
    }
}

#[test]
fn agrees_with_quantile_formula_in_1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.random_range(1..=50);
        let m = rng.random_range(1..=50);
        let mu = random_measure(&mut rng, n, 1);
        let nu = random_measure(&mut rng, m, 1);
        let exact = solve_transport(&mu, &nu).unwrap().cost;
        let quantile = w1_1d(&mu, &nu).unwrap();
        assert!((exact - quantile).abs() <= 1e-8, "{exact} vs {quantile}");
    }
}

#[test]
fn duality_certificates_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let d = rng.random_range(1..=4);
        let mu = random_measure(&mut rng, 20, d);
        let nu = random_measure(&mut rng, 20, d);
        let sol = solve_transport(&mu, &nu).unwrap();
        let rep = check_duality(&sol, &mu, &nu);
        assert!(rep.pass, "{:?}", rep.failures);
        assert!(sol.coupling.len() <= 39);
    }
}

#[test]
fn symmetric_translation_invariant_and_triangle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..3).map(|_| rng.random_range(1..=12)).collect();
        let m1 = random_measure(&mut rng, sizes[0], d);
        let m2 = random_measure(&mut rng, sizes[1], d);
        let m3 = random_measure(&mut rng, sizes[2], d);
        let w12 = solve_transport(&m1, &m2).unwrap().cost;
        let w21 = solve_transport(&m2, &m1).unwrap().cost;
        let w23 = solve_transport(&m2, &m3).unwrap().cost;
        let w13 = solve_transport(&m1, &m3).unwrap().cost;
        assert!((w12 - w21).abs() <= 1e-9);
        assert!(w13 <= w12 + w23 + 1e-7);

        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let moved = solve_transport(&m1.translated(&shift), &m2.translated(&shift)).unwrap().cost;
        assert!((moved - w12).abs() <= 1e-9 * w12.max(1.0));
    }
}

#[test]
fn dirac_pair_is_exact_distance() {
    let x = [0.3, -1.2, 2.0];
    let y = [1.0, 0.5, -0.5];
    let sol = solve_transport(&DiscreteMeasure::dirac(&x).unwrap(), &DiscreteMeasure::dirac(&y).unwrap()).unwrap();
    assert_eq!(sol.cost, dist(&x, &y));
}

#[test]
fn duplicate_atoms_and_zero_weights() {
    let pts = PointCloud::from_rows(&[[0.0], [0.0], [1.0], [2.0]]).unwrap();
    let mu = DiscreteMeasure::new(pts, vec![0.25, 0.25, 0.0, 0.5]).unwrap();
    let nu = make_empirical(PointCloud::from_rows(&[[0.5], [1.5]]).unwrap()).unwrap();
    let sol = solve_transport(&mu, &nu).unwrap();
    assert!((sol.cost - w1_1d(&mu, &nu).unwrap()).abs() < 1e-12);
    assert!(check_duality(&sol, &mu, &nu).pass);
}
