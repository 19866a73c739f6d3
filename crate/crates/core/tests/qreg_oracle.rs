use condinf::quantile_iv::qreg::{fit, objective, SolverOptions};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_problem(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (Vec<f64>, DMatrix<f64>) {
    let c = DMatrix::from_fn(n, p, |_, j| {
        if j == 0 {
            1.0
        } else {
            rng.sample::<f64, _>(StandardNormal)
        }
    });
    let r = (0..n)
        .map(|t| {
            let e: f64 = rng.sample(StandardNormal);
            let x = if p > 1 { c[(t, 1)] } else { 0.0 };
            0.5 + 1.5 * x + e * (1.0 + 0.5 * x.abs())
        })
        .collect();
    (r, c)
}

fn best_vertex(r: &[f64], c: &DMatrix<f64>, tau: f64) -> f64 {
    let n = r.len();
    let p = c.ncols();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        let a = DMatrix::from_fn(p, p, |i, j| c[(idx[i], j)]);
        let b = nalgebra::DVector::from_fn(p, |i, _| r[idx[i]]);
        if let Some(beta) = a.lu().solve(&b) {
            let o = objective(r, c, beta.as_slice(), tau);
            if o < best {
                best = o;
            }
        }
        // next combination
        let mut i = p;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < n - p + i {
                idx[i] += 1;
                for j in i + 1..p {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[test]
fn matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..150 {
        let p = 1 + case % 3;
        let n = 8 + case % 17;
        let tau = [0.1, 0.25, 0.5, 0.75, 0.9][case % 5];
        let (r, c) = random_problem(&mut rng, n, p);
        let beta = fit(&r, &c, tau, &SolverOptions::default()).unwrap();
        let got = objective(&r, &c, &beta, tau);
        let want = best_vertex(&r, &c, tau);
        assert!(got <= want + 1e-12, "case {case}: {got} vs {want}");
    }
}

#[test]
fn matches_vertex_enumeration_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let p = 2;
        let n = 10;
        let c = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(0..3) as f64 });
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let tau = 0.5;
        let beta = fit(&r, &c, tau, &SolverOptions::default()).unwrap();
        let got = objective(&r, &c, &beta, tau);
        let want = best_vertex(&r, &c, tau);
        assert!(got <= want + 1e-12, "case {case}: {got} vs {want}");
    }
}

#[test]
fn larger_problems_match_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (r, c) = random_problem(&mut rng, 300, 2);
        let beta = fit(&r, &c, 0.3, &SolverOptions::default()).unwrap();
        let got = objective(&r, &c, &beta, 0.3);
        let mut best = f64::INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                let b = [beta[0] - 0.1 + 0.001 * i as f64, beta[1] - 0.1 + 0.001 * j as f64];
                best = best.min(objective(&r, &c, &b, 0.3));
            }
        }
        assert!(got <= best + 1e-12);
    }
}
