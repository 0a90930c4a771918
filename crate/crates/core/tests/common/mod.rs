//! Independent reference computations and random instance generators
//! shared by the integration tests. Nothing here calls the solvers under
//! test.

#![allow(dead_code)]

use distfilt::graph::CommGraph;
use distfilt::linalg::Mat;
use distfilt::plant::{partition_rows, OutputPartition, Plant};
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let m = uniform(rng, n, n, -1.0, 1.0) + Mat::identity(n, n) * 0.5;
    m.qr().q()
}

/// Real block-diagonal matrix with the given `(real, imag)` eigenvalue pairs
/// (a zero imaginary part gives a 1x1 block).
fn modal_blocks(modes: &[(f64, f64)]) -> Mat {
    let n: usize = modes.iter().map(|m| if m.1 == 0.0 { 1 } else { 2 }).sum();
    let mut b = Mat::zeros(n, n);
    let mut k = 0;
    for &(re, im) in modes {
        if im == 0.0 {
            b[(k, k)] = re;
            k += 1;
        } else {
            b[(k, k)] = re;
            b[(k + 1, k + 1)] = re;
            b[(k, k + 1)] = im;
            b[(k + 1, k)] = -im;
            k += 2;
        }
    }
    b
}

fn random_modes(rng: &mut ChaCha8Rng, n: usize, re: impl Fn(&mut ChaCha8Rng) -> f64) -> Vec<(f64, f64)> {
    let mut modes = Vec::new();
    let mut left = n;
    while left > 0 {
        if left >= 2 && rng.random_bool(0.5) {
            let r = re(rng);
            modes.push((r, rng.random_range(0.3..2.5)));
            left -= 2;
        } else {
            modes.push((re(rng), 0.0));
            left -= 1;
        }
    }
    modes
}

/// Random Hurwitz matrix with spectral abscissa in `[-2, -0.1]` and a
/// non-normal part.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let modes = random_modes(rng, n, |r| r.random_range(-2.0..-0.1));
    let mut b = modal_blocks(&modes);
    for i in 0..n {
        for j in (i + 2)..n {
            b[(i, j)] = rng.random_range(-0.5..0.5);
        }
    }
    let q = random_orthogonal(rng, n);
    &q * b * q.transpose()
}

/// Random strongly connected digraph: a Hamiltonian cycle on a random
/// ordering plus random extra edges.
pub fn random_strong_graph(rng: &mut ChaCha8Rng, n: usize) -> CommGraph {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut adj = Mat::zeros(n, n);
    if n > 1 {
        for k in 0..n {
            let (from, to) = (order[k], order[(k + 1) % n]);
            adj[(to, from)] = rng.random_range(0.2..2.0);
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && adj[(i, j)] == 0.0 && rng.random_bool(0.3) {
                    adj[(i, j)] = rng.random_range(0.2..2.0);
                }
            }
        }
    }
    CommGraph::from_adjacency(adj).expect("generated adjacency is valid")
}

/// Detectable plant whose nodes each observe a random subset of the modes
/// through one sensor row. Unstable and marginal modes are always seen by
/// at least one node.
pub fn random_network_plant(rng: &mut ChaCha8Rng, n: usize, n_nodes: usize) -> (Plant, OutputPartition) {
    loop {
        let modes = random_modes(rng, n, |r| match r.random_range(0..3) {
            0 => r.random_range(-1.0..-0.2),
            1 => r.random_range(0.05..0.8),
            _ => 0.0,
        });
        let q = random_orthogonal(rng, n);
        let a = &q * modal_blocks(&modes) * q.transpose();

        // coordinate ranges of each mode
        let mut ranges = Vec::new();
        let mut k = 0;
        for m in &modes {
            let w = if m.1 == 0.0 { 1 } else { 2 };
            ranges.push((k, w));
            k += w;
        }
        let mut masks: Vec<Vec<bool>> = (0..n_nodes)
            .map(|_| modes.iter().map(|_| rng.random_bool(0.5)).collect())
            .collect();
        for (mi, m) in modes.iter().enumerate() {
            if m.0 >= 0.0 && !masks.iter().any(|mask| mask[mi]) {
                let node = rng.random_range(0..n_nodes);
                masks[node][mi] = true;
            }
        }
        for mask in &mut masks {
            if !mask.iter().any(|&b| b) {
                let mi = rng.random_range(0..modes.len());
                mask[mi] = true;
            }
        }
        let mut c = Mat::zeros(n_nodes, n);
        for (i, mask) in masks.iter().enumerate() {
            for (mi, &(start, w)) in ranges.iter().enumerate() {
                if mask[mi] {
                    for j in start..start + w {
                        c[(i, j)] = rng.random_range(0.3..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    }
                }
            }
        }
        let c = c * q.transpose();
        let qd = rng.random_range(1..=2);
        let p = rng.random_range(1..=2);
        let e = uniform(rng, n, qd, -0.5, 0.5);
        let d = uniform(rng, n_nodes, qd, -0.2, 0.2);
        let h = uniform(rng, p, n, -1.0, 1.0);
        if !distfilt::decomp::pbh_detectable(&c, &a) {
            continue;
        }
        let plant = Plant::new(a, c, d, e, h).expect("generated plant is well-formed");
        let part = partition_rows(&plant, &vec![1; n_nodes]).expect("one row per node");
        return (plant, part);
    }
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(a: &Mat) -> Mat {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(s);
    let mut term = Mat::identity(n, n);
    let mut sum = Mat::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// `∫_0^∞ ‖C e^{At} E‖_F^2 dt` by composite Simpson quadrature on a
/// uniform grid propagated with `e^{Ah}`.
pub fn h2_quadrature(a: &Mat, e: &Mat, c: &Mat) -> f64 {
    let rho = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(1.0, f64::max);
    let abscissa = a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let h = 0.02 / rho;
    let phi = expm(&(a * h));
    let t_min = 40.0 / abscissa.abs();
    let mut x = e.clone();
    let f = |x: &Mat| (c * x).norm_squared();
    let mut vals = vec![f(&x)];
    let peak_guard = vals[0].max(1e-300);
    let mut peak = peak_guard;
    let mut k = 0usize;
    loop {
        x = &phi * &x;
        k += 1;
        let v = f(&x);
        peak = peak.max(v);
        vals.push(v);
        let t = k as f64 * h;
        if k.is_multiple_of(2) && ((t > t_min && v < 1e-16 * peak) || k >= 4_000_000) {
            break;
        }
    }
    let mut sum = vals[0] + vals[vals.len() - 1];
    for (i, v) in vals.iter().enumerate().take(vals.len() - 1).skip(1) {
        sum += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    sum * h / 3.0
}

fn sigma_max(a: &Mat, e: &Mat, c: &Mat, w: f64) -> f64 {
    let n = a.nrows();
    let m = DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| {
        Complex::new(-a[(i, j)], if i == j { w } else { 0.0 })
    });
    let ec = e.map(|v| Complex::new(v, 0.0));
    let cc = c.map(|v| Complex::new(v, 0.0));
    let x = m.lu().solve(&ec).expect("jw I - A is invertible");
    (cc * x).singular_values().max()
}

/// Peak of `σ_max(C (jω - A)^{-1} E)` over a dense logarithmic grid, with
/// golden-section refinement around the best grid point.
pub fn hinf_sweep(a: &Mat, e: &Mat, c: &Mat) -> f64 {
    let rho = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(1e-3, f64::max);
    let pts = 6000;
    let mut grid = vec![0.0];
    for k in 0..pts {
        grid.push(rho * 10f64.powf(-4.0 + 8.0 * k as f64 / (pts - 1) as f64));
    }
    let vals: Vec<f64> = grid.iter().map(|&w| sigma_max(a, e, c, w)).collect();
    let (best, &peak) = vals
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("grid is non-empty");
    let mut lo = if best == 0 { 0.0 } else { grid[best - 1] };
    let mut hi = grid[(best + 1).min(grid.len() - 1)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut out = peak;
    for _ in 0..200 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        let (f1, f2) = (sigma_max(a, e, c, m1), sigma_max(a, e, c, m2));
        out = out.max(f1).max(f2);
        if f1 > f2 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    out
}

/// `A^T P + P A + Q = 0` through the `n^2 x n^2` Kronecker system.
pub fn lyapunov_kronecker(a: &Mat, q: &Mat) -> Mat {
    let n = a.nrows();
    let mut k = Mat::zeros(n * n, n * n);
    // column-major vec: vec(A^T P) = (I ⊗ A^T) vec P, vec(P A) = (A^T ⊗ I) vec P
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                k[(j * n + i, j * n + l)] += a[(l, i)];
                k[(j * n + i, l * n + i)] += a[(l, j)];
            }
        }
    }
    let rhs = -Mat::from_column_slice(n * n, 1, q.as_slice());
    let sol = k.lu().solve(&rhs).expect("Kronecker system is nonsingular");
    Mat::from_column_slice(n, n, sol.as_slice())
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
