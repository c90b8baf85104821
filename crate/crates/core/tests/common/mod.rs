//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use nof1::tensor::{Tape, Tensor, Var};
use nof1::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Largest elementwise relative error between the tape's gradients and
/// central finite differences of the same scalar function.
///
/// `build` receives one var per parameter and must return a scalar var.
pub fn gradient_check<F>(params: &[Tensor], h: f64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone().tracked())).collect();
    let loss = build(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("every parameter reaches the loss").to_vec())
        .collect();

    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = build(&mut tape, &vars).unwrap();
        tape.value(loss).item().unwrap()
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grads) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let up = eval(&work);
            work[pi].data_mut()[ei] = orig - h;
            let down = eval(&work);
            work[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

/// Fraction of strongly red pixels: red exceeds both green and blue by `margin`.
pub fn red_pixel_fraction(pixels: &Tensor, margin: f64) -> f64 {
    let shape = pixels.shape();
    let plane = shape[1] * shape[2];
    let d = pixels.data();
    let (r, g, b) = (&d[..plane], &d[plane..2 * plane], &d[2 * plane..]);
    let hits = (0..plane)
        .filter(|&i| r[i] - g[i].max(b[i]) > margin)
        .count();
    hits as f64 / plane as f64
}

/// Student-t CDF by quadrature of the density in the angle domain.
///
/// With t = sqrt(df) tan(theta) the kernel becomes cos(theta)^(df - 1), which
/// is smooth on [0, pi/2) for df >= 1, and the normalising constant is the
/// same integral up to pi/2.
pub fn t_cdf_quadrature(x: f64, df: f64) -> f64 {
    let f = |theta: f64| theta.cos().powf(df - 1.0);
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    };
    let theta = (x.abs() / df.sqrt()).atan();
    let part = simpson(0.0, theta, 200_000);
    let whole = simpson(0.0, std::f64::consts::FRAC_PI_2, 200_000);
    let half = 0.5 * part / whole;
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Binomial coefficient by multiplicative formula.
pub fn choose(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// One-sample Kolmogorov-Smirnov test of uniformity on [0, 1].
///
/// Returns (D, asymptotic p-value).
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
        p += 2.0 * sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

/// A named finite-difference scenario and its worst relative error.
pub struct GradCase {
    pub name: String,
    pub worst_rel_error: f64,
}

fn mse_head(tape: &mut Tape, out: Var, target: &Tensor) -> Result<Var> {
    let t = tape.constant(target.clone());
    tape.mse_loss(out, t)
}

/// Finite-difference checks (h = 1e-5) for every differentiable operation,
/// each on three distinct random shapes.
pub fn differentiable_op_cases() -> Vec<GradCase> {
    const H: f64 = 1e-5;
    let mut cases = Vec::new();
    let mut r = rng(2024);

    // (batch, c_in, h, w, c_out, k, stride, padding)
    let conv_shapes = [
        (2, 3, 8, 8, 4, 3, 1, 0),
        (1, 2, 7, 5, 3, 3, 2, 1),
        (3, 1, 6, 6, 2, 2, 2, 0),
    ];
    for &(n, ci, h, w, co, k, s, p) in &conv_shapes {
        let x = random_tensor(&mut r, &[n, ci, h, w], 1.0);
        let kern = random_tensor(&mut r, &[co, ci, k, k], 0.5);
        let bias = random_tensor(&mut r, &[co], 0.1);
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let target = random_tensor(&mut r, &[n, co, oh, ow], 1.0);
        let worst = gradient_check(&[x, kern, bias], H, |tape, v| {
            let y = tape.conv2d(v[0], v[1], v[2], s, p)?;
            mse_head(tape, y, &target)
        });
        cases.push(GradCase {
            name: format!("conv2d {n}x{ci}x{h}x{w} k{k} s{s} p{p}"),
            worst_rel_error: worst,
        });
    }

    let convt_shapes = [
        (2, 3, 4, 4, 2, 4, 2, 1),
        (1, 2, 3, 5, 3, 3, 1, 1),
        (2, 1, 2, 3, 2, 3, 2, 0),
    ];
    for &(n, ci, h, w, co, k, s, p) in &convt_shapes {
        let x = random_tensor(&mut r, &[n, ci, h, w], 1.0);
        let kern = random_tensor(&mut r, &[ci, co, k, k], 0.5);
        let bias = random_tensor(&mut r, &[co], 0.1);
        let oh = (h - 1) * s + k - 2 * p;
        let ow = (w - 1) * s + k - 2 * p;
        let target = random_tensor(&mut r, &[n, co, oh, ow], 1.0);
        let worst = gradient_check(&[x, kern, bias], H, |tape, v| {
            let y = tape.conv_transpose2d(v[0], v[1], v[2], s, p)?;
            mse_head(tape, y, &target)
        });
        cases.push(GradCase {
            name: format!("conv_transpose2d {n}x{ci}x{h}x{w} k{k} s{s} p{p}"),
            worst_rel_error: worst,
        });
    }

    for &(n, fi, fo) in &[(1, 3, 2), (4, 5, 3), (2, 8, 6)] {
        let x = random_tensor(&mut r, &[n, fi], 1.0);
        let wt = random_tensor(&mut r, &[fo, fi], 0.5);
        let b = random_tensor(&mut r, &[fo], 0.1);
        let target = random_tensor(&mut r, &[n, fo], 1.0);
        let worst = gradient_check(&[x, wt, b], H, |tape, v| {
            let y = tape.linear(v[0], v[1], v[2])?;
            mse_head(tape, y, &target)
        });
        cases.push(GradCase {
            name: format!("linear {n}x{fi} -> {fo}"),
            worst_rel_error: worst,
        });
    }

    for shape in [&[7][..], &[2, 5][..], &[2, 3, 2, 2][..]] {
        // keep inputs away from the ReLU kink
        let mut x = random_tensor(&mut r, shape, 1.0);
        for v in x.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        let target = random_tensor(&mut r, shape, 1.0);
        let worst = gradient_check(&[x.clone()], H, |tape, v| {
            let y = tape.relu(v[0])?;
            mse_head(tape, y, &target)
        });
        cases.push(GradCase {
            name: format!("relu {shape:?}"),
            worst_rel_error: worst,
        });
        let worst = gradient_check(&[x.clone()], H, |tape, v| {
            let y = tape.sigmoid(v[0])?;
            mse_head(tape, y, &target)
        });
        cases.push(GradCase {
            name: format!("sigmoid {shape:?}"),
            worst_rel_error: worst,
        });
        let other = random_tensor(&mut r, shape, 1.0);
        let worst = gradient_check(&[x, other], H, |tape, v| tape.mse_loss(v[0], v[1]));
        cases.push(GradCase {
            name: format!("mse_loss {shape:?}"),
            worst_rel_error: worst,
        });
    }

    // conv -> relu -> flatten -> linear -> sigmoid -> mse, all parameters at once
    for &(n, ci, hw, co, fo) in &[(2, 3, 6, 4, 5), (1, 2, 5, 3, 2), (3, 1, 4, 2, 3)] {
        let x = random_tensor(&mut r, &[n, ci, hw, hw], 1.0);
        let kern = random_tensor(&mut r, &[co, ci, 3, 3], 0.5);
        let kb = random_tensor(&mut r, &[co], 0.1);
        let feat = co * hw * hw;
        let w = random_tensor(&mut r, &[fo, feat], 0.3);
        let b = random_tensor(&mut r, &[fo], 0.1);
        let target = random_tensor(&mut r, &[n, fo], 0.5);
        let worst = gradient_check(&[x, kern, kb, w, b], H, |tape, v| {
            let y = tape.conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = tape.relu(y)?;
            let y = tape.reshape(y, &[n, feat])?;
            let y = tape.linear(y, v[3], v[4])?;
            let y = tape.sigmoid(y)?;
            mse_head(tape, y, &target)
        });
        cases.push(GradCase {
            name: format!("composite conv-relu-linear-sigmoid-mse {n}x{ci}x{hw}x{hw}"),
            worst_rel_error: worst,
        });
    }
    cases
}

/// |<conv2d(x, K), y> - <x, conv_transpose2d(y, K)>| for several geometries.
pub fn adjoint_gaps() -> Vec<(String, f64)> {
    let mut r = rng(77);
    let mut gaps = Vec::new();
    for &(n, ci, h, w, co, k, s, p) in &[
        (2, 3, 8, 8, 4, 3, 1, 1),
        (1, 2, 9, 7, 3, 3, 2, 1),
        (2, 4, 8, 8, 2, 4, 2, 1),
        (1, 1, 5, 5, 1, 2, 1, 0),
    ] {
        let x = random_tensor(&mut r, &[n, ci, h, w], 1.0);
        let kern = random_tensor(&mut r, &[co, ci, k, k], 1.0);
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let y = random_tensor(&mut r, &[n, co, oh, ow], 1.0);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let kv = tape.constant(kern.clone());
        let zero_co = tape.constant(Tensor::zeros(&[co]));
        let zero_ci = tape.constant(Tensor::zeros(&[ci]));
        let fwd = tape.conv2d(xv, kv, zero_co, s, p).unwrap();
        let yv = tape.constant(y.clone());
        // conv_transpose2d's kernel is [C_in, C_out, ...] from its own view:
        // the conv's [co, ci] layout is exactly that.
        let back = tape.conv_transpose2d(yv, kv, zero_ci, s, p).unwrap();
        let lhs = tape.value(fwd).dot(&y).unwrap();
        if tape.value(back).shape() != x.shape() {
            // stride remainder: transposed output is smaller than x
            gaps.push((format!("shape mismatch {:?}", tape.value(back).shape()), f64::INFINITY));
            continue;
        }
        let rhs = x.dot(tape.value(back)).unwrap();
        gaps.push((format!("{n}x{ci}x{h}x{w} k{k} s{s} p{p}"), (lhs - rhs).abs()));
    }
    gaps
}

/// Stationary AR(1) noise `e_t = rho e_{t-1} + v_t`, `v_t ~ N(0, 1)`.
pub fn ar1_noise(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut e = Vec::with_capacity(n);
    let first: f64 = StandardNormal.sample(rng);
    e.push(first / (1.0 - rho * rho).sqrt());
    for t in 1..n {
        let v: f64 = StandardNormal.sample(rng);
        e.push(rho * e[t - 1] + v);
    }
    e
}

/// Ordinary least squares by the normal equations with an explicit inverse.
///
/// Returns (coefficients, standard errors, residual degrees of freedom).
pub fn ols(x: &nalgebra::DMatrix<f64>, y: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
    let y = nalgebra::DVector::from_column_slice(y);
    let inv = (x.transpose() * x).try_inverse().expect("full rank");
    let beta = &inv * x.transpose() * &y;
    let resid = &y - x * &beta;
    let df = x.nrows() - x.ncols();
    let s2 = resid.norm_squared() / df as f64;
    let se = (0..x.ncols()).map(|j| (s2 * inv[(j, j)]).sqrt()).collect();
    (beta.iter().copied().collect(), se, df)
}

/// ABAB labels for `blocks` blocks of `per_block` observations, A first.
pub fn abab(blocks: usize, per_block: usize) -> Vec<bool> {
    (0..blocks * per_block).map(|i| (i / per_block) % 2 == 1).collect()
}
