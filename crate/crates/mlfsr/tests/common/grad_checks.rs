//! Finite-difference gradient checks for every differentiable op. Each check
//! builds a scalar loss `sum(op(inputs) * fixed_random_projection)`, runs the
//! engine's backward pass, and compares against central differences computed
//! through an independent closure.

#![allow(dead_code)]

use mlfsr::scan::{selective_scan, zoh_step, ScanAlgo, SsmProj};
use mlfsr::tensor::{backward, Tensor};

use super::{assert_grads_close, central_diff, random_vec, rng, FD_STEP};

/// Generic multi-input gradient check. `build_loss` must be a pure function
/// of the input tensors.
pub fn check_inputs<F>(name: &str, tol: f64, inputs: &[(Vec<f64>, Vec<usize>)], build_loss: F)
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let tensors: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|(d, s)| Tensor::var(d.clone(), s))
        .collect();
    let loss = build_loss(&tensors);
    backward(&loss).unwrap();
    let analytic: Vec<f64> = tensors
        .iter()
        .flat_map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.elem_count()]))
        .collect();
    let flat0: Vec<f64> = inputs.iter().flat_map(|(d, _)| d.clone()).collect();
    let loss_of = |flat: &[f64]| -> f64 {
        let mut off = 0usize;
        let mut ts = Vec::with_capacity(inputs.len());
        for (_, s) in inputs {
            let n: usize = s.iter().product();
            ts.push(Tensor::var(flat[off..off + n].to_vec(), s));
            off += n;
        }
        build_loss(&ts).item()
    };
    let numeric = central_diff(loss_of, &flat0, FD_STEP);
    assert_grads_close(&analytic, &numeric, tol, name);
}

fn projection(seed: u64, n: usize) -> Tensor<f64> {
    let mut r = rng(seed ^ 0x9e3779b97f4a7c15);
    Tensor::from_vec(random_vec(&mut r, n, -1.0, 1.0), &[n])
}

fn project(y: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let n = y.elem_count();
    let p = projection(seed, n);
    y.reshape(&[n]).mul(&p).sum_all()
}

pub fn check_permute_reshape(instances: usize) {
    for k in 0..instances as u64 {
        let mut r = rng(100 + k);
        let (a, b, c) = (2, 3, 2);
        let x = random_vec(&mut r, a * b * c, -2.0, 2.0);
        check_inputs("permute", 1e-6, &[(x.clone(), vec![a, b, c])], |t| {
            project(&t[0].permute(&[2, 0, 1]), k)
        });
        check_inputs("reshape", 1e-6, &[(x, vec![a, b, c])], |t| {
            project(&t[0].reshape(&[c, a * b]), k + 1)
        });
    }
}

pub fn check_matmul(instances: usize) {
    for k in 0..instances as u64 {
        let mut r = rng(200 + k);
        let a = random_vec(&mut r, 3 * 4, -1.0, 1.0);
        let b = random_vec(&mut r, 4 * 2, -1.0, 1.0);
        check_inputs(
            "matmul",
            1e-6,
            &[(a, vec![3, 4]), (b, vec![4, 2])],
            |t| project(&t[0].matmul(&t[1]), k),
        );
        let a3 = random_vec(&mut r, 2 * 3 * 4, -1.0, 1.0);
        let b2 = random_vec(&mut r, 4 * 2, -1.0, 1.0);
        check_inputs(
            "matmul_batched",
            1e-6,
            &[(a3, vec![2, 3, 4]), (b2, vec![4, 2])],
            |t| project(&t[0].matmul(&t[1]), k + 7),
        );
    }
}

pub fn check_batch_matmul(instances: usize) {
    for k in 0..instances as u64 {
        let mut r = rng(300 + k);
        let a = random_vec(&mut r, 3 * 2 * 4, -1.0, 1.0);
        let b = random_vec(&mut r, 3 * 4 * 2, -1.0, 1.0);
        check_inputs(
            "batch_matmul",
            1e-6,
            &[(a, vec![3, 2, 4]), (b, vec![3, 4, 2])],
            |t| project(&t[0].batch_matmul(&t[1]), k),
        );
    }
}

pub fn check_conv2d(instances: usize) {
    for k in 0..instances as u64 {
        let mut r = rng(400 + k);
        let x = random_vec(&mut r, 2 * 2 * 5 * 5, -1.0, 1.0);
        let w = random_vec(&mut r, 3 * 2 * 3 * 3, -1.0, 1.0);
        let b = random_vec(&mut r, 3, -0.5, 0.5);
        check_inputs(
            "conv2d",
            1e-6,
            &[
                (x, vec![2, 2, 5, 5]),
                (w, vec![3, 2, 3, 3]),
                (b, vec![3]),
            ],
            |t| project(&t[0].conv2d(&t[1], &t[2], 1), k),
        );
    }
}

pub fn check_conv1d_depthwise(instances: usize) {
    for k in 0..instances as u64 {
        let mut r = rng(500 + k);
        let x = random_vec(&mut r, 2 * 7 * 3, -1.0, 1.0);
        let w = random_vec(&mut r, 3 * 4, -1.0, 1.0);
        let b = random_vec(&mut r, 3, -0.5, 0.5);
        check_inputs(
            "conv1d_depthwise",
            1e-6,
            &[(x, vec![2, 7, 3]), (w, vec![3, 4]), (b, vec![3])],
            |t| project(&t[0].conv1d_depthwise(&t[1], &t[2]), k),
        );
    }
}

pub fn check_layer_norm(instances: usize) {
    for k in 0..instances as u64 {
        let mut r = rng(600 + k);
        let x = random_vec(&mut r, 3 * 4 * 5, -2.0, 2.0);
        let gamma = random_vec(&mut r, 5, 0.5, 1.5);
        let beta = random_vec(&mut r, 5, -0.5, 0.5);
        check_inputs(
            "layer_norm",
            1e-5,
            &[(x, vec![3, 4, 5]), (gamma, vec![5]), (beta, vec![5])],
            |t| project(&t[0].layer_norm(&t[1], &t[2], 1e-5), k),
        );
    }
}

pub fn check_activations(instances: usize) {
    for k in 0..instances as u64 {
        let mut r = rng(700 + k);
        // Keep |x| away from the relu/abs kinks.
        let x: Vec<f64> = random_vec(&mut r, 24, 0.05, 3.0)
            .into_iter()
            .enumerate()
            .map(|(i, v)| if i % 2 == 0 { v } else { -v })
            .collect();
        for (name, f) in [
            ("sigmoid", 0usize),
            ("silu", 1),
            ("softplus", 2),
            ("relu", 3),
            ("abs", 4),
            ("exp", 5),
            ("neg", 6),
        ] {
            check_inputs(name, 1e-6, &[(x.clone(), vec![4, 6])], |t| {
                let y = match f {
                    0 => t[0].sigmoid(),
                    1 => t[0].silu(),
                    2 => t[0].softplus(),
                    3 => t[0].relu(),
                    4 => t[0].abs(),
                    5 => t[0].exp(),
                    _ => t[0].neg(),
                };
                project(&y, k)
            });
        }
    }
}

pub fn check_elementwise_broadcast(instances: usize) {
    for k in 0..instances as u64 {
        let mut r = rng(800 + k);
        let a = random_vec(&mut r, 2 * 3 * 4, -1.0, 1.0);
        let b = random_vec(&mut r, 2 * 4, -1.0, 1.0);
        check_inputs(
            "mul_broadcast",
            1e-6,
            &[(a.clone(), vec![2, 3, 4]), (b.clone(), vec![2, 1, 4])],
            |t| project(&t[0].mul(&t[1]), k),
        );
        check_inputs(
            "add_broadcast",
            1e-6,
            &[(a.clone(), vec![2, 3, 4]), (b.clone(), vec![2, 1, 4])],
            |t| project(&t[0].add(&t[1]), k + 3),
        );
        check_inputs(
            "sub_broadcast",
            1e-6,
            &[(a.clone(), vec![2, 3, 4]), (b, vec![2, 1, 4])],
            |t| project(&t[0].sub(&t[1]), k + 5),
        );
        check_inputs("scale", 1e-6, &[(a, vec![2, 3, 4])], |t| {
            project(&t[0].scale(1.7), k + 9)
        });
    }
}

pub fn check_reductions(instances: usize) {
    for k in 0..instances as u64 {
        let mut r = rng(900 + k);
        let x = random_vec(&mut r, 2 * 3 * 4, -1.0, 1.0);
        check_inputs("reduce_sum", 1e-6, &[(x.clone(), vec![2, 3, 4])], |t| {
            project(&t[0].reduce_sum(&[1], false), k)
        });
        check_inputs("reduce_mean", 1e-6, &[(x.clone(), vec![2, 3, 4])], |t| {
            project(&t[0].reduce_mean(&[0, 2], true), k + 2)
        });
        // L1 distance, elements kept away from the |.| kink.
        let y: Vec<f64> = x.iter().map(|v| v + 0.3).collect();
        check_inputs(
            "l1_mean",
            1e-5,
            &[(x, vec![2, 3, 4]), (y, vec![2, 3, 4])],
            |t| t[0].sub(&t[1]).abs().mean_all(),
        );
    }
}

pub fn check_shuffle_reverse_softmax(instances: usize) {
    for k in 0..instances as u64 {
        let mut r = rng(1000 + k);
        let x = random_vec(&mut r, 1 * 8 * 3 * 3, -1.0, 1.0);
        check_inputs("pixel_shuffle", 1e-6, &[(x.clone(), vec![1, 8, 3, 3])], |t| {
            project(&t[0].pixel_shuffle(2), k)
        });
        let y = random_vec(&mut r, 1 * 2 * 6 * 6, -1.0, 1.0);
        check_inputs(
            "pixel_unshuffle",
            1e-6,
            &[(y, vec![1, 2, 6, 6])],
            |t| project(&t[0].pixel_unshuffle(2), k + 1),
        );
        let z = random_vec(&mut r, 3 * 5, -1.0, 1.0);
        check_inputs("reverse", 1e-6, &[(z.clone(), vec![3, 5])], |t| {
            project(&t[0].reverse(1), k + 2)
        });
        check_inputs("softmax", 1e-5, &[(z, vec![3, 5])], |t| {
            project(&t[0].softmax_last(), k + 3)
        });
    }
}

/// Builds scan inputs with `a` parameterized through `-exp(a_log)` and a raw
/// positive `delta`, then checks all six gradients for the given algorithm.
pub fn check_selective_scan(instances: usize, algo: ScanAlgo) {
    let (g, l, c, n) = (2usize, 16usize, 3usize, 4usize);
    for k in 0..instances as u64 {
        let mut r = rng(1100 + k);
        let x = random_vec(&mut r, g * l * c, -1.0, 1.0);
        let delta = random_vec(&mut r, g * l * c, 0.05, 0.8);
        let bmat = random_vec(&mut r, g * l * n, -1.0, 1.0);
        let cmat = random_vec(&mut r, g * l * n, -1.0, 1.0);
        let a_log = random_vec(&mut r, c * n, -1.0, 1.0);
        let d = random_vec(&mut r, c, -1.0, 1.0);
        check_inputs(
            &format!("selective_scan_{algo:?}"),
            1e-4,
            &[
                (x, vec![g, l, c]),
                (delta, vec![g, l, c]),
                (bmat, vec![g, l, n]),
                (cmat, vec![g, l, n]),
                (a_log, vec![c, n]),
                (d, vec![c]),
            ],
            |t| {
                let a = t[4].exp().neg();
                let y = selective_scan(&t[0], &t[1], &t[2], &t[3], &a, &t[5], algo);
                project(&y, k)
            },
        );
    }
}

/// Gradient check through the full selective parameterization and the
/// bidirectional wrapper.
pub fn check_bi_scan(instances: usize, algo: ScanAlgo) {
    let (g, l, c, n) = (2usize, 6usize, 4usize, 2usize);
    for k in 0..instances as u64 {
        let mut r = rng(1200 + k);
        let x = random_vec(&mut r, g * l * c, -1.0, 1.0);
        let mut proj_inputs = vec![(x, vec![g, l, c])];
        for _ in 0..2 {
            proj_inputs.push((random_vec(&mut r, c * n, -1.0, 0.5), vec![c, n])); // a_log
            proj_inputs.push((random_vec(&mut r, c * c, -0.5, 0.5), vec![c, c])); // delta_w
            proj_inputs.push((random_vec(&mut r, c, -2.0, -1.0), vec![c])); // delta_b
            proj_inputs.push((random_vec(&mut r, c * n, -0.5, 0.5), vec![c, n])); // b_w
            proj_inputs.push((random_vec(&mut r, c * n, -0.5, 0.5), vec![c, n])); // c_w
            proj_inputs.push((random_vec(&mut r, c, 0.5, 1.5), vec![c])); // d
        }
        check_inputs("bi_scan", 1e-4, &proj_inputs, |t| {
            let proj = |o: usize| SsmProj {
                a_log: t[o].clone(),
                delta_w: t[o + 1].clone(),
                delta_b: t[o + 2].clone(),
                b_w: t[o + 3].clone(),
                c_w: t[o + 4].clone(),
                d: t[o + 5].clone(),
            };
            let y = mlfsr::scan::bi_scan(&t[0], &proj(1), &proj(7), algo);
            project(&y, k)
        });
    }
}

/// Scan gradient w.r.t. x degenerates to the diagonal `C*B_bar + D` map when
/// the decay is driven to zero.
pub fn check_scan_memoryless_gradient() {
    let (g, l, c, n) = (1usize, 5usize, 2usize, 2usize);
    let mut r = rng(1300);
    let x = Tensor::var(random_vec(&mut r, g * l * c, -1.0, 1.0), &[g, l, c]);
    // delta * a = -40: a_bar = exp(-40) ~ 0.
    let delta = Tensor::from_vec(vec![4.0; g * l * c], &[g, l, c]);
    let bmat = Tensor::from_vec(random_vec(&mut r, g * l * n, -1.0, 1.0), &[g, l, n]);
    let cmat = Tensor::from_vec(random_vec(&mut r, g * l * n, -1.0, 1.0), &[g, l, n]);
    let a = Tensor::from_vec(vec![-10.0; c * n], &[c, n]);
    let d = Tensor::from_vec(random_vec(&mut r, c, -1.0, 1.0), &[c]);
    let y = selective_scan(&x, &delta, &bmat, &cmat, &a, &d, ScanAlgo::Sequential);
    backward(&y.sum_all()).unwrap();
    let grad = x.grad().unwrap();
    for t in 0..l {
        for ci in 0..c {
            let mut expect = d.data()[ci];
            for j in 0..n {
                let (_, b_bar) = zoh_step(-10.0f64, bmat.data()[t * n + j], 4.0);
                expect += cmat.data()[t * n + j] * b_bar;
            }
            let got = grad[t * c + ci];
            assert!(
                (got - expect).abs() < 1e-10,
                "memoryless grad at t={t},c={ci}: {got} vs {expect}"
            );
        }
    }
}

/// Runs a compact pass over every op family (used by the acceptance suite).
pub fn run_full_sweep(instances: usize) {
    check_permute_reshape(instances);
    check_matmul(instances);
    check_batch_matmul(instances);
    check_conv2d(instances);
    check_conv1d_depthwise(instances);
    check_layer_norm(instances);
    check_activations(instances);
    check_elementwise_broadcast(instances);
    check_reductions(instances);
    check_shuffle_reverse_softmax(instances);
    check_selective_scan(instances, ScanAlgo::Sequential);
    check_selective_scan(instances, ScanAlgo::Parallel);
    check_bi_scan(instances.min(3), ScanAlgo::Sequential);
}
