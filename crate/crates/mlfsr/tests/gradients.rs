//! Finite-difference gradient suite: every differentiable op over >= 20
//! random instances, accumulation semantics, and the full tiny model.

mod common;

use common::grad_checks::{self, check_inputs};
use common::{assert_grads_close, central_diff, random_vec, rng, FD_STEP};
use mlfsr::model::{init_params, mlfsr_forward, ModelConfig};
use mlfsr::scan::ScanAlgo;
use mlfsr::synth::{generate_lf, LayerSpec, SceneSpec, TextureSpec};
use mlfsr::tensor::{backward, ParamStore, Tensor};

const INSTANCES: usize = 20;

#[test]
fn grad_permute_reshape() {
    grad_checks::check_permute_reshape(INSTANCES);
}

#[test]
fn grad_matmul() {
    grad_checks::check_matmul(INSTANCES);
}

#[test]
fn grad_batch_matmul() {
    grad_checks::check_batch_matmul(INSTANCES);
}

#[test]
fn grad_conv2d() {
    grad_checks::check_conv2d(INSTANCES);
}

#[test]
fn grad_conv1d_depthwise() {
    grad_checks::check_conv1d_depthwise(INSTANCES);
}

#[test]
fn grad_layer_norm() {
    grad_checks::check_layer_norm(INSTANCES);
}

#[test]
fn grad_activations() {
    grad_checks::check_activations(INSTANCES);
}

#[test]
fn grad_elementwise_broadcast() {
    grad_checks::check_elementwise_broadcast(INSTANCES);
}

#[test]
fn grad_reductions() {
    grad_checks::check_reductions(INSTANCES);
}

#[test]
fn grad_shuffle_reverse_softmax() {
    grad_checks::check_shuffle_reverse_softmax(INSTANCES);
}

#[test]
fn grad_selective_scan_sequential() {
    grad_checks::check_selective_scan(INSTANCES, ScanAlgo::Sequential);
}

#[test]
fn grad_selective_scan_parallel() {
    grad_checks::check_selective_scan(INSTANCES, ScanAlgo::Parallel);
}

#[test]
fn grad_bi_scan() {
    grad_checks::check_bi_scan(5, ScanAlgo::Sequential);
}

#[test]
fn grad_scan_memoryless_limit() {
    grad_checks::check_scan_memoryless_gradient();
}

#[test]
fn grad_biss_block() {
    // Full BiSS block at tiny dims (C=4, L=6) against central differences.
    let cfg = ModelConfig {
        channels: 4,
        n_mgi: 1,
        state_dim: 2,
        ca_reduction: 4,
        dwconv_k: 3,
        ..Default::default()
    };
    let ps = init_params::<f64>(&cfg, 42);
    let mut r = rng(4242);
    let x = random_vec(&mut r, 2 * 6 * 4, -1.0, 1.0);
    check_inputs("biss_block", 1e-4, &[(x, vec![2, 6, 4])], |t| {
        let frozen = ps.frozen();
        let y = mlfsr::model::biss_forward(&frozen, &cfg, "mgi.0.epi.biss", &t[0]);
        let n = y.elem_count();
        let mut pr = rng(999);
        let p = Tensor::from_vec(random_vec(&mut pr, n, -1.0, 1.0), &[n]);
        y.reshape(&[n]).mul(&p).sum_all()
    });
}

#[test]
fn grad_channel_attention() {
    let cfg = ModelConfig {
        channels: 4,
        n_mgi: 1,
        state_dim: 2,
        ca_reduction: 4,
        dwconv_k: 3,
        ..Default::default()
    };
    let ps = init_params::<f64>(&cfg, 43);
    let mut r = rng(4343);
    let x = random_vec(&mut r, 2 * 5 * 4, -1.0, 1.0);
    check_inputs("channel_attention", 1e-5, &[(x, vec![2, 5, 4])], |t| {
        let frozen = ps.frozen();
        let y = mlfsr::model::channel_attention_forward(&frozen, &cfg, "mgi.0.epi.biss.ca", &t[0]);
        let n = y.elem_count();
        let mut pr = rng(998);
        let p = Tensor::from_vec(random_vec(&mut pr, n, -1.0, 1.0), &[n]);
        y.reshape(&[n]).mul(&p).sum_all()
    });
}

#[test]
fn backward_accumulates_without_zeroing() {
    // Two consecutive backward passes double the gradient, exactly, on a
    // linear graph.
    let x = Tensor::var(vec![1.0f64, -2.0, 3.0], &[3]);
    let w = Tensor::from_vec(vec![0.5f64, 0.25, -1.0], &[3]);
    let loss = x.mul(&w).sum_all();
    backward(&loss).unwrap();
    let g1 = x.grad().unwrap();
    backward(&loss).unwrap();
    let g2 = x.grad().unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn backward_simple_cases() {
    // loss = sum(x): grad = ones.
    let x = Tensor::var(vec![5.0f64, -1.0, 0.25], &[3]);
    backward(&x.sum_all()).unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    // loss = sum(x*x) at [1,2]: grad = [2,4].
    let y = Tensor::var(vec![1.0f64, 2.0], &[2]);
    backward(&y.mul(&y).sum_all()).unwrap();
    assert_eq!(y.grad().unwrap(), vec![2.0, 4.0]);
    // Non-scalar loss is rejected.
    let z = Tensor::var(vec![1.0f64, 2.0], &[2]);
    assert!(backward(&z.mul(&z)).is_err());
}

#[test]
fn unreachable_parameters_get_zero_grads() {
    let mut ps = ParamStore::<f64>::new();
    ps.insert("used", Tensor::var(vec![1.0, 2.0], &[2]));
    ps.insert("unused", Tensor::var(vec![3.0], &[1]));
    ps.zero_grads();
    let loss = ps.get("used").sum_all();
    backward(&loss).unwrap();
    assert_eq!(ps.get("used").grad().unwrap(), vec![1.0, 1.0]);
    assert_eq!(ps.get("unused").grad().unwrap(), vec![0.0]);
}

/// End-to-end gradient of the tiny model (C=4, n_mgi=1, U=V=2, H=W=6) over
/// every parameter, rel err < 1e-4 in f64.
#[test]
fn grad_full_tiny_model() {
    let cfg = ModelConfig {
        channels: 4,
        n_mgi: 1,
        state_dim: 2,
        scale: 2,
        angular: 2,
        ca_reduction: 4,
        dwconv_k: 3,
        ..Default::default()
    };
    let lf = generate_lf(&SceneSpec {
        seed: 5,
        u_res: 2,
        v_res: 2,
        h_res: 6,
        w_res: 6,
        layers: vec![LayerSpec {
            texture: TextureSpec::BandLimited { cutoff: 0.4 },
            disparity: 0.8,
            mask: None,
        }],
    })
    .unwrap();
    let (input, bicubic) = mlfsr::model::prepare_batch::<f64>(&[&lf], cfg.scale);

    let ps = init_params::<f64>(&cfg, 77);
    let flat0 = ps.flat_values();
    let mut pr = rng(777);
    let proj = Tensor::from_vec(
        random_vec(&mut pr, input.elem_count() * cfg.scale * cfg.scale, -1.0, 1.0),
        &[input.elem_count() * cfg.scale * cfg.scale],
    );

    let loss_of = |flat: &[f64], store: &mut ParamStore<f64>| -> f64 {
        store.load_flat_values(flat);
        let (sr, _) = mlfsr_forward(store, &cfg, &input, &bicubic);
        let n = sr.elem_count();
        sr.reshape(&[n]).mul(&proj).sum_all().item()
    };

    // Analytic gradient.
    ps.zero_grads();
    let (sr, _) = mlfsr_forward(&ps, &cfg, &input, &bicubic);
    let n = sr.elem_count();
    let loss = sr.reshape(&[n]).mul(&proj).sum_all();
    backward(&loss).unwrap();
    let analytic = ps.flat_grads();

    // Numeric gradient over every parameter.
    let mut store = init_params::<f64>(&cfg, 77);
    let numeric = central_diff(|flat| loss_of(flat, &mut store), &flat0, FD_STEP);
    assert_grads_close(&analytic, &numeric, 1e-4, "full_tiny_model");
    println!(
        "tiny model: {} parameters gradient-checked",
        flat0.len()
    );
}
