//! Gradient fidelity against a central finite-difference oracle.
//!
//! The oracle perturbs every parameter by `h = 1e-4` in both directions and
//! evaluates the loss in full double precision; the analytic reverse-mode
//! gradient must match within 1e-4 relative error on every coordinate.

use askgate::neural::{
    backward, encoder_backward, encoder_forward, encoder_forward_traced, forward, forward_traced,
    init_encoder_params, init_params, log_softmax, softmax, Activation, EncoderSpec, HeadGrad,
    NetSpec, ParamSet,
};
use rand::Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn small_spec(seed_variant: u64) -> NetSpec {
    NetSpec {
        input_dim: 6,
        hidden: vec![8, 4],
        activation: if seed_variant % 7 == 0 {
            Activation::Relu
        } else {
            Activation::Tanh
        },
        n_actions: 5,
        latent_layer: 1,
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1e-6)
}

/// Max relative error between `analytic` gradients and finite differences of
/// `loss` over all parameters.
fn fd_check(params: &ParamSet, analytic: &ParamSet, loss: impl Fn(&ParamSet) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for ti in 0..params.tensors.len() {
        for i in 0..params.tensors[ti].data.len() {
            let mut plus = params.clone();
            plus.tensors[ti].data[i] += H;
            let mut minus = params.clone();
            minus.tensors[ti].data[i] -= H;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic.tensors[ti].data[i], fd));
        }
    }
    worst
}

#[test]
fn policy_gradients_match_finite_differences_on_50_cases() {
    let mut worst_overall = 0.0f64;
    for case in 0..50u64 {
        let spec = small_spec(case);
        let params = init_params(&spec, 1000 + case);
        let mut rng = askgate::rng::stream(2000, case);
        let obs: Vec<f32> = (0..spec.input_dim)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();

        let worst = if case % 2 == 0 {
            // Linear readout: L = a . logits + b * value.
            let a: Vec<f64> = (0..spec.n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: f64 = rng.gen_range(-1.0..1.0);
            let (_, trace) = forward_traced(&spec, &params, &obs).unwrap();
            let hg = HeadGrad {
                d_logits: a.clone(),
                d_value: b,
            };
            let grads = backward(&spec, &params, &[trace], &[hg]).unwrap();
            fd_check(&params, &grads, |p| {
                let out = forward(&spec, p, &obs).unwrap();
                out.logits.iter().zip(&a).map(|(l, c)| l * c).sum::<f64>() + b * out.value
            })
        } else {
            // Policy-style loss: NLL of a fixed action plus value MSE.
            let action = rng.gen_range(0..spec.n_actions);
            let target: f64 = rng.gen_range(-2.0..2.0);
            let (out, trace) = forward_traced(&spec, &params, &obs).unwrap();
            let probs = softmax(&out.logits);
            let mut d_logits = probs.clone();
            d_logits[action] -= 1.0; // d(-log p[a])/d logits
            let hg = HeadGrad {
                d_logits,
                d_value: out.value - target,
            };
            let grads = backward(&spec, &params, &[trace], &[hg]).unwrap();
            fd_check(&params, &grads, |p| {
                let out = forward(&spec, p, &obs).unwrap();
                -log_softmax(&out.logits)[action] + 0.5 * (out.value - target).powi(2)
            })
        };
        assert!(worst <= TOL, "case {case}: max rel err {worst:.2e}");
        worst_overall = worst_overall.max(worst);
    }
    println!("policy gradcheck worst relative error: {worst_overall:.3e}");
}

#[test]
fn batched_backward_equals_sum_of_samples() {
    let spec = small_spec(1);
    let params = init_params(&spec, 5);
    let mut rng = askgate::rng::stream(77, 0);
    let mut traces = Vec::new();
    let mut hgs = Vec::new();
    for _ in 0..4 {
        let obs: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let (_, trace) = forward_traced(&spec, &params, &obs).unwrap();
        traces.push(trace);
        hgs.push(HeadGrad {
            d_logits: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            d_value: rng.gen_range(-1.0..1.0),
        });
    }
    let batched = backward(&spec, &params, &traces, &hgs).unwrap();
    let mut summed = ParamSet::zeros_like_shapes(&spec.tensor_shapes());
    for (t, h) in traces.iter().zip(hgs.iter()) {
        let g = backward(&spec, &params, &[t.clone()], &[h.clone()]).unwrap();
        for (st, gt) in summed.tensors.iter_mut().zip(g.tensors.iter()) {
            for (s, v) in st.data.iter_mut().zip(gt.data.iter()) {
                *s += v;
            }
        }
    }
    for (bt, st) in batched.tensors.iter().zip(summed.tensors.iter()) {
        for (b, s) in bt.data.iter().zip(st.data.iter()) {
            assert!((b - s).abs() <= 1e-12);
        }
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let spec = EncoderSpec {
        input_dim: 7,
        hidden: vec![6, 5],
        out_dim: 3,
    };
    for case in 0..8u64 {
        let params = init_encoder_params(&spec, 300 + case);
        let mut rng = askgate::rng::stream(400, case);
        let x: Vec<f32> = (0..7).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let (out, trace) = encoder_forward_traced(&spec, &params, &x).unwrap();
        let d_out: Vec<f64> = out.iter().zip(&c).map(|(o, ci)| 2.0 * (o - ci)).collect();
        let grads = encoder_backward(&spec, &params, &[trace], &[d_out]).unwrap();

        let worst = fd_check(&params, &grads, |p| {
            let out = encoder_forward(&spec, p, &x).unwrap();
            out.iter().zip(&c).map(|(o, ci)| (o - ci) * (o - ci)).sum()
        });
        assert!(worst <= TOL, "encoder case {case}: max rel err {worst:.2e}");
    }
}
