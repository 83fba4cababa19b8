//! Central finite-difference checks for every differentiable tape operation.
//!
//! Each op is wrapped into a scalar loss through a fixed random weighting of
//! its output, so the full Jacobian action is exercised. Inputs are seeded
//! and small; comparisons use a relative error floor for near-zero entries.

use mdpnet_core::gradcheck;
use mdpnet_core::rng::seeded;
use mdpnet_core::tensor::{Tape, Tensor, Var};

const TOL: f64 = 1e-3;

/// Check d(loss)/d(input i) for every input of an op builder, where
/// loss = sum(weights * op(inputs)).
fn check_op(
    name: &str,
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
) {
    // fixed weights decorrelated from the inputs
    let mut wrng = seeded(0xC0FFEE);
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        Tensor::randn(tape.value(out).shape(), &mut wrng)
    };

    let loss_of = |tensors: &[Tensor]| -> f32 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let w = tape.constant(probe.clone());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum_all(prod);
        tape.value(loss).item()
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let w = tape.constant(probe.clone());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum_all(prod);
    let grads = tape.backward(loss).unwrap();

    for (idx, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[idx].shape()));
        let mut f = |vals: &[f32]| {
            let mut mod_inputs = inputs.to_vec();
            mod_inputs[idx] = Tensor::new(inputs[idx].shape(), vals.to_vec()).unwrap();
            loss_of(&mod_inputs)
        };
        let excess = gradcheck::check_tol(&mut f, inputs[idx].data(), analytic.data(), TOL);
        assert!(excess <= 1.0, "{name} input {idx}: tolerance excess {excess}");
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = seeded(1);
    let x = Tensor::randn(&[2, 4, 4], &mut rng);
    let k = Tensor::randn(&[3, 2, 3, 3], &mut rng);
    check_op("conv2d", &[x, k], &|t, v| t.conv2d(v[0], v[1]).unwrap());
}

#[test]
fn avg_pool_gradients() {
    let mut rng = seeded(2);
    let x = Tensor::randn(&[2, 4, 4], &mut rng);
    check_op("avg_pool2d", &[x], &|t, v| t.avg_pool2d(v[0], 2).unwrap());
}

#[test]
fn upsample_gradients() {
    let mut rng = seeded(3);
    let x = Tensor::randn(&[2, 3, 3], &mut rng);
    check_op("upsample", &[x], &|t, v| {
        t.upsample_bilinear(v[0], 6, 6).unwrap()
    });
}

#[test]
fn linear_gradients() {
    let mut rng = seeded(4);
    let x = Tensor::randn(&[3, 4], &mut rng);
    let w = Tensor::randn(&[5, 4], &mut rng);
    let b = Tensor::randn(&[5], &mut rng);
    check_op("linear", &[x, w, b], &|t, v| {
        t.linear(v[0], v[1], Some(v[2])).unwrap()
    });
}

#[test]
fn matmul_gradients() {
    let mut rng = seeded(5);
    let a = Tensor::randn(&[3, 4], &mut rng);
    let b = Tensor::randn(&[4, 2], &mut rng);
    check_op("matmul", &[a, b], &|t, v| t.matmul(v[0], v[1]).unwrap());
}

#[test]
fn group_norm_gradients() {
    let mut rng = seeded(6);
    let x = Tensor::randn(&[4, 3, 3], &mut rng);
    let g = Tensor::rand_uniform(&[4], 0.5, 1.5, &mut rng);
    let s = Tensor::randn(&[4], &mut rng);
    check_op("group_norm", &[x, g, s], &|t, v| {
        t.group_norm(v[0], v[1], v[2], 2).unwrap()
    });
}

#[test]
fn silu_gradients() {
    let mut rng = seeded(7);
    let x = Tensor::randn(&[10], &mut rng);
    check_op("silu", &[x], &|t, v| t.silu(v[0]));
}

#[test]
fn sigmoid_gradients() {
    let mut rng = seeded(8);
    let x = Tensor::randn(&[10], &mut rng);
    check_op("sigmoid", &[x], &|t, v| t.sigmoid(v[0]));
}

#[test]
fn leaky_relu_gradients() {
    let mut rng = seeded(9);
    // keep inputs away from the kink, where finite differences are invalid
    let x = Tensor::rand_uniform(&[10], 0.2, 1.5, &mut rng);
    let y = Tensor::rand_uniform(&[10], -1.5, -0.2, &mut rng);
    check_op("leaky_relu_pos", &[x], &|t, v| t.leaky_relu(v[0], 0.2));
    check_op("leaky_relu_neg", &[y], &|t, v| t.leaky_relu(v[0], 0.2));
}

#[test]
fn attention_gradients() {
    let mut rng = seeded(10);
    let q = Tensor::randn(&[2, 3], &mut rng);
    let k = Tensor::randn(&[4, 3], &mut rng);
    let v = Tensor::randn(&[4, 5], &mut rng);
    check_op("attention", &[q, k, v], &|t, vars| {
        t.attention(vars[0], vars[1], vars[2]).unwrap()
    });
}

#[test]
fn softmax_rows_gradients() {
    let mut rng = seeded(11);
    let x = Tensor::randn(&[3, 5], &mut rng);
    check_op("softmax_rows", &[x], &|t, v| t.softmax_rows(v[0]).unwrap());
}

#[test]
fn elementwise_and_broadcast_gradients() {
    let mut rng = seeded(12);
    let a = Tensor::randn(&[2, 3, 3], &mut rng);
    let b = Tensor::randn(&[2, 3, 3], &mut rng);
    check_op("add", &[a.clone(), b.clone()], &|t, v| t.add(v[0], v[1]).unwrap());
    check_op("sub", &[a.clone(), b.clone()], &|t, v| t.sub(v[0], v[1]).unwrap());
    check_op("mul", &[a.clone(), b], &|t, v| t.mul(v[0], v[1]).unwrap());
    check_op("mul_scalar", &[a.clone()], &|t, v| t.mul_scalar(v[0], -1.7));
    check_op("add_scalar", &[a.clone()], &|t, v| t.add_scalar(v[0], 0.4));

    let chan = Tensor::randn(&[2], &mut rng);
    check_op("add_chan", &[a.clone(), chan.clone()], &|t, v| {
        t.add_chan(v[0], v[1]).unwrap()
    });
    check_op("mul_chan", &[a.clone(), chan], &|t, v| {
        t.mul_chan(v[0], v[1]).unwrap()
    });
    let gate = Tensor::randn(&[1, 3, 3], &mut rng);
    check_op("mul_spatial", &[a, gate], &|t, v| {
        t.mul_spatial(v[0], v[1]).unwrap()
    });
}

#[test]
fn reductions_and_reshape_gradients() {
    let mut rng = seeded(13);
    let x = Tensor::randn(&[3, 3, 4], &mut rng);
    check_op("sum_all", &[x.clone()], &|t, v| t.sum_all(v[0]));
    check_op("mean_all", &[x.clone()], &|t, v| t.mean_all(v[0]));
    check_op("spatial_mean", &[x.clone()], &|t, v| t.spatial_mean(v[0]).unwrap());
    check_op("chan_mean", &[x.clone()], &|t, v| t.chan_mean(v[0]).unwrap());
    check_op("reshape", &[x.clone()], &|t, v| t.reshape(v[0], &[9, 4]).unwrap());
    check_op("transpose", &[x.clone()], &|t, v| {
        let r = t.reshape(v[0], &[9, 4]).unwrap();
        t.transpose2d(r).unwrap()
    });
    // max reductions away from ties
    check_op("spatial_max", &[x.clone()], &|t, v| t.spatial_max(v[0]).unwrap());
    check_op("chan_max", &[x], &|t, v| t.chan_max(v[0]).unwrap());
}

#[test]
fn concat_select_stack_gradients() {
    let mut rng = seeded(14);
    let a = Tensor::randn(&[2, 3, 3], &mut rng);
    let b = Tensor::randn(&[1, 3, 3], &mut rng);
    check_op("concat_chan", &[a, b], &|t, v| t.concat_chan(v[0], v[1]).unwrap());

    let p = Tensor::randn(&[4], &mut rng);
    let q = Tensor::randn(&[3], &mut rng);
    check_op("concat_last", &[p.clone(), q.clone()], &|t, v| {
        t.concat_last(v[0], v[1]).unwrap()
    });
    check_op("outer_sum", &[p, q], &|t, v| t.outer_sum(v[0], v[1]).unwrap());

    let table = Tensor::randn(&[5, 3], &mut rng);
    check_op("select_row", &[table], &|t, v| t.select_row(v[0], 2).unwrap());

    let r0 = Tensor::randn(&[4], &mut rng);
    let r1 = Tensor::randn(&[4], &mut rng);
    check_op("stack_rows", &[r0, r1], &|t, v| t.stack_rows(v).unwrap());
}

#[test]
fn composite_conv_norm_silu_linear_gradient() {
    // the composed path named by the op examples: conv -> norm -> silu ->
    // linear, checked end to end against finite differences
    let mut rng = seeded(15);
    let x = Tensor::randn(&[1, 2, 4, 4][1..], &mut rng); // [2, 4, 4]
    let k = Tensor::randn(&[4, 2, 3, 3], &mut rng);
    let g = Tensor::rand_uniform(&[4], 0.5, 1.5, &mut rng);
    let s = Tensor::randn(&[4], &mut rng);
    let w = Tensor::randn(&[3, 64], &mut rng);
    let b = Tensor::randn(&[3], &mut rng);
    check_op("conv_norm_silu_linear", &[x, k, g, s, w, b], &|t, v| {
        let c = t.conv2d(v[0], v[1]).unwrap();
        let n = t.group_norm(c, v[2], v[3], 2).unwrap();
        let a = t.silu(n);
        let flat = t.reshape(a, &[64]).unwrap();
        t.linear(flat, v[4], Some(v[5])).unwrap()
    });
}
