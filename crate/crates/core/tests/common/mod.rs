//! Helpers shared by the integration suites.

use mdpnet_core::gradcheck;
use mdpnet_core::rng::seeded;
use mdpnet_core::tensor::{Tape, Tensor, Var};

/// FD-check every input of an op builder through a fixed random weighting of
/// its output; panics with the op name on failure.
pub fn check_op(name: &str, inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) {
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
        let excess = gradcheck::check_tol(&mut f, inputs[idx].data(), analytic.data(), 1e-3);
        assert!(excess <= 1.0, "{name} input {idx}: tolerance excess {excess}");
    }
}
