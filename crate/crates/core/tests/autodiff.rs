mod common;

use common::{adjoint_gaps, differentiable_op_cases, random_tensor, rng};
use nof1::tensor::{Tape, Tensor};

#[test]
fn analytic_gradients_match_central_differences() {
    let cases = differentiable_op_cases();
    assert!(cases.len() >= 18);
    for case in &cases {
        assert!(
            case.worst_rel_error < 1e-4,
            "{}: relative error {:e}",
            case.name,
            case.worst_rel_error
        );
    }
}

#[test]
fn conv_transpose_is_the_adjoint_of_conv() {
    for (name, gap) in adjoint_gaps() {
        assert!(gap < 1e-9, "{name}: gap {gap:e}");
    }
}

#[test]
fn forward_and_backward_are_bitwise_reproducible() {
    let run = || {
        let mut r = rng(5);
        let x = random_tensor(&mut r, &[2, 3, 8, 8], 1.0);
        let k = random_tensor(&mut r, &[4, 3, 3, 3], 0.5).tracked();
        let b = random_tensor(&mut r, &[4], 0.1).tracked();
        let kt = random_tensor(&mut r, &[4, 3, 4, 4], 0.5).tracked();
        let bt = random_tensor(&mut r, &[3], 0.1).tracked();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (kv, bv, ktv, btv) = (tape.leaf(k), tape.leaf(b), tape.leaf(kt), tape.leaf(bt));
        let h = tape.conv2d(xv, kv, bv, 2, 1).unwrap();
        let h = tape.relu(h).unwrap();
        let y = tape.conv_transpose2d(h, ktv, btv, 2, 1).unwrap();
        let y = tape.sigmoid(y).unwrap();
        let t = tape.constant(x);
        let loss = tape.mse_loss(y, t).unwrap();
        tape.backward(loss).unwrap();
        let mut bits: Vec<u64> = vec![tape.value(loss).item().unwrap().to_bits()];
        for v in [kv, bv, ktv, btv] {
            bits.extend(tape.grad(v).unwrap().iter().map(|g| g.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn untracked_branches_get_no_gradient() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::full(&[2], 1.0).tracked());
    let b = tape.constant(Tensor::full(&[2], 3.0));
    let l = tape.mse_loss(a, b).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[-2.0, -2.0]);
    assert!(tape.grad(b).is_none());
}
