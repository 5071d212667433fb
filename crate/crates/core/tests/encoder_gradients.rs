mod common;

use common::*;
use textrec::encoder::{backward, forward_loss, Parameters};

#[test]
fn gradients_match_central_differences() {
    let params = Parameters::init(&gradient_check_config(), 17).unwrap();
    let batch = gradient_check_batch();
    let check = finite_difference_check(&params, &batch, 1e-4, 200, 99);
    assert_eq!(check.coordinates, 200);
    eprintln!("max relative error {:e}", check.max_relative_error);
    assert!(check.max_relative_error <= 1e-4, "max relative error {}", check.max_relative_error);
}

#[test]
fn gradient_shapes_and_unused_rows() {
    let params = Parameters::init(&gradient_check_config(), 3).unwrap();
    let batch = gradient_check_batch();
    let pass = forward_loss(&params, &batch).unwrap();
    let grads = backward(&params, &pass);
    for (g, p) in grads.tensors.iter().zip(params.tensors()) {
        assert_eq!(g.shape(), p.shape());
    }
    let emb = params.names().iter().position(|n| n == "token_embedding").unwrap();
    let used: std::collections::HashSet<usize> =
        [3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 16, 18, 20, 21, 22, 23, 24, 25].into_iter().collect();
    let table = &grads.tensors[emb];
    for row in 0..table.rows() {
        let nonzero = table.row(row).iter().any(|&v| v != 0.0);
        if !used.contains(&row) {
            assert!(!nonzero, "unused token row {row} has gradient");
        }
    }
    // decoder self-attention over a single token: softmax is constant
    let wq = params.names().iter().position(|n| n == "decoder.0.self_attn.wq").unwrap();
    assert!(grads.tensors[wq].as_slice().iter().all(|&v| v == 0.0));
}
