#[path = "support/gradcheck_suite.rs"]
mod suite;

#[test]
fn elementwise_binary_ops() {
    suite::elementwise_binary_ops();
}

#[test]
fn elementwise_unary_ops() {
    suite::elementwise_unary_ops();
}

#[test]
fn reductions_and_shape_ops() {
    suite::reductions_and_shape_ops();
}

#[test]
fn convolutions() {
    suite::convolutions();
}

#[test]
fn batch_norm_both_modes() {
    suite::batch_norm_both_modes();
}

#[test]
fn dropout_and_lerp() {
    suite::dropout_and_lerp();
}

#[test]
fn conv_double_backprop_wrt_kernel() {
    suite::conv_double_backprop_wrt_kernel();
}

#[test]
fn adjoint_identity() {
    suite::adjoint_identity();
}
