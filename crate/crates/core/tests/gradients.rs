mod support;

use support::gradcheck;

#[test]
fn network_backward_matches_finite_differences() {
    gradcheck::network_backward_matches_finite_differences();
}

#[test]
fn backward_is_linear_in_upstream() {
    gradcheck::backward_is_linear_in_upstream();
}

#[test]
fn single_losses_through_network() {
    gradcheck::single_losses_through_network();
}

#[test]
fn total_loss_through_network_both_modes() {
    gradcheck::total_loss_through_network_both_modes();
}
