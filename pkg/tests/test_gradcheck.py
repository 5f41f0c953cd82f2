"""Finite-difference verification harness and the skip-gradient checks."""

import numpy as np
import pytest

from seqpress.errors import DataError
from seqpress.gradcheck import (
    finite_difference_check,
    residual_gradient_decomposition_check,
)
from seqpress.network import (
    NetworkConfig,
    flatten_params,
    forward_pass,
    init_network,
    param_layout,
)


def _instance(hidden=4, layers=3, seq_len=5, seed=0, data_seed=100):
    cfg = NetworkConfig(hidden_size=hidden, num_layers=layers, seq_len=seq_len,
                        input_size=7)
    net = init_network(cfg, seed=seed)
    gen = np.random.default_rng(data_seed)
    x = gen.normal(size=(seq_len, 7))
    z, _ = forward_pass(net, x)
    y = np.clip(z + 0.1 * gen.normal(size=z.shape), 0.05, 0.95)
    return net, x, y


def test_desk_scale_configurations_pass_the_check():
    for hidden, layers, seq_len in ((4, 2, 5), (8, 4, 8)):
        net, x, y = _instance(hidden, layers, seq_len, seed=hidden + layers)
        report = finite_difference_check(net, x, y, l2_penalty=1e-4,
                                         num_coords=200, seed=0)
        assert report.max_rel_err < 1e-5, (hidden, layers, report.worst_coordinate)


def test_subsample_covers_every_tensor():
    net, x, y = _instance()
    report = finite_difference_check(net, x, y, num_coords=200, seed=3)
    names = {name for name, _, _ in param_layout(net)}
    assert set(report.per_tensor) == names
    assert report.num_coords >= 200


def test_report_is_deterministic_in_the_seed():
    net, x, y = _instance()
    a = finite_difference_check(net, x, y, num_coords=64, seed=5)
    b = finite_difference_check(net, x, y, num_coords=64, seed=5)
    assert a.max_rel_err == b.max_rel_err
    assert a.worst_coordinate == b.worst_coordinate
    c = finite_difference_check(net, x, y, num_coords=64, seed=6)
    assert c.num_coords == a.num_coords  # same coverage, different coordinates


def test_epsilon_outside_supported_window_is_rejected():
    net, x, y = _instance()
    for eps in (1e-8, 5e-3, 0.0, -1e-5):
        with pytest.raises(DataError):
            finite_difference_check(net, x, y, epsilon=eps)


def test_zero_upstream_injection_gives_identically_zero_report():
    """Injecting dloss/dz = 0 turns the objective into a constant: both the
    analytic and numeric sides must vanish identically, not just closely."""
    net, x, y = _instance(hidden=3, layers=2)
    report = finite_difference_check(net, x, y, l2_penalty=0.0,
                                     dloss_dz=np.zeros((5, 3)),
                                     num_coords=150, seed=1)
    assert report.max_rel_err == 0.0
    assert report.worst_analytic == 0.0
    assert report.worst_numeric == 0.0


def test_corrupted_gradient_entry_is_flagged():
    net, x, y = _instance(hidden=3, layers=2)
    from seqpress.backprop import backward_pass

    z, cache = forward_pass(net, x, training=True)
    dz = 2.0 * (z - y)
    grads, _ = backward_pass(net, cache, dz)
    grads.head.b_z[1] += 1.0  # deliberate corruption
    report = finite_difference_check(net, x, y, l2_penalty=0.0, dloss_dz=dz,
                                     analytic_grads=grads, num_coords=10**9, seed=0)
    assert report.worst_coordinate == "head.b_z[1]"
    assert report.max_rel_err > 0.1


def test_flat_vector_can_supply_the_analytic_side():
    net, x, y = _instance(hidden=3, layers=2)
    from seqpress.backprop import backward_pass

    z, cache = forward_pass(net, x, training=True)
    dz = 2.0 * (z - y)
    grads, _ = backward_pass(net, cache, dz)
    flat = flatten_params(grads)
    report = finite_difference_check(net, x, y, l2_penalty=0.0, dloss_dz=dz,
                                     analytic_grads=flat, num_coords=200, seed=2)
    assert report.max_rel_err < 1e-5


def test_report_dict_has_the_cli_contract_fields():
    net, x, y = _instance(hidden=3, layers=2)
    d = finite_difference_check(net, x, y, num_coords=40, seed=9).to_dict()
    for key in ("max_rel_err", "worst_coordinate", "epsilon", "seed"):
        assert key in d
    assert d["epsilon"] == 1e-5 and d["seed"] == 9


# --- additive-skip gradient structure ---------------------------------------


def test_decomposition_on_random_network():
    net, x, y = _instance(hidden=4, layers=3, seed=20, data_seed=21)
    report = residual_gradient_decomposition_check(net, x, y, seed=0)
    assert report.telescoping_max_abs_err < 1e-12
    assert report.zero_block_max_abs_err == 0.0
    assert report.stream_grad_max_rel_err < 1e-5
    assert report.levels_checked == 2


def test_decomposition_zeroed_blocks_are_exact_by_construction():
    net, x, y = _instance(hidden=4, layers=4, seed=22, data_seed=23)
    for layer in net.stack:
        for _, arr in layer.named_arrays():
            arr[:] = 0.0
    report = residual_gradient_decomposition_check(net, x, y, seed=1)
    assert report.telescoping_max_abs_err == 0.0  # streams are literally equal
    assert report.zero_block_max_abs_err == 0.0
    assert report.stream_grad_max_rel_err < 1e-5


def test_decomposition_requires_a_stacked_residual_network():
    cfg = NetworkConfig(hidden_size=3, num_layers=1, seq_len=4, input_size=7)
    net = init_network(cfg, seed=0)
    x = np.zeros((4, 7))
    y = np.full((4, 3), 0.5)
    with pytest.raises(DataError):
        residual_gradient_decomposition_check(net, x, y)
    cfg2 = NetworkConfig(hidden_size=3, num_layers=3, seq_len=4, input_size=7,
                         residual=False)
    with pytest.raises(DataError):
        residual_gradient_decomposition_check(init_network(cfg2, seed=0), x, y)
