import pytest

from sceneshift.gradcheck import CHECKS, run_grad_checks


def test_registry_covers_required_ops():
    required = {
        "gcn_propagate",
        "graph_vae_loss",
        "backward_warp",
        "flow_supervised",
        "flow_consistency",
        "flow_smoothness",
        "ssim",
        "feature_matching",
        "synthesize_path",
    }
    assert required <= set(CHECKS)


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_op_passes_finite_differences(name):
    (result,) = run_grad_checks([name], tolerance=1e-3, seed=0)
    assert result.passed, f"{name}: max rel err {result.max_rel_err:.2e}"


def test_unknown_name_rejected():
    with pytest.raises(KeyError):
        run_grad_checks(["nope"])
