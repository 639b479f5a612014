import numpy as np
import pytest
import torch

from dualrec.dualnet import DualRec

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool | None, detail: str = "") -> None:
    """``passed=None`` records a skipped criterion."""
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"[criterion {number}] {status} {name}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def finite_difference(fn, tensor: torch.Tensor, step: float = 1e-4) -> torch.Tensor:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``tensor`` (in place)."""
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        up = float(fn())
        flat[i] = orig - step
        down = float(fn())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    scale = max(float(a.norm()), float(b.norm()))
    return 0.0 if scale == 0 else float((a - b).norm()) / scale


@pytest.fixture
def tiny_model() -> DualRec:
    """d=8, n=6, h=2, L=2, 12 items, float64, no dropout; weights scaled up so
    attention and layer norms sit away from their trivial regimes."""
    model = DualRec(num_items=12, max_len=6, dim=8, heads=2, layers=2, dropout=0.0,
                    seed=3, init_std=0.5).double()
    gen = torch.Generator().manual_seed(11)
    with torch.no_grad():
        model.tables.position_table.copy_(torch.randn(11, 2, generator=gen, dtype=torch.float64))
        for name, p in model.named_parameters():
            if name.endswith(("ff_b1", "ff_b2", "ln1_bias", "ln2_bias")):
                p.copy_(0.1 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
            if name.endswith(("ln1_gain", "ln2_gain")):
                p.copy_(1.0 + 0.2 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
    return model


@pytest.fixture
def tiny_batch() -> torch.Tensor:
    return torch.tensor([
        [0, 0, 3, 7, 9, 2],
        [1, 4, 12, 4, 5, 6],
        [0, 8, 8, 11, 10, 3],
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
