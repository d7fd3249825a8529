import numpy as np
import pytest
import torch


def central_difference(fn, tensors, step=1e-4):
    """Numerical gradient of scalar ``fn()`` w.r.t. each tensor, entry by entry."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + step
                up = float(fn())
                flat[i] = old - step
                down = float(fn())
                flat[i] = old
                gflat[i] = (up - down) / (2 * step)
            grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = a.detach().double(), n.double()
        # scale by the larger of the two gradient norms so near-zero entries don't dominate
        scale = max(a.abs().max().item(), n.abs().max().item(), floor)
        worst = max(worst, ((a - n).abs().max().item()) / scale)
    return worst


def gradient_check(fn, tensors, step=1e-4):
    """Return the worst relative error between autograd and central differences."""
    for t in tensors:
        t.grad = None
    out = fn()
    analytic = torch.autograd.grad(out, tensors, allow_unused=True)
    analytic = [torch.zeros_like(t) if a is None else a for a, t in zip(analytic, tensors)]
    numeric = central_difference(fn, tensors, step)
    return max_relative_error(analytic, numeric)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # expose each phase's report on the item so fixtures can see the outcome
    outcome = yield
    rep = outcome.get_result()
    setattr(item, f"rep_{rep.when}", rep)
