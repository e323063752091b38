import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _seeded():
    torch.manual_seed(0)
    np.random.seed(0)
    yield
    # tests may flip this on; don't leak strict mode across tests
    torch.use_deterministic_algorithms(False)


def rand_scan_case(rng, b=2, n=16, d_inner=4, d_state=8, dtype=torch.float64):
    g = torch.Generator().manual_seed(rng)
    u = torch.randn(b, n, d_inner, generator=g, dtype=dtype)
    delta = torch.nn.functional.softplus(torch.randn(b, n, d_inner, generator=g, dtype=dtype))
    A = -torch.exp(torch.randn(d_inner, d_state, generator=g, dtype=dtype))
    B_t = torch.randn(b, n, d_state, generator=g, dtype=dtype)
    C_t = torch.randn(b, n, d_state, generator=g, dtype=dtype)
    D = torch.randn(d_inner, generator=g, dtype=dtype)
    return u, delta, A, B_t, C_t, D
