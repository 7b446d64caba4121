"""Bias-corrected Adam, functional core plus a small stateful wrapper."""

import torch


def adam_update(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step. `t` is the 1-based step count including this update.

    Returns (new_param, new_m, new_v); inputs are not mutated.
    """
    m_new = beta1 * m + (1.0 - beta1) * grad
    v_new = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m_new / (1.0 - beta1**t)
    v_hat = v_new / (1.0 - beta2**t)
    param_new = param - lr * m_hat / (torch.sqrt(v_hat) + eps)
    return param_new, m_new, v_new


class Adam:
    """Adam over a named parameter dict, with externally loadable moments."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self):
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            new_p, self.m[name], self.v[name] = adam_update(
                p, p.grad, self.m[name], self.v[name], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )
            p.copy_(new_p)

    def state_arrays(self):
        """Moment tensors and step count for checkpointing."""
        out = {"t": self.t}
        for name in self.params:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, t, moments):
        self.t = int(t)
        for name in self.params:
            self.m[name] = moments[f"m/{name}"].clone().to(self.m[name].dtype)
            self.v[name] = moments[f"v/{name}"].clone().to(self.v[name].dtype)
