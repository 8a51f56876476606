"""Dense feedforward networks with hand-rolled backprop.

Shared engine for the window autoencoder and the task translator. Everything
is plain numpy in float64 so finite-difference gradient checks stay sharp and
results are bit-reproducible from a seed. Weights W[i] have shape
(n_in, n_out); a batch is a row-major (B, n_in) array.
"""

import struct

import numpy as np

from .errors import NumericalDivergence

ACTIVATIONS = ("tanh", "relu", "identity")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

_MAGIC = b"DNET"
_VERSION = 1


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, a):
    # a = activation(z), passed in so tanh reuses the forward value
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


class DenseNet:
    """Fully connected net with per-layer activations.

    Parameters
    ----------
    layer_sizes : sequence of int, [n_in, h1, ..., n_out]
    activations : sequence of str, one per weight layer
    seed : int, seeds Xavier-uniform init (U(-a, a), a = sqrt(6/(fan_in+fan_out)))
    """

    def __init__(self, layer_sizes, activations, seed=0):
        layer_sizes = [int(s) for s in layer_sizes]
        activations = list(activations)
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if any(s <= 0 for s in layer_sizes):
            raise ValueError("layer sizes must be positive, got %r" % (layer_sizes,))
        if len(activations) != len(layer_sizes) - 1:
            raise ValueError(
                "activation count %d does not chain %d layer sizes"
                % (len(activations), len(layer_sizes))
            )
        for name in activations:
            if name not in _ACT_CODE:
                raise ValueError("unknown activation %r" % (name,))
        self.activations = activations
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (n_in + n_out))
            self.weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
            self.biases.append(np.zeros(n_out))

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self):
        return len(self.weights)

    def forward(self, x):
        """Pure forward pass. Accepts (n_in,) or (B, n_in); returns same rank."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.shape[1] != self.weights[0].shape[0]:
            raise ValueError(
                "input width %d, net expects %d" % (a.shape[1], self.weights[0].shape[0])
            )
        for w, b, name in zip(self.weights, self.biases, self.activations):
            a = _act(name, a @ w + b)
        return a[0] if single else a

    def forward_cache(self, x):
        """Forward pass retaining per-layer pre/post activations for backward.

        Returns (output, cache). The cache is consumed by `backward`.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        a = x[None, :] if single else x
        zs, acts = [], [a]
        for w, b, name in zip(self.weights, self.biases, self.activations):
            z = a @ w + b
            a = _act(name, z)
            zs.append(z)
            acts.append(a)
        cache = {"zs": zs, "acts": acts, "single": single}
        return (a[0] if single else a), cache

    def backward(self, cache, grad_out):
        """Backprop an output gradient through a cached forward pass.

        grad_out carries dL/d(output) per sample; returned gradients are the
        corresponding dL/dW, dL/db summed over the batch (so a single-sample
        cache yields that sample's gradient).
        """
        if not isinstance(cache, dict) or "zs" not in cache:
            raise ValueError("missing or invalid forward cache")
        if len(cache["zs"]) != self.n_layers:
            raise ValueError("cache does not match network depth")
        g = np.asarray(grad_out, dtype=np.float64)
        if cache["single"]:
            g = g[None, :]
        if g.shape != cache["acts"][-1].shape:
            raise ValueError(
                "output-gradient shape %r does not match cached output %r"
                % (g.shape, cache["acts"][-1].shape)
            )
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            g = g * _act_grad(self.activations[i], cache["zs"][i], cache["acts"][i + 1])
            grads_w[i] = cache["acts"][i].T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return grads_w, grads_b

    def params(self):
        return self.weights + self.biases


class Adam:
    """Adam optimizer over a list of parameter arrays (updated in place)."""

    def __init__(self, params, step_size=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step_size = float(step_size)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.step_size * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


class TrainConfig:
    """Optimizer/schedule knobs. seed drives init noise and batch order."""

    def __init__(self, step_size=1e-3, batch_size=32, epochs=200, seed=0):
        if step_size <= 0 or batch_size < 1 or epochs < 1:
            raise ValueError("invalid training configuration")
        self.step_size = float(step_size)
        self.batch_size = int(batch_size)
        self.epochs = int(epochs)
        self.seed = int(seed)


def _check_finite(loss, epoch):
    if not np.isfinite(loss):
        raise NumericalDivergence(
            "training loss became non-finite at epoch %d (loss=%r)" % (epoch, loss)
        )


def train_mse(net, x, y, cfg):
    """Minimize mean over samples of ||net(x) - y||^2 with Adam.

    Returns the per-epoch loss curve (list of float, evaluated on the
    shuffled stream as it is consumed, so epoch 0 reflects near-initial
    weights).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("expected matching 2-D sample/target arrays")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.params(), step_size=cfg.step_size)
    n = x.shape[0]
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            pred, cache = net.forward_cache(xb)
            resid = pred - yb
            total += float(np.sum(resid * resid))
            gw, gb = net.backward(cache, 2.0 * resid / len(idx))
            opt.step(net.params(), gw + gb)
        loss = total / n
        _check_finite(loss, epoch)
        curve.append(loss)
    return curve


def vae_loss_terms(x, x_hat, mu, logvar):
    """Per-sample reconstruction ||x - x_hat||^2 and KL(N(mu, sigma) || N(0, I))."""
    recon = np.sum((x - x_hat) ** 2, axis=-1)
    kl = 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=-1)
    return recon, kl


def train_vae(encoder, decoder, x, cfg):
    """Jointly train an encoder/decoder pair on the reparameterized VAE bound.

    The encoder's output is [mu, logvar] (width 2*latent); the decoder maps a
    latent sample rho = mu + exp(logvar/2) * eps back to input space. Loss per
    sample is ||x - x_hat||^2 + KL. Returns the per-epoch loss curve.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D window matrix")
    latent = decoder.layer_sizes[0]
    if encoder.layer_sizes[-1] != 2 * latent:
        raise ValueError(
            "encoder output %d must be twice the decoder input %d"
            % (encoder.layer_sizes[-1], latent)
        )
    if decoder.layer_sizes[-1] != encoder.layer_sizes[0]:
        raise ValueError("decoder output must match encoder input width")
    rng = np.random.default_rng(cfg.seed)
    params = encoder.params() + decoder.params()
    opt = Adam(params, step_size=cfg.step_size)
    n = x.shape[0]
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            xb = x[order[start : start + cfg.batch_size]]
            b = len(xb)
            enc_out, enc_cache = encoder.forward_cache(xb)
            mu, logvar = enc_out[:, :latent], enc_out[:, latent:]
            sigma = np.exp(0.5 * logvar)
            eps = rng.standard_normal((b, latent))
            rho = mu + sigma * eps
            x_hat, dec_cache = decoder.forward_cache(rho)
            recon, kl = vae_loss_terms(xb, x_hat, mu, logvar)
            total += float(np.sum(recon + kl))
            # gradient wrt decoder output, then chain to [mu, logvar]
            g_xhat = 2.0 * (x_hat - xb) / b
            dec_gw, dec_gb = decoder.backward(dec_cache, g_xhat)
            g_rho = _input_grad(decoder, dec_cache, g_xhat)
            g_mu = g_rho + mu / b
            g_logvar = g_rho * eps * 0.5 * sigma + 0.5 * (np.exp(logvar) - 1.0) / b
            enc_gw, enc_gb = encoder.backward(
                enc_cache, np.concatenate([g_mu, g_logvar], axis=1)
            )
            opt.step(params, enc_gw + enc_gb + dec_gw + dec_gb)
        loss = total / n
        _check_finite(loss, epoch)
        curve.append(loss)
    return curve


def _input_grad(net, cache, grad_out):
    """dL/d(input) for a cached forward pass (backward without weight grads)."""
    g = np.asarray(grad_out, dtype=np.float64)
    for i in range(net.n_layers - 1, -1, -1):
        g = g * _act_grad(net.activations[i], cache["zs"][i], cache["acts"][i + 1])
        g = g @ net.weights[i].T
    return g


def train(model, x, y=None, loss="mse", cfg=None):
    """Dispatching trainer.

    loss="mse": model is a DenseNet, (x, y) are supervised pairs.
    loss="vae": model is an (encoder, decoder) tuple, x is the data matrix.
    """
    if cfg is None:
        cfg = TrainConfig()
    if loss == "mse":
        return train_mse(model, x, y, cfg)
    if loss == "vae":
        encoder, decoder = model
        return train_vae(encoder, decoder, x, cfg)
    raise ValueError("unknown loss %r" % (loss,))


def save_net(net, fh):
    """Serialize to the flat binary format.

    Layout (little-endian): magic b"DNET", u32 version, u32 n_layers,
    u32 sizes[n_layers + 1], u8 activation codes[n_layers], then per layer the
    row-major float64 weight matrix followed by the float64 bias vector.
    `fh` is a path or an open binary file handle.
    """
    own = isinstance(fh, (str, bytes))
    f = open(fh, "wb") if own else fh
    try:
        sizes = net.layer_sizes
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, net.n_layers))
        f.write(struct.pack("<%dI" % len(sizes), *sizes))
        f.write(bytes(_ACT_CODE[a] for a in net.activations))
        for w, b in zip(net.weights, net.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    finally:
        if own:
            f.close()


def load_net(fh):
    """Inverse of save_net. Raises ValueError on malformed headers."""
    own = isinstance(fh, (str, bytes))
    f = open(fh, "rb") if own else fh
    try:
        if f.read(4) != _MAGIC:
            raise ValueError("not a serialized network (bad magic)")
        version, n_layers = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError("unsupported format version %d" % version)
        sizes = struct.unpack("<%dI" % (n_layers + 1), f.read(4 * (n_layers + 1)))
        codes = f.read(n_layers)
        if len(codes) != n_layers:
            raise ValueError("truncated activation table")
        try:
            acts = [ACTIVATIONS[c] for c in codes]
        except IndexError:
            raise ValueError("unknown activation code in header") from None
        net = DenseNet(sizes, acts, seed=0)
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = np.frombuffer(f.read(8 * n_in * n_out), dtype="<f8")
            b = np.frombuffer(f.read(8 * n_out), dtype="<f8")
            if w.size != n_in * n_out or b.size != n_out:
                raise ValueError("truncated parameter block in layer %d" % i)
            net.weights[i] = w.reshape(n_in, n_out).astype(np.float64)
            net.biases[i] = b.astype(np.float64)
        return net
    finally:
        if own:
            f.close()


def gradient_check(net, x, target, fd_step=1e-5):
    """Max relative error between backprop and central finite differences.

    Loss is ||net(x) - target||^2 on a single sample. Used by tests; kept in
    the library so the check is runnable against any net.
    """
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    pred, cache = net.forward_cache(x)
    gw, gb = net.backward(cache, 2.0 * (pred - target))
    analytic = gw + gb
    worst = 0.0
    for p, g in zip(net.params(), analytic):
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + fd_step
            hi = float(np.sum((net.forward(x) - target) ** 2))
            p[idx] = orig - fd_step
            lo = float(np.sum((net.forward(x) - target) ** 2))
            p[idx] = orig
            fd = (hi - lo) / (2.0 * fd_step)
            rel = abs(g[idx] - fd) / max(abs(fd), 1e-6)
            worst = max(worst, rel)
            it.iternext()
    return worst
