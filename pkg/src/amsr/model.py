"""The super-resolution network: shallow feature extraction, attention +
multi-scale deep feature blocks, sub-pixel reconstruction, and checkpoint
serialisation.

Parameters live in a flat ordered map from canonical layer path (e.g.
"amms.0.lsam.am.1.nl.theta.w") to numpy arrays; the path/shape set is a pure
function of the configuration, which keeps checkpoints portable and
serialisation stable.
"""

import io
import struct
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import tensor as T
from .errors import (
    CheckpointFormatError,
    CheckpointIntegrityError,
    ConfigError,
    ShapeError,
)

CHECKPOINT_MAGIC = b"AMSR"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 2
    channels: int = 64
    n_amms: int = 1
    n_am: int = 4
    nl_reduction: int = 2
    so_reduction: int = 0  # 0 resolves to min(16, channels)
    sf_layers: int = 2
    enable_nonlocal: bool = True
    enable_second_order: bool = True
    enable_multiscale: bool = True

    def __post_init__(self):
        if self.so_reduction == 0:
            object.__setattr__(self, "so_reduction", min(16, self.channels))
        self.validate()

    def validate(self):
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be one of 2, 3, 4; got {self.scale}")
        if self.channels < 4:
            raise ConfigError(f"channels must be >= 4, got {self.channels}")
        if self.n_amms < 1:
            raise ConfigError(f"n_amms must be >= 1, got {self.n_amms}")
        if self.n_am < 1:
            raise ConfigError(f"n_am must be >= 1, got {self.n_am}")
        if self.nl_reduction < 1 or self.channels % self.nl_reduction != 0:
            raise ConfigError(
                f"nl_reduction must divide channels ({self.channels}), got {self.nl_reduction}"
            )
        if self.so_reduction < 1 or self.so_reduction > self.channels:
            raise ConfigError(
                f"so_reduction must be in [1, channels={self.channels}], got {self.so_reduction}"
            )
        if self.sf_layers < 1:
            raise ConfigError(f"sf_layers must be >= 1, got {self.sf_layers}")
        if not (self.enable_nonlocal or self.enable_second_order or self.enable_multiscale):
            raise ConfigError("at least one of enable_nonlocal/enable_second_order/enable_multiscale must be true")

    def canonical_text(self):
        """Key=value lines, sorted by key; the serialised form embedded in checkpoints."""
        items = []
        for f in sorted(fields(self), key=lambda f: f.name):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            items.append(f"{f.name}={v}")
        return "\n".join(items) + "\n"

    @staticmethod
    def from_text(text):
        kwargs = {}
        known = {f.name: f.type for f in fields(ModelConfig)}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"malformed config line: {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"unknown model config field: {key}")
            if key.startswith("enable_"):
                if value not in ("true", "false"):
                    raise ConfigError(f"{key} must be true or false, got {value!r}")
                kwargs[key] = value == "true"
            else:
                try:
                    kwargs[key] = int(value)
                except ValueError:
                    raise ConfigError(f"{key} must be an integer, got {value!r}") from None
        return ModelConfig(**kwargs)

    def with_flags(self, nonlocal_=None, second_order=None, multiscale=None):
        kw = {}
        if nonlocal_ is not None:
            kw["enable_nonlocal"] = nonlocal_
        if second_order is not None:
            kw["enable_second_order"] = second_order
        if multiscale is not None:
            kw["enable_multiscale"] = multiscale
        return replace(self, **kw)


def _conv_shapes(out_ch, in_ch, k):
    return (out_ch, in_ch, k, k), (out_ch,)


def param_shapes(cfg):
    """Ordered {path: shape} for every layer; a pure function of the config."""
    c = cfg.channels
    shapes = {}

    def put(prefix, out_ch, in_ch, k):
        w, b = _conv_shapes(out_ch, in_ch, k)
        shapes[prefix + ".w"] = w
        shapes[prefix + ".b"] = b

    put("sf.coarse", c, 3, 3)
    for i in range(cfg.sf_layers):
        put(f"sf.chain.{i}", c, c, 1)

    for g in range(cfg.n_amms):
        for block in ("msff1", "msff2"):
            base = f"amms.{g}.{block}"
            if cfg.enable_multiscale:
                put(base + ".branch1", c, c, 1)
                put(base + ".branch3", c, c, 3)
                put(base + ".branch5", c, c, 5)
                put(base + ".fuse", c, 3 * c, 1)
            else:
                put(base + ".branch3", c, c, 3)
                put(base + ".fuse", c, c, 1)
            if block == "msff1" and (cfg.enable_nonlocal or cfg.enable_second_order):
                for m in range(cfg.n_am):
                    am = f"amms.{g}.lsam.am.{m}"
                    branches = 0
                    if cfg.enable_nonlocal:
                        cr = c // cfg.nl_reduction
                        put(am + ".nl.theta", cr, c, 1)
                        put(am + ".nl.phi", cr, c, 1)
                        put(am + ".nl.g", cr, c, 1)
                        put(am + ".nl.wz", c, cr, 1)
                        branches += 1
                    if cfg.enable_second_order:
                        cd = max(1, c // cfg.so_reduction)
                        put(am + ".so.down", cd, c, 1)
                        put(am + ".so.up", c, cd, 1)
                        branches += 1
                    put(am + ".fuse", c, branches * c, 1)

    put("recon.conv", 3 * cfg.scale * cfg.scale, c, 3)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict = field(default_factory=dict)

    def paths(self):
        return list(self.arrays.keys())

    def __getitem__(self, path):
        return self.arrays[path]

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype):
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def n_values(self):
        return sum(int(v.size) for v in self.arrays.values())


def build_model(cfg, seed, dtype=np.float32):
    """Initialise parameters: conv weights ~ U(-a, a) with a = sqrt(6/(fan_in+fan_out)),
    biases zero; deterministic for a given (config, seed)."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for path, shape in param_shapes(cfg).items():
        if path.endswith(".w"):
            co, ci, kh, kw = shape
            fan_in = ci * kh * kw
            fan_out = co * kh * kw
            a = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[path] = rng.uniform(-a, a, size=shape).astype(dtype)
        else:
            arrays[path] = np.zeros(shape, dtype=dtype)
    return ModelParams(cfg, arrays)


def bind_params(params, tape=None):
    """Wrap parameter arrays as Tensors: tape leaves for training, constants otherwise."""
    if tape is None:
        return {k: T.constant(v) for k, v in params.arrays.items()}
    return {k: T.leaf(v, tape) for k, v in params.arrays.items()}


def _conv(p, prefix, x, pad):
    return T.conv2d(x, p[prefix + ".w"], p[prefix + ".b"], pad)


def shallow_features(p, x, cfg):
    """Coarse 3x3 conv from RGB, then a chain of 1x1 conv+relu layers with a
    local residual connection back to the coarse features."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"shallow_features expects (n, 3, h, w) input, got {x.shape}")
    coarse = _conv(p, "sf.coarse", x, 1)
    h = coarse
    for i in range(cfg.sf_layers):
        h = T.relu(_conv(p, f"sf.chain.{i}", h, 0))
    return T.add(h, coarse)


def multi_scale_fusion(p, x, cfg, prefix):
    """Parallel conv branches at several kernel sizes, concatenated and fused by a
    1x1 conv, with a residual connection.  With multi-scale disabled only the
    3x3 branch remains."""
    b3 = T.relu(_conv(p, prefix + ".branch3", x, 1))
    if cfg.enable_multiscale:
        b1 = T.relu(_conv(p, prefix + ".branch1", x, 0))
        b5 = T.relu(_conv(p, prefix + ".branch5", x, 2))
        cat = T.concat_channels([b1, b3, b5])
    else:
        cat = b3
    fused = _conv(p, prefix + ".fuse", cat, 0)
    return T.add(fused, x)


def non_local_attention(p, x, cfg, prefix):
    """Embedded-Gaussian non-local block: softmax-normalised affinities between
    all spatial positions aggregate value features, projected back and added
    to the input."""
    n, c, h, w = x.shape
    cr = c // cfg.nl_reduction
    hw = h * w
    theta = _conv(p, prefix + ".nl.theta", x, 0)
    phi = _conv(p, prefix + ".nl.phi", x, 0)
    g = _conv(p, prefix + ".nl.g", x, 0)
    theta_m = T.transpose_last2(T.reshape(theta, (n, cr, hw)))  # (n, hw, cr)
    phi_m = T.reshape(phi, (n, cr, hw))  # (n, cr, hw)
    attn = T.softmax_rows(T.matmul(theta_m, phi_m))  # (n, hw, hw)
    g_m = T.transpose_last2(T.reshape(g, (n, cr, hw)))  # (n, hw, cr)
    y = T.matmul(attn, g_m)  # (n, hw, cr)
    y4 = T.reshape(T.transpose_last2(y), (n, cr, h, w))
    z = _conv(p, prefix + ".nl.wz", y4, 0)
    return T.add(z, x)


def second_order_attention(p, x, cfg, prefix):
    """Channel gate driven by second-order statistics: covariance pooling,
    matrix square-root normalisation, row means to a channel descriptor,
    squeeze/excite 1x1 convs, sigmoid gate applied per channel."""
    n, c, h, w = x.shape
    cov = T.covariance_pool(x)  # (n, c, c)
    root = T.newton_schulz_sqrt(cov, iters=5)
    z = T.reshape(T.row_mean(root), (n, c, 1, 1))
    d = T.relu(_conv(p, prefix + ".so.down", z, 0))
    u = _conv(p, prefix + ".so.up", d, 0)
    gate = T.sigmoid(u)
    return T.mul(x, gate)


def attention_module(p, x, cfg, prefix):
    """Run the enabled attention branches, fuse them with a 1x1 conv, add the input."""
    outs = []
    if cfg.enable_nonlocal:
        outs.append(non_local_attention(p, x, cfg, prefix))
    if cfg.enable_second_order:
        outs.append(second_order_attention(p, x, cfg, prefix))
    if not outs:
        raise ConfigError("attention module invoked with every branch disabled")
    cat = outs[0] if len(outs) == 1 else T.concat_channels(outs)
    fused = _conv(p, prefix + ".fuse", cat, 0)
    return T.add(fused, x)


def attention_chain(p, x, cfg, prefix):
    """Sequence of attention modules closed by a long skip connection."""
    h = x
    for m in range(cfg.n_am):
        h = attention_module(p, h, cfg, f"{prefix}.am.{m}")
    return T.add(h, x)


def deep_features(p, x, cfg):
    """Chain of fusion blocks, each: multi-scale fusion, attention chain,
    multi-scale fusion, plus a block-level residual.  The attention stage is
    omitted when both attention branches are disabled."""
    h = x
    for g in range(cfg.n_amms):
        inner = multi_scale_fusion(p, h, cfg, f"amms.{g}.msff1")
        if cfg.enable_nonlocal or cfg.enable_second_order:
            inner = attention_chain(p, inner, cfg, f"amms.{g}.lsam")
        inner = multi_scale_fusion(p, inner, cfg, f"amms.{g}.msff2")
        h = T.add(inner, h)
    return h


def reconstruct(p, x, cfg):
    """3x3 conv to 3*scale^2 channels followed by sub-pixel rearrangement."""
    out = _conv(p, "recon.conv", x, 1)
    return T.pixel_shuffle(out, cfg.scale)


def super_resolve(p, x, cfg):
    """Full forward pass on a mean-subtracted (n, 3, h, w) input; returns
    (n, 3, scale*h, scale*w).  Mean re-addition is the caller's job."""
    return reconstruct(p, deep_features(p, shallow_features(p, x, cfg), cfg), cfg)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params, path):
    """Binary layout: magic, u32 version, length-prefixed canonical config text,
    then per path in sorted order: length-prefixed path, u32 rank, u32 dims,
    raw little-endian f32 values."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    text = params.config.canonical_text().encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    for p in sorted(params.arrays):
        arr = params.arrays[p]
        enc = p.encode("utf-8")
        buf.write(struct.pack("<I", len(enc)))
        buf.write(enc)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointIntegrityError(f"checkpoint truncated while reading {what}")
    return data


def load_checkpoint(path, expect_config=None):
    """Read a checkpoint; validates magic/version, shape consistency against the
    embedded config, and (when given) compatibility with ``expect_config``."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        (tlen,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        cfg = ModelConfig.from_text(_read_exact(f, tlen, "config").decode("utf-8"))
        expected = param_shapes(cfg)
        arrays = {}
        for want_path in sorted(expected):
            (plen,) = struct.unpack("<I", _read_exact(f, 4, "path length"))
            got_path = _read_exact(f, plen, "path").decode("utf-8")
            if got_path != want_path:
                raise CheckpointIntegrityError(
                    f"checkpoint path mismatch: expected {want_path!r}, found {got_path!r}"
                )
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
            if shape != expected[want_path]:
                raise CheckpointIntegrityError(
                    f"checkpoint shape mismatch at {want_path}: file has {shape}, config needs {expected[want_path]}"
                )
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = _read_exact(f, 4 * count, f"values of {want_path}")
            arrays[want_path] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        if f.read(1):
            raise CheckpointIntegrityError("trailing bytes after final checkpoint entry")
    if expect_config is not None:
        _check_compatible(expect_config, cfg)
    # restore insertion order to match param_shapes
    ordered = {p: arrays[p] for p in expected}
    return ModelParams(cfg, ordered)


def _check_compatible(expect_cfg, file_cfg):
    want = param_shapes(expect_cfg)
    have = param_shapes(file_cfg)
    for p in sorted(set(want) | set(have)):
        if p not in have:
            raise CheckpointIntegrityError(f"checkpoint is missing parameter {p}")
        if p not in want:
            raise CheckpointIntegrityError(f"checkpoint has unexpected parameter {p}")
        if want[p] != have[p]:
            raise CheckpointIntegrityError(
                f"checkpoint mismatch at {p}: file has {have[p]}, config needs {want[p]}"
            )
