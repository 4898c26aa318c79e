"""Learnable parameter containers, initialization, and checkpoint files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data
from .autodiff import Tensor


class CheckpointError(ValueError):
    """A checkpoint file is malformed or inconsistent with expected shapes."""


@dataclass(frozen=True)
class ModelDims:
    """Network sizes; defaults follow the reference configuration."""
    d_w: int = 50     # word embedding width (frozen, supplied by the data)
    d_p: int = 5      # position feature embedding width
    d_c: int = 200    # CNN filter count
    d_h: int = 100    # LSTM hidden size per direction
    window: int = 3   # CNN window (odd)
    max_dist: int = data.MAX_RELATIVE_DISTANCE

    @property
    def d_in(self):
        return self.d_w + 2 * self.d_p

    @property
    def position_vocab(self):
        return 2 * self.max_dist + 1


def _uniform(rng, shape, bound):
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


@dataclass
class LSTMCellParams:
    w_x: Tensor  # (4*d_h, d_in)
    w_h: Tensor  # (4*d_h, d_h)
    b: Tensor    # (4*d_h,)

    @staticmethod
    def init(d_in, d_h, rng):
        bound = 1.0 / np.sqrt(d_h)
        return LSTMCellParams(
            w_x=_uniform(rng, (4 * d_h, d_in), bound),
            w_h=_uniform(rng, (4 * d_h, d_h), bound),
            b=_uniform(rng, (4 * d_h,), bound),
        )


@dataclass
class EncoderParams:
    pos1_table: Tensor  # (81, d_p), learnable
    pos2_table: Tensor
    filters: Tensor     # (window, d_in, d_c)
    bias: Tensor        # (d_c,)

    @staticmethod
    def init(dims: ModelDims, rng):
        fan_in = dims.window * dims.d_in
        return EncoderParams(
            pos1_table=_uniform(rng, (dims.position_vocab, dims.d_p), 0.1),
            pos2_table=_uniform(rng, (dims.position_vocab, dims.d_p), 0.1),
            # He-style uniform: the convolution feeds a ReLU
            filters=_uniform(rng, (dims.window, dims.d_in, dims.d_c),
                             np.sqrt(6.0 / fan_in)),
            bias=Tensor(np.zeros(dims.d_c), requires_grad=True),
        )


@dataclass
class MatchParams:
    w1: Tensor            # (4*d_c, d_h) fusion projection
    fwd: LSTMCellParams   # forward direction cell (input width d_h)
    bwd: LSTMCellParams   # backward direction cell
    w2: Tensor            # (d_h, 8*d_h) matching MLP, shared across levels
    v: Tensor             # (d_h,)
    w2_untied: Tensor     # class-level copies for the untied variant
    v_untied: Tensor
    # Cells for the variant that skips local matching entirely: there the
    # BLSTM consumes raw d_c-wide CNN contexts instead of fused d_h rows.
    fwd_direct: LSTMCellParams
    bwd_direct: LSTMCellParams

    @staticmethod
    def init(dims: ModelDims, rng):
        # He-style uniform for the two ReLU layers, LeCun for the linear v
        w1 = _uniform(rng, (4 * dims.d_c, dims.d_h), np.sqrt(6.0 / (4 * dims.d_c)))
        fwd = LSTMCellParams.init(dims.d_h, dims.d_h, rng)
        bwd = LSTMCellParams.init(dims.d_h, dims.d_h, rng)
        w2 = _uniform(rng, (dims.d_h, 8 * dims.d_h), np.sqrt(6.0 / (8 * dims.d_h)))
        v = _uniform(rng, (dims.d_h,), np.sqrt(3.0 / dims.d_h))
        return MatchParams(
            w1=w1, fwd=fwd, bwd=bwd, w2=w2, v=v,
            w2_untied=Tensor(w2.data.copy(), requires_grad=True),
            v_untied=Tensor(v.data.copy(), requires_grad=True),
            fwd_direct=LSTMCellParams.init(dims.d_c, dims.d_h, rng),
            bwd_direct=LSTMCellParams.init(dims.d_c, dims.d_h, rng),
        )


@dataclass
class ParameterSet:
    """All learnable weights (the frozen word table lives with the data)."""
    dims: ModelDims
    encoder: EncoderParams
    match: MatchParams

    @staticmethod
    def init(dims: ModelDims, seed: int) -> "ParameterSet":
        rng = np.random.default_rng(seed)
        return ParameterSet(dims, EncoderParams.init(dims, rng),
                            MatchParams.init(dims, rng))

    def named_parameters(self) -> dict:
        e, m = self.encoder, self.match
        return {
            "pos1_table": e.pos1_table,
            "pos2_table": e.pos2_table,
            "cnn_filters": e.filters,
            "cnn_bias": e.bias,
            "w1": m.w1,
            "lstm_fwd_wx": m.fwd.w_x,
            "lstm_fwd_wh": m.fwd.w_h,
            "lstm_fwd_b": m.fwd.b,
            "lstm_bwd_wx": m.bwd.w_x,
            "lstm_bwd_wh": m.bwd.w_h,
            "lstm_bwd_b": m.bwd.b,
            "lstm_direct_fwd_wx": m.fwd_direct.w_x,
            "lstm_direct_fwd_wh": m.fwd_direct.w_h,
            "lstm_direct_fwd_b": m.fwd_direct.b,
            "lstm_direct_bwd_wx": m.bwd_direct.w_x,
            "lstm_direct_bwd_wh": m.bwd_direct.w_h,
            "lstm_direct_bwd_b": m.bwd_direct.b,
            "w2": m.w2,
            "v": m.v,
            "w2_untied": m.w2_untied,
            "v_untied": m.v_untied,
        }

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()

    def sync_untied(self):
        """Copy the shared matching weights into the untied slots.

        Used when a checkpoint trained with weight tying is evaluated under
        the untied forward path, so both paths read the same values.
        """
        self.match.w2_untied.data[...] = self.match.w2.data
        self.match.v_untied.data[...] = self.match.v.data

    def grad_norms(self) -> dict:
        return {name: float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0
                for name, p in self.named_parameters().items()}

    # -- checkpoint I/O ----------------------------------------------------

    def save(self, path) -> None:
        """Write a deterministic binary checkpoint: text header + raw float64."""
        named = self.named_parameters()
        d = self.dims
        header = ["fewmatch-checkpoint v1",
                  f"dims d_w={d.d_w} d_p={d.d_p} d_c={d.d_c} d_h={d.d_h} "
                  f"window={d.window} max_dist={d.max_dist}"]
        for name, p in named.items():
            shape = " ".join(str(s) for s in p.data.shape)
            header.append(f"param {name} {shape}")
        header.append("end")
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            for p in named.values():
                fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())

    @staticmethod
    def load(path) -> "ParameterSet":
        with open(path, "rb") as fh:
            blob = fh.read()
        try:
            head_end = blob.index(b"\nend\n") + len(b"\nend\n")
        except ValueError:
            raise CheckpointError(f"{path}: missing header terminator")
        lines = blob[:head_end].decode("ascii").splitlines()
        if lines[0] != "fewmatch-checkpoint v1":
            raise CheckpointError(f"{path}: unrecognized checkpoint format")
        dim_fields = dict(kv.split("=") for kv in lines[1].split()[1:])
        dims = ModelDims(**{k: int(v) for k, v in dim_fields.items()})
        ps = ParameterSet.init(dims, seed=0)
        named = ps.named_parameters()
        offset = head_end
        seen = set()
        for line in lines[2:-1]:
            parts = line.split()
            if parts[0] != "param":
                raise CheckpointError(f"{path}: unexpected header line {line!r}")
            name = parts[1]
            shape = tuple(int(s) for s in parts[2:])
            if name not in named:
                raise CheckpointError(f"{path}: unknown parameter {name!r}")
            target = named[name]
            if target.data.shape != shape:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {shape}, "
                    f"expected {target.data.shape}")
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 8
            values = np.frombuffer(blob[offset:offset + nbytes], dtype="<f8")
            if values.size != count:
                raise CheckpointError(f"{path}: truncated data for {name!r}")
            target.data[...] = values.reshape(shape)
            offset += nbytes
            seen.add(name)
        missing = set(named) - seen
        if missing:
            raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
        ps.zero_grads()
        return ps
