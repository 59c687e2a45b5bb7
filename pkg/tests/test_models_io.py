import json
import struct

import numpy as np
import pytest

from neoplan import (Graph, OpKind, execute, gen_model, infer_shapes,
                     load_model, read_weights, save_model, validate,
                     write_weights)
from neoplan.errors import CorruptModel
from neoplan.models import KINDS


def rand_input(g, seed=0):
    inp = next(n for n in g.nodes.values() if n.kind == OpKind.Input)
    shape = tuple(inp.attrs["shape"])
    a = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    return {inp.attrs.get("name", f"input{inp.id}"): a}


class TestGenModel:
    @pytest.mark.parametrize("kind", KINDS)
    def test_valid_and_runnable(self, kind):
        g = gen_model(kind, depth=2, channels=8, hw=8, seed=0)
        assert validate(g) == []
        infer_shapes(g)
        out = execute(g, rand_input(g))
        assert len(out) == 1 and np.isfinite(out[0]).all()

    def test_deterministic(self):
        a = gen_model("chain", depth=1, channels=4, hw=8, seed=3)
        b = gen_model("chain", depth=1, channels=4, hw=8, seed=3)
        wa = next(n.attrs["value"] for n in a.nodes.values()
                  if n.kind == OpKind.Constant and n.attrs["value"].ndim == 4)
        wb = next(n.attrs["value"] for n in b.nodes.values()
                  if n.kind == OpKind.Constant and n.attrs["value"].ndim == 4)
        assert np.array_equal(wa, wb)

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            gen_model("transformer")

    def test_bad_size(self):
        with pytest.raises(ValueError):
            gen_model("chain", depth=0)


class TestWeightsFile:
    def tensors(self):
        rng = np.random.default_rng(0)
        return {"a": rng.standard_normal((4, 3, 2, 2)).astype(np.float32),
                "b": rng.standard_normal(7).astype(np.float32),
                "scalar": np.array(rng.standard_normal(), dtype=np.float32)}

    def test_round_trip(self, tmp_path):
        p = tmp_path / "w.npwt"
        t = self.tensors()
        write_weights(p, t)
        back = read_weights(p)
        assert set(back) == set(t)
        for k in t:
            assert np.array_equal(back[k], t[k])

    def test_payload_alignment(self, tmp_path):
        p = tmp_path / "w.npwt"
        write_weights(p, self.tensors())
        raw = p.read_bytes()
        assert raw[:4] == b"NPWT"
        (count,) = struct.unpack_from("<I", raw, 8)
        off = 12
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2 + nlen
            _, rank = struct.unpack_from("<BB", raw, off)
            off += 2 + 8 * rank
            (payload,) = struct.unpack_from("<Q", raw, off)
            off += 8
            assert payload % 64 == 0

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "w.npwt"
        p.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(CorruptModel):
            read_weights(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "w.npwt"
        p.write_bytes(b"NPWT" + struct.pack("<II", 9, 0))
        with pytest.raises(CorruptModel):
            read_weights(p)

    def test_header_corruption(self, tmp_path):
        p = tmp_path / "w.npwt"
        write_weights(p, self.tensors())
        raw = bytearray(p.read_bytes())
        raw[14] ^= 0xFF  # inside the first entry name
        p.write_bytes(bytes(raw))
        with pytest.raises(CorruptModel):
            read_weights(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "w.npwt"
        write_weights(p, {"w": np.ones((64, 64), np.float32)})
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CorruptModel):
            read_weights(p)


class TestModelRoundTrip:
    @pytest.mark.parametrize("kind", KINDS)
    def test_execution_identical(self, tmp_path, kind):
        g = gen_model(kind, depth=2, channels=8, hw=8, seed=1)
        save_model(g, tmp_path / "m.json", tmp_path / "m.npwt")
        h = load_model(tmp_path / "m.json", tmp_path / "m.npwt")
        assert validate(h) == []
        inputs = rand_input(g, seed=5)
        assert np.array_equal(execute(g, inputs)[0], execute(h, inputs)[0])

    def test_structure_preserved(self, tmp_path):
        g = gen_model("resnet-block", depth=1, channels=4, hw=8)
        save_model(g, tmp_path / "m.json", tmp_path / "m.npwt")
        h = load_model(tmp_path / "m.json", tmp_path / "m.npwt")
        assert set(h.nodes) == set(g.nodes)
        for nid in g.nodes:
            assert h.nodes[nid].kind == g.nodes[nid].kind
            assert h.nodes[nid].inputs == g.nodes[nid].inputs
        assert h.outputs == g.outputs

    def test_epilogue_attrs_survive(self, tmp_path):
        from neoplan import simplify
        g = simplify(gen_model("chain", depth=2, channels=8, hw=8, seed=2))
        save_model(g, tmp_path / "m.json", tmp_path / "m.npwt")
        h = load_model(tmp_path / "m.json", tmp_path / "m.npwt")
        inputs = rand_input(g, seed=6)
        assert np.array_equal(execute(g, inputs)[0], execute(h, inputs)[0])

    def test_bad_json(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{ this is not json")
        with pytest.raises(CorruptModel):
            load_model(p, tmp_path / "missing.npwt")

    def test_unknown_kind(self, tmp_path):
        doc = {"name": "x", "nodes": [{"id": 0, "kind": "Conv9d",
                                       "attrs": {}, "inputs": []}],
               "outputs": [0]}
        (tmp_path / "m.json").write_text(json.dumps(doc))
        write_weights(tmp_path / "m.npwt", {})
        with pytest.raises(CorruptModel):
            load_model(tmp_path / "m.json", tmp_path / "m.npwt")

    def test_missing_tensor_ref(self, tmp_path):
        doc = {"name": "x",
               "nodes": [{"id": 0, "kind": "Constant",
                          "attrs": {"value": {"$tensor": "ghost"}},
                          "inputs": []}],
               "outputs": [0]}
        (tmp_path / "m.json").write_text(json.dumps(doc))
        write_weights(tmp_path / "m.npwt", {})
        with pytest.raises(CorruptModel):
            load_model(tmp_path / "m.json", tmp_path / "m.npwt")
