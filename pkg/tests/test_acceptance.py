"""Acceptance criteria 1-10.  Each test records a one-line verdict that the
terminal summary prints under "acceptance criteria"."""
import itertools
import json
import random
import time

import pytest

from blake2s_ref import blake2s, ref_hash_update
from blobgen import random_blob
from conftest import ACCEPTANCE, GOLDEN, build
from programs import LOOPED_CALLS, POINTER, RECURSIVE
from oeiattest import corpus
from oeiattest.analysis import analyze, count_address_based_sites, export_bundle
from oeiattest.attacks import run_suite
from oeiattest.instrument import instrument_analysis
from oeiattest.ir import Return, parse_program
from oeiattest.measure import (ZERO_HASH, CviState, DecodeError, clip, decode_blob,
                               hash_update)
from oeiattest.prover import (STACK_BASE, FaultSpec, InterruptEvent, parse_var, run,
                              run_benign_pair)
from oeiattest.synth import call_chain_program, chain_program, random_program
from oeiattest.verifier import ReplaySet, abstract_execute, enumerate_legal_proofs, verify
from oeiattest.verifier.abstract import CfgIndex


def record(n, ok, detail):
    ACCEPTANCE[n] = (ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


def checked(n, detail_fn):
    """Run the assertions in the test body; record FAIL with the message."""
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc_type is None:
                record(n, True, detail_fn())
            else:
                record(n, False, f"{exc_type.__name__}: {str(exc)[:200]}")
            return False
    return _Ctx()


# -- 1. benign round trip ------------------------------------------------------

def test_c01_benign_round_trip(key):
    stats = {"corpus": 0, "generated": 0, "with_irq": 0, "elapsed": 0.0}
    with checked(1, lambda: f"{stats['corpus']} corpus + {stats['generated']} generated programs "
                            f"({stats['with_irq']} with interrupts in the operation) in "
                            f"{stats['elapsed']:.1f}s"):
        t0 = time.perf_counter()
        for e in corpus.load_all():
            a = analyze(e.program)
            r = run(instrument_analysis(a), None, e.inputs, key=key, interrupts=e.interrupts)
            rep = verify(r.blobs, export_bundle(a), e.operation, bytes(16), key.public_bytes)
            assert rep.passed, (e.name, rep.failure, rep.message)
            ex = r.for_op(e.operation)
            assert rep.paths == [x.path for x in ex], e.name
            assert rep.interrupt_paths == [x.interrupt_paths for x in ex], e.name
            stats["corpus"] += 1
        for seed in range(200):
            src, inputs, irqs = random_program(seed)
            p = parse_program(src)
            assert all(len(f.blocks) <= 12 for f in p.functions)
            a = analyze(p)
            nonce = seed.to_bytes(16, "big")
            r = run(instrument_analysis(a), None, inputs, nonce=nonce, key=key,
                    interrupts=[InterruptEvent.from_json(i) for i in irqs])
            assert r.fault is None, (seed, r.fault)
            rep = verify(r.blobs, export_bundle(a), 1, nonce, key.public_bytes)
            assert rep.passed, (seed, rep.failure, rep.message)
            (ex,) = r.executions
            assert rep.path == ex.path, seed
            assert rep.interrupt_paths == [ex.interrupt_paths], seed
            stats["generated"] += 1
            stats["with_irq"] += bool(ex.interrupt_paths)
        stats["elapsed"] = time.perf_counter() - t0
        assert stats["corpus"] >= 5 and stats["generated"] >= 200
        assert stats["elapsed"] < 60.0


# -- 2. attack detection -------------------------------------------------------

ALLOWED = {
    "function-pointer": {"CFI_TARGET", "STRUCTURE"},
    "return-address": {"STRUCTURE", "HASH_MISMATCH"},
    "critical-variable": {"CVI_VIOLATION"},
    "unintended-operation": {"OPERATION_MISMATCH"},
    "interrupt-handler": {"INTERRUPT_MISMATCH"},
}


def test_c02_attack_detection(key):
    out = {}
    with checked(2, lambda: f"{out['n']} scenarios, kinds {out['kinds']}, all detected"):
        outcomes = run_suite(key)
        kinds = {}
        for o in outcomes:
            assert not o.report.passed, f"false pass: {o.line()}"
            assert o.report.failure in ALLOWED[o.scenario.kind], o.line()
            assert all(a.changed for a in o.result.applied_faults), o.line()
            kinds[o.scenario.kind] = kinds.get(o.scenario.kind, 0) + 1
        for k in ("function-pointer", "return-address", "critical-variable",
                  "unintended-operation"):
            assert kinds.get(k), f"no {k} scenario"
        out["n"] = len(outcomes)
        out["kinds"] = ", ".join(f"{k}={v}" for k, v in sorted(kinds.items()))


# -- 3. ROP guarantee ----------------------------------------------------------

def test_c03_rop_hash_guarantee(key):
    tally = {}
    with checked(3, lambda: f"{sum(tally.values())} return-address corruptions: "
                            + ", ".join(f"{k}={v}" for k, v in sorted(tally.items()))):
        rng = random.Random(2024)
        targets = []
        for e in corpus.load_all():
            a = analyze(e.program)
            scope = a.scope(e.operation)
            rets = [i.addr for f, _, _, i in e.program.instructions()
                    if isinstance(i, Return) and f.name in scope.functions]
            code = [i.addr for *_, i in e.program.instructions()]
            targets.append((e, instrument_analysis(a), export_bundle(a), rets, code))
        runs = 0
        while runs < 150:
            e, ip, bundle, rets, code = rng.choice(targets)
            fault = FaultSpec(rng.choice(rets), rng.randint(1, 4), "overwrite_return",
                              rng.choice(code))
            nonce = rng.randbytes(16)
            r = run(ip, None, e.inputs, nonce=nonce, key=key, faults=[fault],
                    interrupts=e.interrupts, max_steps=50_000)
            if not any(a.measured and a.changed for a in r.applied_faults):
                continue  # the return did not execute inside the operation
            rep = verify(r.blobs, bundle, e.operation, nonce, key.public_bytes)
            tally[rep.failure or "PASS"] = tally.get(rep.failure or "PASS", 0) + 1
            runs += 1
        assert set(tally) <= {"STRUCTURE", "HASH_MISMATCH"}, tally


# -- 4. evidence size ----------------------------------------------------------

def test_c04_evidence_size(key):
    out = {}
    with checked(4, lambda: f"rover hashed/baseline = {out['ratio']:.2%} "
                            f"({out['hashed']}/{out['baseline']} bytes, {out['returns']} returns); "
                            f"S size constant over {out['calls']} calls; "
                            f"looped returns add {out['loop_delta']} bytes of S"):
        e = corpus.load("rover")
        ip = instrument_analysis(analyze(e.program))
        _, _, size = run_benign_pair(ip, e.operation, e.inputs, key=key)
        out.update(ratio=size.ratio, hashed=size.hashed, baseline=size.baseline,
                   returns=size.returns)
        assert size.ratio <= 0.10

        # doubling the number of returns: unrolled calls to a branch-free leaf
        sizes, baselines = [], []
        counts = [8, 16, 32, 64, 128]
        for n in counts:
            b = build(call_chain_program(n))
            hashed, plain, pair = run_benign_pair(b.ip, 1, key=key)
            (blob,) = hashed.blobs
            assert len(blob.ret_hash) == 32
            sizes.append((len(blob.addrs), len(blob.bits), blob.stream_size, pair.hashed))
            baselines.append(pair.baseline)
            assert pair.returns == n
        assert len(set(sizes)) == 1, sizes
        assert all(b2 - b1 == 8 * (n2 - n1) for (b1, n1), (b2, n2)
                   in itertools.pairwise(zip(baselines, counts)))
        out["calls"] = counts

        # doubling loop iterations whose bodies only make calls: the only
        # growth in S is the loop-head bit, never the returns
        b = build(LOOPED_CALLS)
        deltas = []
        for n in (4, 8, 16, 32):
            small = run_benign_pair(b.ip, 1, [n], key=key)
            large = run_benign_pair(b.ip, 1, [2 * n], key=key)
            (bs,), (bl,) = small[0].blobs, large[0].blobs
            assert bs.addrs == bl.addrs == ()
            assert len(bl.bits) - len(bs.bits) == n
            delta = bl.stream_size - bs.stream_size
            assert delta == (len(bl.bits) + 7) // 8 - (len(bs.bits) + 7) // 8
            assert large[2].baseline - small[2].baseline - delta == 8 * 3 * n
            deltas.append(delta)
        out["loop_delta"] = deltas


# -- 5. instrumentation reduction ----------------------------------------------

def test_c05_instrumentation_reduction():
    rows = []
    with checked(5, lambda: "; ".join(f"{n} {d}/{a}" for n, d, a, _ in rows)
                 + f"; fewest-critical {out['name']} ratio {out['ratio']:.1%}"):
        out = {}
        for e in corpus.load_all():
            a = analyze(e.program)
            data, addr = len(a.sites.data), count_address_based_sites(e.program)
            rows.append((e.name, data, addr, len(a.critical.variables)))
            assert data < addr, e.name
        name, data, addr, _ = min(rows, key=lambda r: r[3])
        out.update(name=name, ratio=data / addr)
        assert data / addr <= 0.40


# -- 6. collision freedom --------------------------------------------------------

def test_c06_collision_freedom():
    out = {}
    with checked(6, lambda: f"{out['seqs']} return sequences distinct; {out['proofs']} legal "
                            f"proofs distinct; {out['elapsed']:.1f}s"):
        t0 = time.perf_counter()
        alphabet = [0x1000 + 4 * i for i in range(16)]
        seen = {ZERO_HASH}
        level = [ZERO_HASH]
        total = 0
        for _ in range(4):
            nxt = []
            for h in level:
                for a in alphabet:
                    h2 = hash_update(h, a)
                    nxt.append(h2)
            seen.update(nxt)
            total += len(nxt)
            level = nxt
        assert total == 69_904
        assert len(seen) == total + 1          # plus the empty sequence
        n_proofs = 0
        for e in corpus.load_all():
            bundle = export_bundle(analyze(e.program))
            proofs = enumerate_legal_proofs(bundle, e.operation, loop_bound=3)
            assert proofs
            assert len({p.path for p in proofs}) == len(proofs)
            assert len({p.evidence for p in proofs}) == len(proofs), e.name
            idx = CfgIndex(bundle)
            for p in proofs:
                w = abstract_execute(idx, e.operation, p.bits, p.addrs, p.ret_hash)
                assert w.ok and tuple(w.path) == p.path
            n_proofs += len(proofs)
        out.update(seqs=total, proofs=n_proofs, elapsed=time.perf_counter() - t0)
        assert out["elapsed"] < 120.0


# -- 7. golden hash vectors ------------------------------------------------------

def test_c07_golden_vectors():
    out = {}
    with checked(7, lambda: f"{out['n']} vectors match the reference BLAKE2s byte for byte"):
        gold = json.loads((GOLDEN / "hash_vectors.json").read_text())
        assert blake2s(b"abc").hex() == gold["rfc7693_abc"]
        vecs = gold["vectors"]
        for v in vecs:
            h = bytes.fromhex(v["h"])
            assert hash_update(h, v["ret"]).hex() == v["out"]
            assert ref_hash_update(h, v["ret"]).hex() == v["out"]
        rng = random.Random(7)
        for _ in range(50):
            h, a = rng.randbytes(32), rng.getrandbits(64)
            assert hash_update(h, a) == ref_hash_update(h, a)
        out["n"] = len(vecs) + 50
        assert len(vecs) >= 10


# -- 8. codec robustness ---------------------------------------------------------

def test_c08_codec_robustness(key):
    out = {"decode": 0, "signature": 0}
    with checked(8, lambda: f"10000 round trips; 10000 mutations -> {out['decode']} decode, "
                            f"{out['signature']} SIGNATURE, 0 pass; replay rejected"):
        rng = random.Random(8)
        for _ in range(10_000):
            b = random_blob(rng)
            assert decode_blob(b.encode()) == b

        e = corpus.load("rover")
        a = analyze(e.program)
        bundle, ip = export_bundle(a), instrument_analysis(a)
        genuine = []
        for i in range(4):
            nonce = bytes([i]) * 16
            r = run(ip, None, e.inputs[:1] + (i * 7, i), nonce=nonce, key=key)
            assert verify(r.blobs, bundle, 1, nonce, key.public_bytes).passed
            genuine.append((nonce, r.blobs[0].encode()))
        for _ in range(10_000):
            nonce, raw = rng.choice(genuine)
            m = bytearray(raw)
            for pos in rng.sample(range(len(m)), rng.randint(1, 3)):
                m[pos] ^= rng.randrange(1, 256)
            assert m != raw
            try:
                blob = decode_blob(bytes(m))
            except DecodeError:
                out["decode"] += 1
                continue
            rep = verify([blob], bundle, 1, nonce, key.public_bytes)
            assert rep.failure == "SIGNATURE", rep.failure
            out["signature"] += 1

        replay = ReplaySet()
        for nonce, raw in genuine:
            blob = decode_blob(raw)
            assert verify([blob], bundle, 1, nonce, key.public_bytes, replay=replay).passed
            for _ in range(3):
                rep = verify([blob], bundle, 1, nonce, key.public_bytes, replay=replay)
                assert rep.failure == "NONCE_MISMATCH"


# -- 9. CVI semantics ------------------------------------------------------------

def _verdict(b, key, **kw):
    r = run(b.ip, None, key=key, **kw)
    return r, verify(r.blobs, b.bundle, 1, bytes(16), key.public_bytes)


def test_c09_cvi_semantics(key):
    out = {}
    with checked(9, lambda: f"{out['model']} random define/use traces match the model; "
                            f"{out['machine']} machine runs; overlap exact on "
                            f"{out['clips']} ranges; per-frame recursion"):
        rng = random.Random(9)
        # state machine against a dictionary model
        for _ in range(500):
            s, model, flagged = CviState(), {}, False
            for _ in range(30):
                v, x = rng.randrange(4), rng.randrange(3)
                if rng.random() < 0.4:
                    s.define(v, x)
                    model[v] = x
                else:
                    ok = s.use(v, x, 0)
                    expect = model.setdefault(v, x) == x
                    assert ok == expect
                    flagged |= not expect
            assert s.flag == flagged
        out["model"] = 500

        # define then equal use passes; an intervening change is detected
        b = build(POINTER)
        runs = 0
        for _ in range(40):
            v = rng.randrange(-1000, 1000)
            _, rep = _verdict(b, key, inputs=[rng.randrange(2), v])
            assert rep.passed
            bad = rng.randrange(-1000, 1000)
            if bad == 5:
                continue
            attest = b.program.function("main").block("entry")
            store = next(i for i in attest.instructions if type(i).__name__ == "Store")
            fault = FaultSpec(store.addr, 1, "overwrite_var", bad, var=parse_var("@next"))
            _, rep = _verdict(b, key, inputs=[0, v], faults=[fault])
            assert rep.failure == "CVI_VIOLATION"
            runs += 2
        out["machine"] = runs

        # out-of-bounds access through a critical pointer: exactly the overlap
        clips = 0
        for base in range(0, 12):
            for length in range(0, 6):
                for ab in range(0, 16):
                    for al in range(0, 6):
                        got = set(clip(base, length, ab, al))
                        assert got == set(range(base, base + length)) & set(range(ab, ab + al))
                        clips += 1
        out["clips"] = clips
        _, rep = _verdict(b, key, inputs=[2, 42])      # p[2] runs past @buf into @next
        assert rep.failure == "CVI_VIOLATION"
        buf = b.program.global_decl("buf")
        assert buf.length == 2
        _, rep = _verdict(b, key, inputs=[1, 42])      # last in-bounds word
        assert rep.passed

        # recursive locals: one tracked word per frame
        r = build(RECURSIVE)
        back = r.program.function("rec").block("back")
        _, rep = _verdict(r, key)
        assert rep.passed
        for occurrence, depth in ((1, 2), (2, 1), (3, 0)):
            fault = FaultSpec(back.start, occurrence, "overwrite_var", 12345,
                              var=parse_var("rec.x"))
            _, rep = _verdict(r, key, faults=[fault])
            assert rep.failure == "CVI_VIOLATION"
            ((var, _),) = rep.context
            assert var == STACK_BASE + 1 + 5 * depth + 1


# -- 10. verifier linearity --------------------------------------------------------

def test_c10_verifier_linearity(key):
    out = {}
    with checked(10, lambda: f"log-log slope {out['slope']:.3f} over n={out['ns'][0]}..{out['ns'][-1]} "
                             f"(steps {out['steps'][0]}..{out['steps'][-1]}); "
                             f"time slope {out['tslope']:.2f}"):
        ns = [100, 200, 500, 1000, 2000, 5000, 10_000]
        steps, times = [], []
        for n in ns:
            b = build(chain_program(n))
            r = run(b.ip, 1, key=key)
            t0 = time.perf_counter()
            rep = verify(r.blobs, b.bundle, 1, bytes(16), key.public_bytes)
            times.append(time.perf_counter() - t0)
            assert rep.passed and len(rep.path) == n + 3
            steps.append(rep.stats["steps"])
        slope = _loglog_slope(ns, steps)
        out.update(slope=slope, ns=ns, steps=steps, tslope=_loglog_slope(ns, times))
        assert abs(slope - 1.0) <= 0.10


def _loglog_slope(xs, ys):
    import math
    lx = [math.log(x) for x in xs]
    ly = [math.log(max(y, 1e-9)) for y in ys]
    mx, my = sum(lx) / len(lx), sum(ly) / len(ly)
    return (sum((a - mx) * (b - my) for a, b in zip(lx, ly))
            / sum((a - mx) ** 2 for a in lx))
