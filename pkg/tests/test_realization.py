"""Round trips between testers and their physical implementations."""

import json

import numpy as np
import pytest

from probeopt.channels import su2_channel
from probeopt.operators import (
    Op,
    choi_from_kraus,
    identity,
    kron,
    layout,
    max_entangled,
    partial_trace,
    permute_factors,
)
from probeopt.priors import copies_layout
from probeopt.realization import (
    decode_matrix,
    realization_bundle,
    realize_general,
    realize_parallel,
    realize_sequential_k2,
    save_bundle,
    outcome_probabilities,
)
from probeopt.sdp import (
    TesterSet,
    _herm_decode,
    affine_projector,
    class_residual,
    general,
    parallel,
    sequential,
    solve_testers,
)


def psd_sqrt(M):
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T


def random_channel_choi(rng, d_in=2, d_out=2, in_label="I", out_label="O"):
    d_env = d_in * d_out
    z = rng.normal(size=(d_out * d_env, d_in)) + 1j * rng.normal(size=(d_out * d_env, d_in))
    q, _ = np.linalg.qr(z)
    v = q.reshape(d_out, d_env, d_in)
    return choi_from_kraus([v[:, e, :] for e in range(d_env)], in_label, out_label)


def random_feasible_testers(strategy, lay, n_out, rng, scale=0.05):
    """Random strictly feasible tester set: a feasible total split by a random POVM."""
    x0, Q = affine_projector(strategy, lay)
    D = lay.total_dim
    W = _herm_decode(x0 + Q @ (rng.normal(size=Q.shape[1]) * scale), D)
    ident = _herm_decode(x0, D)
    t = 1.0
    while np.linalg.eigvalsh((1 - t) * ident + t * W).min() < 1e-8:
        t *= 0.7
    W = (1 - t) * ident + t * W
    sq = psd_sqrt(W)
    gs = [rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D)) for _ in range(n_out)]
    ps = [g.conj().T @ g for g in gs]
    S = sum(ps)
    w, V = np.linalg.eigh(S)
    Si = (V * (1.0 / np.sqrt(w))) @ V.conj().T
    elems = [Op(lay, sq @ (Si @ p @ Si) @ sq) for p in ps]
    return TesterSet(tuple(elems), strategy)


def su2_choi_pair(rng):
    model = su2_channel()
    th = rng.normal(size=3)
    th = th / np.linalg.norm(th) * rng.uniform(0.0, np.pi)
    j = model.choi(th)
    return [j, j]


@pytest.fixture(scope="module")
def solved_parallel_k2():
    lay = copies_layout(2, 2, 2)
    rng = np.random.default_rng(7)
    objs = []
    for _ in range(4):
        g = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
        objs.append((g + g.conj().T) / 8)
    t, _ = solve_testers(parallel(2), lay, np.array(objs), tol=1e-9)
    return t


@pytest.fixture(scope="module")
def solved_sequential_k2():
    lay = copies_layout(2, 2, 2)
    rng = np.random.default_rng(8)
    objs = []
    for _ in range(4):
        g = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
        objs.append((g + g.conj().T) / 8)
    t, _ = solve_testers(sequential(2), lay, np.array(objs), tol=1e-9)
    return t


class TestParallel:
    def test_bell_tester_k1(self):
        # tester made of Bell projectors / 2: the probe comes out as the Bell
        # state and the POVM is the Bell basis itself
        lay = copies_layout(2, 2, 1)
        pp = max_entangled("I1", "O1", 2, normalized=True).mat
        paulis = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]),
                  np.array([[1, 0], [0, -1]])]
        elems = []
        for P in paulis:
            U = np.kron(np.eye(2), P)
            elems.append(Op(lay, (U @ pp @ U.conj().T) / 2))
        t = TesterSet(tuple(elems), parallel(1))
        r = realize_parallel(t)
        assert np.abs(r.rho.mat - pp).max() < 1e-12
        for m, e in zip(r.povm, t.elements):
            assert np.abs(m.mat - 2 * e.mat).max() < 1e-12

    def test_state_and_povm_valid(self):
        lay = copies_layout(2, 2, 2)
        t = random_feasible_testers(parallel(2), lay, 3, np.random.default_rng(1))
        r = realize_parallel(t)
        assert abs(r.rho.trace() - 1.0) < 1e-10
        assert np.linalg.eigvalsh(r.rho.mat).min() > -1e-10
        total = sum(m.mat for m in r.povm)
        assert np.abs(total - np.eye(total.shape[0])).max() < 1e-10
        for m in r.povm:
            assert np.linalg.eigvalsh(m.mat).min() > -1e-10

    def test_round_trip_random_feasible(self):
        lay = copies_layout(2, 2, 2)
        rng = np.random.default_rng(2)
        t = random_feasible_testers(parallel(2), lay, 3, rng)
        r = realize_parallel(t)
        for _ in range(10):
            chois = [random_channel_choi(rng), random_channel_choi(rng)]
            assert np.abs(outcome_probabilities(t, chois) - r.probabilities(chois)).max() < 1e-10

    def test_round_trip_solved_su2(self, solved_parallel_k2):
        rng = np.random.default_rng(3)
        r = realize_parallel(solved_parallel_k2)
        worst = 0.0
        for _ in range(100):
            chois = su2_choi_pair(rng)
            diff = np.abs(
                outcome_probabilities(solved_parallel_k2, chois) - r.probabilities(chois)
            ).max()
            worst = max(worst, diff)
        assert worst < 1e-7

    def test_rank_deficient_marginal_completed(self):
        # probe marginal of rank 1: kernel completion keeps the POVM exact
        lay = copies_layout(2, 2, 1)
        ket0 = np.zeros((2, 2))
        ket0[0, 0] = 1.0
        elems = (
            Op(lay, np.kron(ket0, np.diag([1.0, 0.0]))),
            Op(lay, np.kron(ket0, np.diag([0.0, 1.0]))),
        )
        t = TesterSet(elems, parallel(1))
        r = realize_parallel(t)
        total = sum(m.mat for m in r.povm)
        assert np.abs(total - np.eye(4)).max() < 1e-12
        rng = np.random.default_rng(4)
        for _ in range(5):
            chois = [random_channel_choi(rng)]
            assert np.abs(outcome_probabilities(t, chois) - r.probabilities(chois)).max() < 1e-10

    def test_class_mismatch_raises(self):
        lay = copies_layout(2, 2, 2)
        t = random_feasible_testers(sequential(2), lay, 2, np.random.default_rng(5))
        with pytest.raises(ValueError, match="class"):
            realize_parallel(t)

    def test_bad_residual_raises(self):
        lay = copies_layout(2, 2, 1)
        g = np.random.default_rng(6).normal(size=(4, 4))
        t = TesterSet((Op(lay, g @ g.T),), parallel(1))
        with pytest.raises(ValueError, match="constraint"):
            realize_parallel(t)


class TestSequential:
    def test_reconstructed_testers_match(self):
        lay = copies_layout(2, 2, 2)
        t = random_feasible_testers(sequential(2), lay, 3, np.random.default_rng(10))
        r = realize_sequential_k2(t)
        for rec, orig in zip(r.reconstructed_testers(), t.elements):
            assert np.abs(rec.mat - orig.mat).max() < 1e-10

    def test_parts_are_physical(self):
        lay = copies_layout(2, 2, 2)
        t = random_feasible_testers(sequential(2), lay, 3, np.random.default_rng(11))
        r = realize_sequential_k2(t)
        assert abs(r.rho.trace() - 1.0) < 1e-10
        assert np.linalg.eigvalsh(r.rho.mat).min() > -1e-10
        assert np.linalg.eigvalsh(r.channel.mat).min() > -1e-10
        tp = partial_trace(r.channel, ["I2", "G"]).mat
        assert np.abs(tp - np.eye(4)).max() < 1e-8
        total = sum(m.mat for m in r.povm)
        assert np.abs(total - np.eye(total.shape[0])).max() < 1e-10
        for m in r.povm:
            assert np.linalg.eigvalsh(m.mat).min() > -1e-10

    def test_wire_comb_round_trip(self):
        # identity comb: maximally mixed probe, first output wired straight
        # into the second input; genuinely sequential (not parallel feasible)
        # and rank deficient, so the completion branches are exercised
        lay = copies_layout(2, 2, 2)
        w = kron(
            kron(Op(layout(("I1", 2)), np.eye(2) / 2), max_entangled("O1", "I2", 2)),
            identity(layout(("O2", 2))),
        )
        W = permute_factors(w, ["I1", "O1", "I2", "O2"])
        assert class_residual(W, sequential(2)) < 1e-12
        p0 = np.zeros((16, 16))
        p0[:8, :8] = np.eye(8)
        sq = psd_sqrt(W.mat)
        elems = (Op(lay, sq @ p0 @ sq), Op(lay, sq @ (np.eye(16) - p0) @ sq))
        t = TesterSet(elems, sequential(2))
        r = realize_sequential_k2(t)
        rng = np.random.default_rng(12)
        for _ in range(10):
            chois = [random_channel_choi(rng), random_channel_choi(rng)]
            assert np.abs(outcome_probabilities(t, chois) - r.probabilities(chois)).max() < 1e-10

    def test_parallel_feasible_tester_still_exact(self):
        lay = copies_layout(2, 2, 2)
        tp = random_feasible_testers(parallel(2), lay, 3, np.random.default_rng(13))
        t = TesterSet(tp.elements, sequential(2))
        r = realize_sequential_k2(t)
        for rec, orig in zip(r.reconstructed_testers(), t.elements):
            assert np.abs(rec.mat - orig.mat).max() < 1e-10

    def test_round_trip_solved_su2(self, solved_sequential_k2):
        rng = np.random.default_rng(14)
        r = realize_sequential_k2(solved_sequential_k2)
        worst = 0.0
        for _ in range(100):
            chois = su2_choi_pair(rng)
            diff = np.abs(
                outcome_probabilities(solved_sequential_k2, chois) - r.probabilities(chois)
            ).max()
            worst = max(worst, diff)
        assert worst < 1e-7

    def test_k1_rejected(self):
        lay = copies_layout(2, 2, 1)
        t = random_feasible_testers(sequential(1), lay, 2, np.random.default_rng(15))
        with pytest.raises(ValueError, match="k = 2"):
            realize_sequential_k2(t)

    def test_class_mismatch_raises(self):
        lay = copies_layout(2, 2, 2)
        t = random_feasible_testers(general(2), lay, 2, np.random.default_rng(16))
        with pytest.raises(ValueError, match="class"):
            realize_sequential_k2(t)


class TestGeneral:
    def make(self, seed=20, n_out=3):
        lay = copies_layout(2, 2, 2)
        return random_feasible_testers(general(2), lay, n_out, np.random.default_rng(seed))

    def test_blocks_sum_is_feasible_total(self):
        t = self.make()
        r = realize_general(t)
        total = Op(t.layout, sum(b.mat for b in r.blocks))
        assert class_residual(total, general(2)) < 1e-10

    def test_probabilities_exact(self):
        t = self.make(seed=21)
        r = realize_general(t)
        rng = np.random.default_rng(22)
        for _ in range(5):
            chois = [random_channel_choi(rng), random_channel_choi(rng)]
            assert np.abs(outcome_probabilities(t, chois) - r.probabilities(chois)).max() == 0.0

    def test_single_outcome_trivial(self):
        t = self.make(seed=23, n_out=1)
        r = realize_general(t)
        assert r.n_outcomes == 1
        assert np.abs(r.full_matrix() - t.total().mat).max() < 1e-14
        assert r.pointer_povm()[0].shape == (1, 1)

    def test_full_matrix_block_structure(self):
        t = self.make(seed=24, n_out=2)
        r = realize_general(t)
        full = r.full_matrix()
        expect = sum(
            np.kron(b.mat, np.diag(np.eye(2)[i])) for i, b in enumerate(r.blocks)
        )
        assert np.abs(full - expect).max() == 0.0

    def test_pointer_povm_reads_outcomes(self):
        t = self.make(seed=26, n_out=3)
        r = realize_general(t)
        ms = r.pointer_povm()
        assert np.abs(sum(ms) - np.eye(3)).max() == 0.0
        for i, m in enumerate(ms):
            assert m[i, i] == 1.0

    def test_wrong_class_raises(self):
        lay = copies_layout(2, 2, 2)
        t = random_feasible_testers(parallel(2), lay, 2, np.random.default_rng(25))
        with pytest.raises(ValueError, match="general"):
            realize_general(t)


class TestBundle:
    def test_json_round_trip(self, tmp_path):
        lay = copies_layout(2, 2, 2)
        rng = np.random.default_rng(30)
        cases = [
            realize_parallel(random_feasible_testers(parallel(2), lay, 2, rng)),
            realize_sequential_k2(random_feasible_testers(sequential(2), lay, 2, rng)),
            realize_general(random_feasible_testers(general(2), lay, 2, rng)),
        ]
        for i, r in enumerate(cases):
            path = tmp_path / f"bundle_{i}.json"
            save_bundle(r, path)
            data = json.loads(path.read_text())
            assert data["kind"] in ("parallel", "sequential", "general")
            assert data["k"] == 2
            if data["kind"] == "parallel":
                assert np.abs(decode_matrix(data["rho"]) - r.rho.mat).max() == 0.0
                assert len(data["povm"]) == len(r.povm)
            elif data["kind"] == "sequential":
                assert np.abs(decode_matrix(data["channel"]) - r.channel.mat).max() == 0.0
            else:
                assert np.abs(decode_matrix(data["blocks"][0]) - r.blocks[0].mat).max() == 0.0

    def test_unknown_type_rejected(self):
        with pytest.raises(TypeError):
            realization_bundle(object())
