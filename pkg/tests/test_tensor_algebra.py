import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degensolve.errors import NotCertified, ShapeMismatch, TensorValidationError
from degensolve.problem import FIXTURE_NAMES, fixture_document, load_fixture
from degensolve.tensor_algebra import (
    Certification,
    QuadraticForm,
    SHDecomposition,
    SHStatus,
    analyze_tensor,
    assemble_from_sh,
    check_sh,
    image_in_sigma_check,
    lh_constant,
    projector,
    random_psd_tensor,
    rank_one_certify,
    sigma_from_generators,
    spectral_split,
    subspace_pair,
    tensor_from_json,
    tensor_to_json,
    validate,
)


def jacobi_eigenvalues(M, sweeps=50):
    """Cyclic Jacobi rotations; independent of LAPACK."""
    M = np.array(M, dtype=float)
    m = M.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum(M**2) - np.sum(np.diag(M) ** 2))
        if off < 1e-14:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                if abs(M[p, q]) < 1e-300:
                    continue
                theta = (M[q, q] - M[p, p]) / (2 * M[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1)) if theta != 0 else 1.0
                c = 1 / np.sqrt(t**2 + 1)
                s = t * c
                J = np.eye(m)
                J[p, p] = J[q, q] = c
                J[p, q], J[q, p] = s, -s
                M = J.T @ M @ J
    return np.sort(np.diag(M))


def sphere_grid_values(A, steps=721):
    """``A(eta (x) a, eta (x) a)`` over a grid of unit ``eta``, ``a`` (N, n <= 2)."""
    def circle(d):
        if d == 1:
            return np.array([[1.0]])
        t = np.linspace(0, np.pi, steps)
        return np.column_stack([np.cos(t), np.sin(t)])

    etas, avecs = circle(A.N), circle(A.n)
    X = np.einsum("ep,aq->eapq", etas, avecs).reshape(len(etas), len(avecs), -1)
    return np.einsum("eax,xy,eay->ea", X, A.matrix, X)


# frozen outputs of the two brute-force oracles above
JACOBI_EX1 = [0.0, 0.0, 1.0, 1.0]
SPHERE_MIN = {"lap": 1.0, "ex1": 0.0, "ex2": 0.0, "sh2": 0.0, "rot2": 0.5}
ROT2_MAX_PROJECTED_RANK_ONE = 0.5


class TestValidate:
    def test_identity_ok(self, t_lap):
        res = validate(t_lap)
        assert res.ok and res.min_eigenvalue == pytest.approx(1.0)

    def test_ex1_ok_with_zero_eigenvalue(self, t_ex1):
        res = validate(t_ex1)
        assert res.ok and abs(res.min_eigenvalue) < 1e-14

    def test_asymmetric_perturbation_reported(self, t_lap):
        E = t_lap.entries.copy()
        E[0, 0, 0, 1] += 1e-3
        res = validate(QuadraticForm.from_array(E))
        assert not res.ok
        assert res.symmetry_defect == pytest.approx(1e-3)
        assert any("symmetry" in v for v in res.violations)

    def test_indefinite_rejected(self):
        res = validate(QuadraticForm.from_matrix(np.diag([1.0, -1.0]), 1, 2))
        assert not res.ok and res.min_eigenvalue == pytest.approx(-1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            QuadraticForm(2, 2, np.zeros((2, 2, 2, 3)))


class TestSpectralSplit:
    def test_ex1_against_jacobi(self, t_ex1):
        assert jacobi_eigenvalues(t_ex1.matrix) == pytest.approx(JACOBI_EX1, abs=1e-12)
        split = spectral_split(t_ex1)
        assert split.null_basis.shape[0] == 2 and split.nu == pytest.approx(1.0)
        P = projector(split.pi_basis, 4)
        # span{e1 (x) e1, e1 (x) e2} are the first two flattened coordinates
        assert P == pytest.approx(np.diag([1.0, 1.0, 0.0, 0.0]), abs=1e-12)

    def test_lap(self, t_lap):
        split = spectral_split(t_lap)
        assert split.null_basis.shape[0] == 0 and split.pi_basis.shape[0] == 2 and split.nu == 1.0

    def test_ex2(self, t_ex2):
        split = spectral_split(t_ex2)
        assert split.null_basis.shape[0] == 1
        assert abs(split.null_basis[0] @ [1.0, 0.0]) == pytest.approx(1.0)
        assert abs(split.pi_basis[0] @ [0.0, 1.0]) == pytest.approx(1.0)
        assert split.nu == pytest.approx(1.0)

    def test_zero_tensor(self):
        split = spectral_split(QuadraticForm(2, 2, np.zeros((2, 2, 2, 2))))
        assert split.nu == 0.0 and split.pi_basis.shape[0] == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_eigenvalues_match_jacobi(self, seed):
        A = random_psd_tensor(2, 3, np.random.default_rng(seed), rank=4)
        split = spectral_split(A)
        assert np.sort(split.eigenvalues) == pytest.approx(jacobi_eigenvalues(A.matrix), abs=1e-10)


class TestRankOne:
    def test_ex2_single_generator(self, t_ex2):
        gens, cert = rank_one_certify(spectral_split(t_ex2).pi_basis, 1, 2)
        assert cert is Certification.CERTIFIED and len(gens) == 1
        eta, a = gens[0]
        assert abs(eta[0]) == pytest.approx(1.0) and np.abs(a) == pytest.approx([0.0, 1.0])

    def test_ex1_generators_and_sigma(self, t_ex1):
        gens, cert = rank_one_certify(spectral_split(t_ex1).pi_basis, 2, 2)
        assert cert is Certification.CERTIFIED and len(gens) == 2
        sigma = sigma_from_generators(gens, cert)
        assert sigma == pytest.approx(np.array([[1.0, 0.0]]))

    def test_lap_sigma_full(self, t_lap):
        assert subspace_pair(t_lap).sigma_basis == pytest.approx(np.array([[1.0]]))

    def test_rot2_unknown(self, t_rot2):
        # brute force: no unit rank-one matrix lies in Pi, every one projects to norm^2 1/2
        split = spectral_split(t_rot2)
        P = projector(split.pi_basis, 4)
        t = np.linspace(0, 2 * np.pi, 181)
        circ = np.column_stack([np.cos(t), np.sin(t)])
        X = np.einsum("ep,aq->eapq", circ, circ).reshape(-1, 4)
        proj = np.einsum("kx,xy,ky->k", X, P, X)
        assert proj.max() == pytest.approx(ROT2_MAX_PROJECTED_RANK_ONE, abs=1e-12)
        gens, cert = rank_one_certify(split.pi_basis, 2, 2)
        assert cert is Certification.UNKNOWN
        with pytest.raises(NotCertified):
            sigma_from_generators(gens, cert)

    def test_empty_range_certified(self):
        gens, cert = rank_one_certify(np.zeros((0, 4)), 2, 2)
        assert gens == [] and cert is Certification.CERTIFIED

    @pytest.mark.parametrize("seed", range(40))
    def test_pencil_discriminant_oracle(self, seed):
        # a 2-dim span{X1, X2} of 2x2 matrices is rank-one spanned iff det(s X1 + t X2)
        # has two distinct real roots
        rng = np.random.default_rng(seed)
        A = random_psd_tensor(2, 2, rng, rank=2)
        basis = spectral_split(A).pi_basis.reshape(2, 2, 2)
        X1, X2 = basis
        c2 = np.linalg.det(X1)
        c0 = np.linalg.det(X2)
        c1 = np.linalg.det(X1 + X2) - c2 - c0
        disc = c1 * c1 - 4 * c2 * c0
        if abs(disc) < 1e-6:
            pytest.skip("near-tangent pencil")
        _, cert = rank_one_certify(basis, 2, 2, seed=seed)
        assert (cert is Certification.CERTIFIED) == (disc > 0)

    def test_generators_lie_in_range(self):
        rng = np.random.default_rng(7)
        A = random_psd_tensor(3, 3, rng, rank=5, rank_one_range=True)
        split = spectral_split(A)
        gens, cert = rank_one_certify(split.pi_basis, 3, 3)
        assert cert is Certification.CERTIFIED
        P = projector(split.pi_basis, 9)
        for eta, a in gens:
            x = np.outer(eta, a).ravel()
            assert np.linalg.norm(x - P @ x) <= 1e-8


class TestLegendreHadamard:
    @pytest.mark.parametrize("name", FIXTURE_NAMES)
    def test_fixture_against_sphere_grid(self, name):
        A = load_fixture(name).tensor
        assert sphere_grid_values(A).min() == pytest.approx(SPHERE_MIN[name], abs=1e-6)
        assert lh_constant(A) == pytest.approx(SPHERE_MIN[name], abs=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_against_sphere_grid(self, seed):
        A = random_psd_tensor(2, 2, np.random.default_rng(seed))
        brute = sphere_grid_values(A).min()
        lh = lh_constant(A)
        assert lh <= brute + 1e-12
        assert lh == pytest.approx(brute, abs=1e-4)

    def test_lh_can_exceed_smallest_positive_eigenvalue(self):
        # B = 2I - r r^T with r = vec(rotation)/sqrt2: eigenvalues {1, 2, 2, 2}, while
        # B(eta (x) a) = 2 - (eta . R a)^2 / 2 >= 3/2 on unit pairs
        r = np.array([0.0, -1.0, 1.0, 0.0]) / np.sqrt(2)
        B = QuadraticForm.from_matrix(2 * np.eye(4) - np.outer(r, r), 2, 2)
        assert spectral_split(B).nu == pytest.approx(1.0)
        assert sphere_grid_values(B).min() == pytest.approx(1.5, abs=1e-6)
        assert lh_constant(B) == pytest.approx(1.5, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 3), n=st.integers(1, 3), seed=st.integers(0, 2**31 - 1))
def test_lh_bounded_below_by_min_eigenvalue(N, n, seed):
    A = random_psd_tensor(N, n, np.random.default_rng(seed))
    lam_min = np.linalg.eigvalsh(A.matrix)[0]
    lh = lh_constant(A, seed=seed)
    assert lh >= lam_min - 1e-10
    assert lh <= np.linalg.eigvalsh(A.matrix)[-1] + 1e-10
    if N == 1 or n == 1:
        assert lh == pytest.approx(lam_min, abs=1e-8)


class TestStructuralHypothesis:
    def test_ex1_decomposition_holds_and_assembles(self, t_ex1):
        B = [np.diag([1.0, 0.0]), np.zeros((2, 2))]
        Am = [np.eye(2), np.zeros((2, 2))]
        assert check_sh(B, Am).holds
        assert assemble_from_sh(SHDecomposition(B, Am)).entries == pytest.approx(t_ex1.entries, abs=0)

    def test_common_line(self):
        v = check_sh([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])], [np.diag([1.0, 0.0]), np.diag([2.0, 0.0])])
        assert v.holds
        assert np.abs(v.common_line) == pytest.approx([1.0, 0.0])

    def test_overlapping_ranges_fail_clause_b(self):
        v = check_sh([np.eye(2), np.diag([0.0, 1.0])], [np.eye(2), np.eye(2)])
        assert not v.holds and "b" in v.failed_clauses

    def test_no_common_line_fails_clause_a(self):
        v = check_sh([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])], [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])
        assert not v.holds and "a" in v.failed_clauses

    def test_wrong_term_count(self):
        with pytest.raises(ShapeMismatch):
            check_sh([np.eye(2)], [np.eye(2)])

    @pytest.mark.parametrize("name", ["ex1", "sh2"])
    def test_holds_implies_certified(self, name):
        d = load_fixture(name).sh
        assert check_sh(d.B_list, d.A_list).holds
        _, cert = rank_one_certify(spectral_split(assemble_from_sh(d)).pi_basis, d.B_list.shape[1],
                                   d.A_list.shape[1])
        assert cert is Certification.CERTIFIED


class TestImageInSigma:
    def test_ex1(self, t_ex1):
        assert image_in_sigma_check(t_ex1, np.array([[1.0, 0.0]])) <= 1e-10

    def test_ex1_wrong_sigma_detected(self, t_ex1):
        assert image_in_sigma_check(t_ex1, np.array([[0.0, 1.0]])) > 0.5

    def test_full_sigma(self, t_lap, t_ex2):
        assert image_in_sigma_check(t_lap, np.array([[1.0]])) == 0.0
        assert image_in_sigma_check(t_ex2, np.array([[1.0]])) == 0.0


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 3), n=st.integers(1, 3), rank=st.integers(1, 9), seed=st.integers(0, 2**31 - 1))
def test_algebraic_identities(N, n, rank, seed):
    rng = np.random.default_rng(seed)
    A = random_psd_tensor(N, n, rng, rank=min(rank, N * n), rank_one_range=True)
    M = A.matrix
    split = spectral_split(A)
    P = projector(split.pi_basis, N * n)
    for lhs in (P @ M @ P, M @ P, P @ M):
        assert np.linalg.norm(lhs - M) <= 1e-10
    Q = rng.standard_normal((200, N * n))
    vals = np.einsum("kx,xy,ky->k", Q, M, Q)
    slack = 1e-12 * max(1.0, np.linalg.norm(M)) * np.sum(Q**2, axis=1)
    assert np.all(vals >= (split.nu - 1e-8) * np.sum((Q @ P) ** 2, axis=1) - slack)
    pair = subspace_pair(A, seed=seed)
    assert pair.is_certified
    assert image_in_sigma_check(A, pair.sigma_basis) <= 1e-8


class TestJson:
    def test_round_trip(self):
        A = random_psd_tensor(2, 3, np.random.default_rng(3))
        doc = json.loads(json.dumps(tensor_to_json(A)))
        assert tensor_from_json(doc).entries == pytest.approx(A.entries, abs=0)

    def test_asymmetric_rejected(self):
        doc = {"N": 1, "n": 2, "entries": [[1, 1, 1, 1, 1.0], [1, 2, 1, 2, 1.0], [1, 1, 1, 2, 1e-3]]}
        with pytest.raises(TensorValidationError):
            tensor_from_json(doc)
        assert tensor_from_json(doc, strict=False).entries[0, 0, 0, 1] == 1e-3

    def test_index_out_of_range(self):
        with pytest.raises(ShapeMismatch):
            tensor_from_json({"N": 1, "n": 2, "entries": [[1, 3, 1, 1, 1.0]]})

    @pytest.mark.parametrize("name", FIXTURE_NAMES)
    def test_fixture_documents_parse(self, name):
        doc = fixture_document(name)
        A = tensor_from_json(doc["tensor"])
        assert validate(A).ok


class TestAnalyze:
    def test_ex1_report(self, t_ex1):
        d = [np.diag([1.0, 0.0]), np.zeros((2, 2))], [np.eye(2), np.zeros((2, 2))]
        rep = analyze_tensor(t_ex1, SHDecomposition(*d))
        assert rep.sh_status is SHStatus.HOLDS
        assert rep.nullspace_dim == 2 and rep.nu == pytest.approx(1.0)
        out = rep.to_dict()
        json.dumps(out)
        assert out["certified"] == "Certified" and out["sigma_basis"] == [[1.0, 0.0]]

    def test_rot2_report(self, t_rot2):
        rep = analyze_tensor(t_rot2)
        assert rep.sh_status is SHStatus.NOT_ATTEMPTED
        assert not rep.pi_sigma.is_certified
        assert rep.to_dict()["sigma_basis"] is None
