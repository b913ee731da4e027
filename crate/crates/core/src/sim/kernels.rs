//! Low-level buffer kernels shared by the pure-state and density-matrix paths.
//!
//! Qubit 0 is the most significant bit of a basis-state index. A density
//! matrix of `n` qubits is stored row-major as a flat buffer of `4^n`
//! entries, so the row index occupies the high `n` bits of the flat index and
//! the column index the low `n` bits. That lets every single-qubit kernel
//! written for state vectors act on either side of a density matrix by
//! shifting the bit mask.

use num_complex::Complex64 as C64;

pub type Mat2 = [[C64; 2]; 2];

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn qubit_mask(n_qubits: usize, qubit: usize) -> usize {
    1 << (n_qubits - 1 - qubit)
}

pub fn identity() -> Mat2 {
    [[ONE, ZERO], [ZERO, ONE]]
}

pub fn pauli_x() -> Mat2 {
    [[ZERO, ONE], [ONE, ZERO]]
}

pub fn pauli_y() -> Mat2 {
    [[ZERO, -I], [I, ZERO]]
}

pub fn pauli_z() -> Mat2 {
    [[ONE, ZERO], [ZERO, -ONE]]
}

pub fn rx(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [[C64::new(c, 0.0), C64::new(0.0, -s)], [C64::new(0.0, -s), C64::new(c, 0.0)]]
}

pub fn ry(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [[C64::new(c, 0.0), C64::new(-s, 0.0)], [C64::new(s, 0.0), C64::new(c, 0.0)]]
}

pub fn rz(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [[C64::new(c, -s), ZERO], [ZERO, C64::new(c, s)]]
}

pub fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

pub fn dagger(a: &Mat2) -> Mat2 {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

pub fn conj(a: &Mat2) -> Mat2 {
    [
        [a[0][0].conj(), a[0][1].conj()],
        [a[1][0].conj(), a[1][1].conj()],
    ]
}

pub fn scale(a: &Mat2, k: f64) -> Mat2 {
    [[a[0][0] * k, a[0][1] * k], [a[1][0] * k, a[1][1] * k]]
}

/// Applies `m` to the bit selected by `mask` of every index in `buf`.
pub fn apply_1q(buf: &mut [C64], mask: usize, m: &Mat2) {
    let len = buf.len();
    let [[m00, m01], [m10, m11]] = *m;
    let mut base = 0;
    while base < len {
        for i in base..base + mask {
            let a = buf[i];
            let b = buf[i + mask];
            buf[i] = m00 * a + m01 * b;
            buf[i + mask] = m10 * a + m11 * b;
        }
        base += 2 * mask;
    }
}

/// Diagonal single-qubit gate `diag(d0, d1)`.
pub fn apply_diag(buf: &mut [C64], mask: usize, d0: C64, d1: C64) {
    for (i, amp) in buf.iter_mut().enumerate() {
        *amp *= if i & mask == 0 { d0 } else { d1 };
    }
}

pub fn apply_cnot(buf: &mut [C64], control_mask: usize, target_mask: usize) {
    for i in 0..buf.len() {
        if i & control_mask != 0 && i & target_mask == 0 {
            buf.swap(i, i | target_mask);
        }
    }
}

/// `rho -> U rho U^dagger` on one qubit.
pub fn apply_1q_density(rho: &mut [C64], n_qubits: usize, mask: usize, m: &Mat2) {
    apply_1q(rho, mask << n_qubits, m);
    apply_1q(rho, mask, &conj(m));
}

pub fn apply_cnot_density(rho: &mut [C64], n_qubits: usize, cmask: usize, tmask: usize) {
    apply_cnot(rho, cmask << n_qubits, tmask << n_qubits);
    apply_cnot(rho, cmask, tmask);
}

/// Closed form of the single-qubit depolarizing channel
/// `(1-p) rho + p/3 (X rho X + Y rho Y + Z rho Z)`: on each 2x2 block of the
/// target qubit the diagonal relaxes toward its mean and the coherences
/// shrink by `1 - 4p/3`. The map is self-adjoint, so the same kernel
/// propagates observables backwards.
pub fn depolarize_density(rho: &mut [C64], n_qubits: usize, mask: usize, p: f64) {
    if p == 0.0 {
        return;
    }
    let rmask = mask << n_qubits;
    let both = rmask | mask;
    let keep = 1.0 - 2.0 * p / 3.0;
    let swap = 2.0 * p / 3.0;
    let shrink = 1.0 - 4.0 * p / 3.0;
    for idx in 0..rho.len() {
        if idx & both != 0 {
            continue;
        }
        let a = rho[idx];
        let d = rho[idx | both];
        rho[idx] = a * keep + d * swap;
        rho[idx | both] = d * keep + a * swap;
        rho[idx | mask] *= shrink;
        rho[idx | rmask] *= shrink;
    }
}

/// `out[perm[i]] = buf[i]`.
pub fn permute(buf: &[C64], perm: &[usize]) -> Vec<C64> {
    let mut out = vec![ZERO; buf.len()];
    for (i, &p) in perm.iter().enumerate() {
        out[p] = buf[i];
    }
    out
}

/// `out[perm[i], perm[j]] = rho[i, j]`.
pub fn permute_density(rho: &[C64], n_qubits: usize, perm: &[usize]) -> Vec<C64> {
    let dim = 1usize << n_qubits;
    let mut out = vec![ZERO; rho.len()];
    for i in 0..dim {
        let row = perm[i] << n_qubits;
        let src = i << n_qubits;
        for j in 0..dim {
            out[row | perm[j]] = rho[src | j];
        }
    }
    out
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `sum_ab A_ab G_ab`, the contraction used to turn a local cross matrix into
/// the matrix element of a single-qubit operator.
#[inline]
pub fn contract(a: &Mat2, g: &Mat2) -> C64 {
    a[0][0] * g[0][0] + a[0][1] * g[0][1] + a[1][0] * g[1][0] + a[1][1] * g[1][1]
}

/// `G_ab = sum_rest conj(lam[rest, a]) psi[rest, b]`, so that
/// `<lam| A_q |psi> = contract(A, G)` for any operator `A` on the masked qubit.
pub fn cross_matrix(lam: &[C64], psi: &[C64], mask: usize) -> Mat2 {
    let mut g = [[ZERO; 2]; 2];
    let len = psi.len();
    let mut base = 0;
    while base < len {
        for i in base..base + mask {
            let l0 = lam[i].conj();
            let l1 = lam[i + mask].conj();
            let p0 = psi[i];
            let p1 = psi[i + mask];
            g[0][0] += l0 * p0;
            g[0][1] += l0 * p1;
            g[1][0] += l1 * p0;
            g[1][1] += l1 * p1;
        }
        base += 2 * mask;
    }
    g
}

/// Density-matrix analogue of [`cross_matrix`]: `Tr(M A_q rho) = contract(A, G)`
/// with `A` acting on the row index of `rho`. `m` must be Hermitian.
pub fn cross_matrix_density(m: &[C64], rho: &[C64], n_qubits: usize, mask: usize) -> Mat2 {
    // Tr(M A rho) = sum_{i,j} M[j,i] (A rho)[i,j], and M[j,i] = conj(M[i,j]).
    let dim = 1usize << n_qubits;
    let mut g = [[ZERO; 2]; 2];
    for i in 0..dim {
        if i & mask != 0 {
            continue;
        }
        let r0 = i << n_qubits;
        let r1 = (i | mask) << n_qubits;
        let (m0, m1) = (&m[r0..r0 + dim], &m[r1..r1 + dim]);
        let (p0, p1) = (&rho[r0..r0 + dim], &rho[r1..r1 + dim]);
        for j in 0..dim {
            let a = m0[j].conj();
            let b = m1[j].conj();
            g[0][0] += a * p0[j];
            g[0][1] += a * p1[j];
            g[1][0] += b * p0[j];
            g[1][1] += b * p1[j];
        }
    }
    g
}
