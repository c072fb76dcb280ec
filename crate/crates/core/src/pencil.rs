//! Matrix pencils: kernel bases, left inverses, tractability-index projector
//! chains and finite generalized spectra.

use nalgebra::{DMatrix, Schur, SVD};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::{sparse_nullspace, CsrMatrix};

/// Default relative rank tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Above this column count [`nullspace`] switches from dense SVD to sparse elimination.
pub const DENSE_NULLSPACE_LIMIT: usize = 400;

/// Column basis together with a left inverse, `left_inverse · basis = I`.
#[derive(Clone, Debug)]
pub struct BasisPair<T: Scalar> {
    pub basis: DMatrix<T>,
    pub left_inverse: DMatrix<T>,
}

impl<T: Scalar> BasisPair<T> {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    /// Projector `basis · left_inverse`.
    pub fn projector(&self) -> DMatrix<T> {
        &self.basis * &self.left_inverse
    }

    pub fn to_sparse(&self) -> SparseBasisPair<T> {
        SparseBasisPair {
            basis: CsrMatrix::from_dense(&self.basis, T::zero()),
            left_inverse: CsrMatrix::from_dense(&self.left_inverse, T::zero()),
        }
    }
}

/// Sparse counterpart of [`BasisPair`].
#[derive(Clone, Debug)]
pub struct SparseBasisPair<T: Scalar> {
    pub basis: CsrMatrix<T>,
    pub left_inverse: CsrMatrix<T>,
}

impl<T: Scalar> SparseBasisPair<T> {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Full SVD with `V` square even for wide input; singular values descending.
fn full_svd<T: Scalar>(m: &DMatrix<T>) -> (Vec<T>, DMatrix<T>) {
    let (r, c) = m.shape();
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = SVD::new(padded, false, true);
    let v = svd.v_t.expect("requested V").transpose();
    (svd.singular_values.iter().copied().collect(), v)
}

/// Flips each column so that its largest-magnitude entry is positive.
fn fix_signs<T: Scalar>(m: &mut DMatrix<T>) {
    for mut col in m.column_iter_mut() {
        let mut best = T::zero();
        for v in col.iter() {
            if v.abs() > best.abs() {
                best = *v;
            }
        }
        if best < T::zero() {
            col.neg_mut();
        }
    }
}

/// Numerical rank of `sigma` (descending) at relative tolerance `tol`.
fn rank_of<T: Scalar>(sigma: &[T], tol: T) -> usize {
    let smax = sigma.first().copied().unwrap_or_else(T::zero);
    if smax == T::zero() {
        return 0;
    }
    sigma.iter().filter(|s| **s > tol * smax).count()
}

/// Orthonormal kernel basis of a dense matrix via SVD.
///
/// The rank is the number of singular values above `tol · σ_max`. The left
/// inverse is the transpose.
pub fn nullspace_basis<T: Scalar>(m: &DMatrix<T>, tol: T) -> BasisPair<T> {
    let (_, basis) = svd_split(m, tol);
    BasisPair {
        left_inverse: basis.transpose(),
        basis,
    }
}

/// `(row-space basis, kernel basis)`, both orthonormal with sign convention applied.
fn svd_split<T: Scalar>(m: &DMatrix<T>, tol: T) -> (DMatrix<T>, DMatrix<T>) {
    let n = m.ncols();
    if n == 0 {
        return (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0));
    }
    if m.nrows() == 0 {
        return (DMatrix::zeros(n, 0), DMatrix::identity(n, n));
    }
    let (sigma, v) = full_svd(m);
    let rank = rank_of(&sigma, tol);
    let mut row = v.columns(0, rank).into_owned();
    let mut ker = v.columns(rank, n - rank).into_owned();
    fix_signs(&mut row);
    fix_signs(&mut ker);
    (row, ker)
}

/// Kernel basis of a sparse matrix: dense SVD for small inputs, rank-revealing
/// sparse elimination beyond [`DENSE_NULLSPACE_LIMIT`] columns.
pub fn nullspace<T: Scalar>(m: &CsrMatrix<T>, tol: T) -> SparseBasisPair<T> {
    if m.ncols() <= DENSE_NULLSPACE_LIMIT {
        let b = nullspace_basis(&m.to_dense(), tol);
        SparseBasisPair {
            basis: CsrMatrix::from_dense(&b.basis, T::zero()),
            left_inverse: CsrMatrix::from_dense(&b.left_inverse, T::zero()),
        }
    } else {
        let ns = sparse_nullspace(m, tol);
        SparseBasisPair {
            left_inverse: ns.basis_left_inverse(),
            basis: ns.basis,
        }
    }
}

/// Moore–Penrose left inverse of a full-column-rank matrix.
pub fn left_inverse<T: Scalar>(b: &DMatrix<T>, tol: T) -> Result<DMatrix<T>> {
    let (r, c) = b.shape();
    if c == 0 {
        return Ok(DMatrix::zeros(0, r));
    }
    if r < c {
        return Err(Error::RankDeficient { rank: r, cols: c });
    }
    let svd = SVD::new(b.clone(), true, true);
    let sigma: Vec<T> = svd.singular_values.iter().copied().collect();
    let rank = rank_of(&sigma, tol);
    if rank < c {
        return Err(Error::RankDeficient { rank, cols: c });
    }
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V");
    let mut ut = u.transpose();
    for (i, s) in sigma.iter().enumerate() {
        ut.row_mut(i).scale_mut(T::one() / *s);
    }
    Ok(vt.transpose() * ut)
}

/// Inverse of a square dense matrix, or `None` when numerically singular.
pub(crate) fn dense_inverse<T: Scalar>(m: &DMatrix<T>, tol: T) -> Option<DMatrix<T>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let (sigma, _) = full_svd(m);
    if rank_of(&sigma, tol) < m.ncols() {
        return None;
    }
    m.clone().lu().try_inverse()
}

/// How the complement of `Ker E_j` is chosen when forming `Q_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Complement {
    /// Orthogonal complement of `Ker E_j + Im Q_0 + … + Im Q_{j-1}`.
    Orthogonal,
    /// Orthogonal complement tilted by a seeded random component along `Ker E_j`,
    /// giving oblique projectors. Used to probe independence of the index
    /// from the projector choice.
    Seeded(u64),
}

#[derive(Clone, Copy, Debug)]
pub struct ChainOptions {
    pub max_index: usize,
    pub tol: f64,
    pub complement: Complement,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            max_index: 3,
            tol: DEFAULT_TOL,
            complement: Complement::Orthogonal,
        }
    }
}

/// One level `(E_j, A_j, Q_j, P_j)` of a projector chain.
#[derive(Clone, Debug)]
pub struct ChainStage<T: Scalar> {
    pub e: DMatrix<T>,
    pub a: DMatrix<T>,
    pub q: DMatrix<T>,
    pub p: DMatrix<T>,
    /// Basis of `Im Q_j = Ker E_j` with the left inverse satisfying `Q_j = q q*ᵀ`.
    pub q_basis: BasisPair<T>,
    /// Basis of `Im P_j` with `P_j = p p*ᵀ`.
    pub p_basis: BasisPair<T>,
    pub rank_e: usize,
}

/// Matrix and projector chain of a pencil, terminated at the first nonsingular `E_γ`.
#[derive(Clone, Debug)]
pub struct ProjectorChain<T: Scalar> {
    /// `stages[j]` for `j = 0..=γ`; the last stage has `Q = 0`.
    pub stages: Vec<ChainStage<T>>,
    pub index: usize,
    pub rank_tolerance: T,
}

/// Residuals of the chain identities.
#[derive(Clone, Debug, Default)]
pub struct ChainResiduals {
    pub idempotence: f64,
    pub e_q: f64,
    pub recursion: f64,
    pub e1_p0: f64,
    pub a1_identity: f64,
    pub cross: f64,
}

impl ChainResiduals {
    pub fn max(&self) -> f64 {
        [self.idempotence, self.e_q, self.recursion, self.e1_p0, self.a1_identity, self.cross]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

impl<T: Scalar> ProjectorChain<T> {
    pub fn stage(&self, j: usize) -> &ChainStage<T> {
        &self.stages[j]
    }

    /// `E_1`, present for index ≥ 1.
    pub fn e1(&self) -> Option<&DMatrix<T>> {
        self.stages.get(1).map(|s| &s.e)
    }

    /// Relative residuals of every chain identity (norms are Frobenius,
    /// scaled by `max(1, ‖E‖ + ‖A‖)`).
    pub fn residuals(&self) -> ChainResiduals {
        let s0 = &self.stages[0];
        let scale = (s0.e.norm() + s0.a.norm()).max(T::one());
        let rel = |m: DMatrix<T>| (m.norm() / scale).as_f64();
        let mut r = ChainResiduals::default();
        for (j, st) in self.stages.iter().enumerate() {
            r.idempotence = r.idempotence.max((&st.q * &st.q - &st.q).norm().as_f64());
            r.e_q = r.e_q.max(rel(&st.e * &st.q));
            if let Some(next) = self.stages.get(j + 1) {
                r.recursion = r.recursion.max(rel(&next.e - (&st.e - &st.a * &st.q)));
            }
            for prev in &self.stages[..j] {
                r.cross = r.cross.max((&st.q * &prev.q).norm().as_f64());
            }
        }
        if let Some(s1) = self.stages.get(1) {
            r.e1_p0 = rel(&s1.e * &s0.p - &s0.e);
            r.a1_identity = rel(&s1.a - &s1.e * &s0.q - &s0.a);
        }
        r
    }
}

/// Builds the tractability chain `E_{j+1} = E_j − A_j Q_j`, `A_{j+1} = A_j P_j`.
///
/// `Q_0` is the orthogonal projector onto `Ker E_0` unless a seeded complement
/// is requested; later `Q_j` satisfy `Q_j Q_i = 0` for `i < j`.
pub fn build_projector_chain<T: Scalar>(
    e: &DMatrix<T>,
    a: &DMatrix<T>,
    opts: ChainOptions,
) -> Result<ProjectorChain<T>> {
    let n = e.nrows();
    if e.shape() != (n, n) || a.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "pencil needs square E and A of equal size, got {:?} and {:?}",
            e.shape(),
            a.shape()
        )));
    }
    if opts.max_index < 1 {
        return Err(Error::InvalidArgument("max_index must be at least 1".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("rank tolerance must be positive".into()));
    }
    let tol = T::lit(opts.tol);
    let mut rng = match opts.complement {
        Complement::Seeded(s) => Some(ChaCha8Rng::seed_from_u64(s)),
        Complement::Orthogonal => None,
    };

    let mut stages: Vec<ChainStage<T>> = Vec::new();
    let mut prev_q: Vec<DMatrix<T>> = Vec::new();
    let mut ej = e.clone();
    let mut aj = a.clone();
    for j in 0..=opts.max_index {
        let (_, ker) = svd_split(&ej, tol);
        let k = ker.ncols();
        let rank_e = n - k;
        if k == 0 {
            stages.push(ChainStage {
                q: DMatrix::zeros(n, n),
                p: DMatrix::identity(n, n),
                q_basis: BasisPair {
                    basis: DMatrix::zeros(n, 0),
                    left_inverse: DMatrix::zeros(0, n),
                },
                p_basis: BasisPair {
                    basis: DMatrix::identity(n, n),
                    left_inverse: DMatrix::identity(n, n),
                },
                e: ej,
                a: aj,
                rank_e,
            });
            return Ok(ProjectorChain {
                stages,
                index: j,
                rank_tolerance: tol,
            });
        }
        if j == opts.max_index {
            break;
        }

        // A_j restricted to Ker E_j must be injective, else det(λE − A) ≡ 0
        let aq = &aj * &ker;
        let (sig, _) = full_svd(&aq);
        let scale = aj.norm().max(ej.norm());
        let aq_rank = sig.iter().filter(|s| **s > tol * scale).count();
        if aq_rank < k {
            return Err(Error::SingularPencil(format!(
                "A_{j} maps {} direction(s) of Ker E_{j} to zero",
                k - aq_rank
            )));
        }

        let (q_basis, p_basis) = split_projector(&ker, &prev_q, tol, rng.as_mut(), j)?;
        let q = q_basis.projector();
        let p = DMatrix::identity(n, n) - &q;
        let next_e = &ej - &aj * &q;
        let next_a = &aj * &p;
        prev_q.push(q.clone());
        stages.push(ChainStage {
            e: ej,
            a: aj,
            q,
            p,
            q_basis,
            p_basis,
            rank_e,
        });
        ej = next_e;
        aj = next_a;
    }
    Err(Error::IndexExceeded {
        max_index: opts.max_index,
    })
}

/// Splits `R^n = Ker E_j ⊕ X` with `X ⊇ Im Q_i` for all earlier stages and
/// returns `(q, p)` basis pairs whose left inverses are the matching row
/// blocks of `[q p]⁻¹`.
fn split_projector<T: Scalar>(
    ker: &DMatrix<T>,
    prev_q: &[DMatrix<T>],
    tol: T,
    rng: Option<&mut ChaCha8Rng>,
    stage: usize,
) -> Result<(BasisPair<T>, BasisPair<T>)> {
    let n = ker.nrows();
    let k = ker.ncols();

    // W: basis of Im Q_0 + … + Im Q_{j-1}
    let mut w = DMatrix::zeros(n, 0);
    for q in prev_q {
        let (range, _) = svd_split(&q.transpose(), tol);
        let stacked = hcat(&w, &range);
        let (row, _) = svd_split(&stacked.transpose(), tol);
        w = row;
    }
    let nw = hcat(ker, &w);
    let (_, mut y) = svd_split(&nw.transpose(), tol);
    if let Some(rng) = rng {
        let tilt = DMatrix::from_fn(k, y.ncols(), |_, _| T::lit(rng.gen_range(-1.0..1.0)));
        y += ker * tilt;
    }
    let comp = hcat(&w, &y);
    if k + comp.ncols() != n {
        return Err(Error::SingularPencil(format!(
            "Ker E_{stage} intersects the images of earlier projectors"
        )));
    }
    let t = hcat(ker, &comp);
    let tinv = dense_inverse(&t, tol).ok_or_else(|| {
        Error::SingularPencil(format!("Ker E_{stage} intersects the images of earlier projectors"))
    })?;
    let q_basis = BasisPair {
        basis: ker.clone(),
        left_inverse: tinv.rows(0, k).into_owned(),
    };
    let p_basis = BasisPair {
        basis: comp,
        left_inverse: tinv.rows(k, n - k).into_owned(),
    };
    Ok((q_basis, p_basis))
}

fn cabs<T: Scalar>(z: &Complex<T>) -> T {
    z.re.hypot(z.im)
}

fn hcat<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let mut m = DMatrix::zeros(a.nrows().max(b.nrows()), a.ncols() + b.ncols());
    if a.ncols() > 0 {
        m.view_mut((0, 0), a.shape()).copy_from(a);
    }
    if b.ncols() > 0 {
        m.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    }
    m
}

/// Options for [`finite_spectrum`].
#[derive(Clone, Copy, Debug)]
pub struct SpectrumOptions {
    /// Eigenvalues `μ` of the shift-inverted operator with `|μ| ≤ tol · max|μ|`
    /// are treated as infinite eigenvalues of the pencil.
    pub tol: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { tol: 1e-10 }
    }
}

/// Finite generalized eigenvalues of `λE − A`, sorted by real then imaginary part.
///
/// Uses shift-and-invert: `μ ∈ eig((A − σE)⁻¹E)` maps to `λ = σ + 1/μ`, and
/// infinite eigenvalues appear as `μ ≈ 0`. Several shifts are tried; if
/// `A − σE` is singular for all of them the pencil is reported singular.
/// Scales rows and columns of `(E, A)` by powers of two so that `|E| + |A|`
/// has rows and columns of comparable size. Eigenvalues are unchanged.
fn balance_pencil<T: Scalar>(e: &DMatrix<T>, a: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let n = e.nrows();
    let mut e = e.clone();
    let mut a = a.clone();
    let pow2 = |x: T| -> T {
        let k = x.to_f64().unwrap_or(1.0).log2().round();
        T::lit(2f64.powf(-k))
    };
    for _ in 0..20 {
        let mut changed = false;
        for i in 0..n {
            let m = (0..n).fold(T::zero(), |m, j| m.max(e[(i, j)].abs()).max(a[(i, j)].abs()));
            if m > T::zero() {
                let f = pow2(m);
                if f != T::one() {
                    changed = true;
                    e.row_mut(i).scale_mut(f);
                    a.row_mut(i).scale_mut(f);
                }
            }
        }
        for j in 0..n {
            let m = (0..n).fold(T::zero(), |m, i| m.max(e[(i, j)].abs()).max(a[(i, j)].abs()));
            if m > T::zero() {
                let f = pow2(m);
                if f != T::one() {
                    changed = true;
                    e.column_mut(j).scale_mut(f);
                    a.column_mut(j).scale_mut(f);
                }
            }
        }
        if !changed {
            break;
        }
    }
    (e, a)
}

pub fn finite_spectrum<T: Scalar>(e: &DMatrix<T>, a: &DMatrix<T>, opts: SpectrumOptions) -> Result<Vec<Complex<T>>> {
    let n = e.nrows();
    if e.shape() != (n, n) || a.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "pencil needs square E and A of equal size, got {:?} and {:?}",
            e.shape(),
            a.shape()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let (e, a) = balance_pencil(e, a);
    let (e, a) = (&e, &a);
    let en = e.norm();
    if en == T::zero() {
        return Ok(Vec::new());
    }
    let an = a.norm();
    let base = if an > T::zero() { an / en } else { T::one() };
    let shifts = [0.618_034, -1.324_718, 2.414_214, -0.381_966, 5.192_582];
    let inv_tol = T::lit(1e3) * T::epsilon() * T::lit(n as f64);
    for &s in &shifts {
        let sigma = base * T::lit(s);
        let shifted = a - e * sigma;
        let Some(inv) = dense_inverse(&shifted, inv_tol) else {
            continue;
        };
        let k = inv * e;
        let Some(schur) = Schur::try_new(k, T::epsilon(), 10_000) else {
            continue;
        };
        let mu = schur.complex_eigenvalues();
        let mmax = mu.iter().fold(T::zero(), |m, z| m.max(cabs(z)));
        if mmax == T::zero() {
            return Ok(Vec::new());
        }
        let cut = T::lit(opts.tol) * mmax;
        let mut lam: Vec<Complex<T>> = mu
            .iter()
            .filter(|z| cabs(z) > cut)
            .map(|z| {
                let d = z.re * z.re + z.im * z.im;
                Complex::new(sigma + z.re / d, -z.im / d)
            })
            .collect();
        lam.sort_by(|x, y| {
            x.re.partial_cmp(&y.re)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.im.partial_cmp(&y.im).unwrap_or(std::cmp::Ordering::Equal))
        });
        return Ok(lam);
    }
    Err(Error::SingularPencil("A − σE is singular for every trial shift".into()))
}
