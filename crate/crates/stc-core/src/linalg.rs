//! Dense real-matrix kernels: matrix exponential, Lyapunov and continuous
//! Riccati solves, eigenvalue queries, definiteness tests.
//!
//! Everything here is sized for the dense regime (n up to a few tens); the
//! Lyapunov equation is solved by Kronecker vectorization and the Riccati
//! equation by Newton-Kleinman iteration, so no Schur reordering is needed.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigenvalue summary of a square matrix.
#[derive(Debug, Clone)]
pub struct SpectralInfo {
    pub eigenvalues: Vec<Complex<f64>>,
    /// True iff every eigenvalue has strictly negative real part.
    pub is_hurwitz: bool,
}

/// Stabilizing solution of the continuous algebraic Riccati equation.
#[derive(Debug, Clone)]
pub struct CareSolution {
    /// Feedback gain -R^{-1} B^T P (m x n).
    pub gain: Matrix,
    /// Symmetric positive-definite value matrix P (n x n).
    pub value: Matrix,
}

pub(crate) fn ensure_square(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// (M + M^T)/2.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Induced 1-norm (maximum absolute column sum).
pub fn one_norm(m: &Matrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values()[0]
}

/// Eigenvalues and Hurwitz flag of a square matrix.
pub fn spectral(a: &Matrix) -> Result<SpectralInfo> {
    ensure_square(a, "A")?;
    ensure_finite(a, "A")?;
    let eigenvalues: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    let is_hurwitz = !eigenvalues.is_empty() && eigenvalues.iter().all(|l| l.re < 0.0);
    Ok(SpectralInfo {
        eigenvalues,
        is_hurwitz,
    })
}

/// True iff the smallest eigenvalue of the symmetrized matrix exceeds
/// `margin`. Inputs are symmetrized before testing, so mild asymmetry from
/// accumulated roundoff is tolerated.
pub fn is_positive_definite(m: &Matrix, margin: f64) -> bool {
    if m.nrows() != m.ncols() || m.is_empty() {
        return false;
    }
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigenvalues();
    eig.iter().all(|&l| l > margin)
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn min_eig_sym(m: &Matrix) -> f64 {
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of the symmetrized matrix.
pub fn max_eig_sym(m: &Matrix) -> f64 {
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

// Pade numerator coefficients for the diagonal approximants used by the
// scaling-and-squaring method; index i holds b_i.
const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const PADE_9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

// 1-norm thresholds below which the degree-m approximant meets double
// precision (Higham's theta values).
const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

fn pade_low(at: &Matrix, coeffs: &[f64]) -> (Matrix, Matrix) {
    let n = at.nrows();
    let eye = Matrix::identity(n, n);
    // Even powers at^2, at^4, ...
    let mut powers: Vec<Matrix> = vec![eye.clone()];
    let a2 = at * at;
    let half = (coeffs.len() - 1) / 2;
    for _ in 0..half {
        let last = powers.last().unwrap();
        powers.push(last * &a2);
    }
    let mut u_inner = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        if 2 * k + 1 < coeffs.len() {
            u_inner += p * coeffs[2 * k + 1];
        }
        v += p * coeffs[2 * k];
    }
    (at * u_inner, v)
}

fn pade_13(at: &Matrix) -> (Matrix, Matrix) {
    let n = at.nrows();
    let eye = Matrix::identity(n, n);
    let b = &PADE_13;
    let a2 = at * at;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_high = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u_low = &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &eye * b[1];
    let u = at * (u_high + u_low);
    let v_high = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_high + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &eye * b[0];
    (u, v)
}

/// Matrix exponential e^{A t} by scaling and squaring with a diagonal Pade
/// approximant whose degree is picked from the scaled 1-norm.
pub fn expm(a: &Matrix, t: f64) -> Result<Matrix> {
    ensure_square(a, "A")?;
    ensure_finite(a, "A")?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidInput(format!("time must be finite and >= 0, got {t}")));
    }
    let n = a.nrows();
    if t == 0.0 {
        return Ok(Matrix::identity(n, n));
    }
    let at = a * t;
    let norm = one_norm(&at);

    let (u, v) = if norm <= THETA_3 {
        pade_low(&at, &PADE_3)
    } else if norm <= THETA_5 {
        pade_low(&at, &PADE_5)
    } else if norm <= THETA_7 {
        pade_low(&at, &PADE_7)
    } else if norm <= THETA_9 {
        pade_low(&at, &PADE_9)
    } else {
        let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
        let scaled = &at / 2f64.powi(s);
        let (u, v) = pade_13(&scaled);
        let num = &v + &u;
        let den = &v - &u;
        let mut r = den
            .lu()
            .solve(&num)
            .ok_or_else(|| Error::InvalidInput("Pade denominator is singular".into()))?;
        for _ in 0..s {
            r = &r * &r;
        }
        return Ok(r);
    };

    let num = &v + &u;
    let den = &v - &u;
    den.lu()
        .solve(&num)
        .ok_or_else(|| Error::InvalidInput("Pade denominator is singular".into()))
}

/// Unique symmetric solution P of Acl^T P + P Acl + S = 0 by Kronecker
/// vectorization. Requires Acl Hurwitz and S symmetric.
pub fn solve_lyapunov(acl: &Matrix, s: &Matrix) -> Result<Matrix> {
    ensure_square(acl, "Acl")?;
    ensure_square(s, "S")?;
    ensure_finite(acl, "Acl")?;
    ensure_finite(s, "S")?;
    let n = acl.nrows();
    if s.nrows() != n {
        return Err(Error::Dimension(format!(
            "Acl is {n}x{n} but S is {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let asym = max_abs(&(s - s.transpose()));
    if asym > 1e-10 * (1.0 + max_abs(s)) {
        return Err(Error::InvalidInput("S must be symmetric".into()));
    }
    if !spectral(acl)?.is_hurwitz {
        return Err(Error::NoUniqueSolution(
            "closed-loop matrix is not Hurwitz".into(),
        ));
    }

    let eye = Matrix::identity(n, n);
    let at = acl.transpose();
    // vec(Acl^T P) = (I (x) Acl^T) vec(P), vec(P Acl) = (Acl^T (x) I) vec(P).
    let big = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -Vector::from_iterator(n * n, s.iter().copied());
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoUniqueSolution("Kronecker system is singular".into()))?;
    let p = Matrix::from_iterator(n, n, sol.iter().copied());
    Ok(symmetrize(&p))
}

fn care_residual(a: &Matrix, b: &Matrix, q: &Matrix, r_inv_bt: &Matrix, p: &Matrix) -> f64 {
    let atp = a.transpose() * p;
    let pbr = p * b * (r_inv_bt * p);
    let res = &atp + atp.transpose() - &pbr + q;
    let scale = 1.0 + 2.0 * atp.norm() + pbr.norm() + q.norm();
    res.norm() / scale
}

/// Stabilizing gain for an unstable A via the shifted-Lyapunov (Bass)
/// construction: with beta beyond the spectral abscissa, the solution Z of
/// (A + beta I) Z + Z (A + beta I)^T = 2 B B^T yields F = -B^T Z^{-1} with
/// A + B F Hurwitz whenever (A, B) is controllable.
fn bass_stabilizing_gain(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let beta = a.norm() + 0.5;
    let shifted = a + Matrix::identity(n, n) * beta;
    // Rewrite as (-shifted)^T-form Lyapunov so the dense solver applies.
    let z = solve_lyapunov(&(-shifted.transpose()), &(b * b.transpose() * 2.0))?;
    let z_scale = 1.0_f64.max(max_abs(&z));
    for eps_rel in [1e-12, 1e-9, 1e-6, 1e-4] {
        let reg = &z + Matrix::identity(n, n) * (eps_rel * z_scale);
        let Some(inv) = reg.clone().cholesky().map(|c| c.inverse()) else {
            continue;
        };
        let f = -(b.transpose() * inv);
        if spectral(&(a + b * &f))?.is_hurwitz {
            return Ok(f);
        }
    }
    Err(Error::Design(
        "could not stabilize (A, B); pair appears unstabilizable".into(),
    ))
}

/// Stabilizing solution of A^T P + P A - P B R^{-1} B^T P + Q = 0 together
/// with the gain F = -R^{-1} B^T P, by Newton-Kleinman iteration. The
/// initial stabilizing gain comes from the eigenvalue-shift construction
/// above (or F = 0 when A is already Hurwitz).
pub fn solve_care(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<CareSolution> {
    ensure_square(a, "A")?;
    ensure_square(q, "Q")?;
    ensure_square(r, "R")?;
    ensure_finite(a, "A")?;
    ensure_finite(b, "B")?;
    ensure_finite(q, "Q")?;
    ensure_finite(r, "R")?;
    let n = a.nrows();
    let m = b.ncols();
    if b.nrows() != n || q.nrows() != n || r.nrows() != m {
        return Err(Error::Dimension(format!(
            "inconsistent dimensions: A {n}x{n}, B {}x{}, Q {}x{}, R {}x{}",
            b.nrows(),
            b.ncols(),
            q.nrows(),
            q.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    if !is_positive_definite(q, 0.0) {
        return Err(Error::InvalidInput("Q must be positive definite".into()));
    }
    if !is_positive_definite(r, 0.0) {
        return Err(Error::InvalidInput("R must be positive definite".into()));
    }

    let r_inv = symmetrize(r)
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("R is not positive definite".into()))?
        .inverse();
    let r_inv_bt = &r_inv * b.transpose();

    let mut f = if spectral(a)?.is_hurwitz {
        Matrix::zeros(m, n)
    } else {
        bass_stabilizing_gain(a, b)?
    };

    const RES_TOL: f64 = 1e-10;
    const RES_ACCEPT: f64 = 1e-8;
    const MAX_ITERS: usize = 100;

    let mut p = Matrix::zeros(n, n);
    let mut res = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let acl = a + b * &f;
        let cost = symmetrize(&(q + f.transpose() * r * &f));
        p = solve_lyapunov(&acl, &cost)?;
        f = -(&r_inv_bt * &p);
        res = care_residual(a, b, q, &r_inv_bt, &p);
        if res <= RES_TOL {
            break;
        }
    }
    if res > RES_ACCEPT {
        return Err(Error::Design(format!(
            "Riccati iteration stalled at scaled residual {res:.3e}"
        )));
    }
    if !spectral(&(a + b * &f))?.is_hurwitz {
        return Err(Error::Design(
            "Riccati gain does not stabilize the plant".into(),
        ));
    }
    if !is_positive_definite(&p, 0.0) {
        return Err(Error::Design("Riccati solution is not positive definite".into()));
    }
    Ok(CareSolution { gain: f, value: p })
}
