//! Plant models: the LTI system container with its quadratic weights, the
//! spatially distributed random network generator, the benchmark gain with
//! its Lyapunov certificate, and exact closed-loop propagation under
//! sample-and-hold control.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::tables::IntegralTable;

/// Continuous-time plant dx/dt = A x + B u with running cost weights Q, R.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Matrix,
    b: Matrix,
    q: Matrix,
    r: Matrix,
}

impl LtiSystem {
    /// Validates dimensions, finiteness, and positive-definiteness of the
    /// weights. Stabilizability of (A, B) is certified later by a
    /// successful [`build_benchmark`] call.
    pub fn new(a: Matrix, b: Matrix, q: Matrix, r: Matrix) -> Result<Self> {
        linalg::ensure_square(&a, "A")?;
        linalg::ensure_square(&q, "Q")?;
        linalg::ensure_square(&r, "R")?;
        let n = a.nrows();
        let m = b.ncols();
        if n == 0 || m == 0 {
            return Err(Error::Dimension("system dimensions must be nonzero".into()));
        }
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
        for (mat, name) in [(&a, "A"), (&b, "B"), (&q, "Q"), (&r, "R")] {
            linalg::ensure_finite(mat, name)?;
        }
        for (mat, name) in [(&q, "Q"), (&r, "R")] {
            let asym = linalg::max_abs(&(mat - mat.transpose()));
            if asym > 1e-10 * (1.0 + linalg::max_abs(mat)) {
                return Err(Error::InvalidInput(format!("{name} must be symmetric")));
            }
            if !linalg::is_positive_definite(mat, 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive definite")));
            }
        }
        Ok(Self { a, b, q, r })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    /// State dimension n.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension m.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Parses the JSON document `{n, m, a, b, q, r}` with row-major matrix
    /// arrays, re-running all construction checks.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: SystemDoc = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("system JSON: {e}")))?;
        doc.try_into()
    }

    /// Serializes to the `{n, m, a, b, q, r}` JSON document.
    pub fn to_json_string(&self) -> String {
        let doc = SystemDoc::from(self);
        serde_json::to_string_pretty(&doc).expect("system serialization cannot fail")
    }
}

/// Wire format for system import/export: dimensions plus row-major entry
/// arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SystemDoc {
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
}

impl TryFrom<SystemDoc> for LtiSystem {
    type Error = Error;

    fn try_from(doc: SystemDoc) -> Result<Self> {
        let SystemDoc { n, m, a, b, q, r } = doc;
        if n == 0 || m == 0 || n > 4096 || m > 4096 {
            return Err(Error::InvalidInput(format!("unsupported dimensions n={n}, m={m}")));
        }
        let expect = |len: usize, rows: usize, cols: usize, name: &str| -> Result<()> {
            if len != rows * cols {
                return Err(Error::InvalidInput(format!(
                    "{name} must have {}*{} entries, got {len}",
                    rows, cols
                )));
            }
            Ok(())
        };
        expect(a.len(), n, n, "a")?;
        expect(b.len(), n, m, "b")?;
        expect(q.len(), n, n, "q")?;
        expect(r.len(), m, m, "r")?;
        LtiSystem::new(
            DMatrix::from_row_slice(n, n, &a),
            DMatrix::from_row_slice(n, m, &b),
            DMatrix::from_row_slice(n, n, &q),
            DMatrix::from_row_slice(m, m, &r),
        )
    }
}

impl From<&LtiSystem> for SystemDoc {
    fn from(sys: &LtiSystem) -> Self {
        let row_major = |m: &Matrix| m.transpose().as_slice().to_vec();
        SystemDoc {
            n: sys.state_dim(),
            m: sys.input_dim(),
            a: row_major(&sys.a),
            b: row_major(&sys.b),
            q: row_major(&sys.q),
            r: row_major(&sys.r),
        }
    }
}

/// Pre-designed stabilizing gain and the value matrix certifying its
/// infinite-horizon cost.
#[derive(Debug, Clone)]
pub struct Benchmark {
    gain: Matrix,
    value: Matrix,
}

impl Benchmark {
    /// Wraps a gain/value pair, verifying that A + B F is Hurwitz and that
    /// the value matrix solves the closed-loop Lyapunov equation.
    pub fn new(sys: &LtiSystem, gain: Matrix, value: Matrix) -> Result<Self> {
        let acl = sys.a() + sys.b() * &gain;
        if !linalg::spectral(&acl)?.is_hurwitz {
            return Err(Error::Design("benchmark closed loop is not Hurwitz".into()));
        }
        let cost = sys.q() + gain.transpose() * sys.r() * &gain;
        let residual = acl.transpose() * &value + &value * &acl + &cost;
        let scale = linalg::spectral_norm(&acl) * linalg::spectral_norm(&value)
            + linalg::spectral_norm(&cost);
        if linalg::spectral_norm(&residual) > 1e-8 * (1.0 + scale) {
            return Err(Error::Design(
                "value matrix does not certify the benchmark gain".into(),
            ));
        }
        if !linalg::is_positive_definite(&value, 0.0) {
            return Err(Error::Design("value matrix must be positive definite".into()));
        }
        Ok(Self { gain, value })
    }

    /// Benchmark feedback gain (m x n).
    pub fn gain(&self) -> &Matrix {
        &self.gain
    }

    /// Value matrix (n x n, symmetric positive definite).
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    /// Lyapunov function value V(x) = x^T P x, which is also the
    /// infinite-horizon benchmark cost from state x.
    pub fn lyapunov(&self, x: &Vector) -> f64 {
        (x.transpose() * &self.value * x)[(0, 0)]
    }
}

/// Benchmark design: LQR gain from the Riccati equation, value matrix from
/// the closed-loop Lyapunov equation.
pub fn build_benchmark(sys: &LtiSystem) -> Result<Benchmark> {
    let care = linalg::solve_care(sys.a(), sys.b(), sys.q(), sys.r())?;
    let acl = sys.a() + sys.b() * &care.gain;
    let cost = linalg::symmetrize(&(sys.q() + care.gain.transpose() * sys.r() * &care.gain));
    let value = linalg::solve_lyapunov(&acl, &cost)?;
    Benchmark::new(sys, care.gain, value)
}

/// Node dynamics class in the distributed network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    /// Unstable local block [[1, 1], [1, 2]].
    Square,
    /// Stable local block [[-2, 1], [1, -3]].
    Circle,
}

/// Parameters of the spatially distributed random network.
///
/// Serialized form uses the short names `n`, `side`, `beta`, `seed`;
/// positions and node kinds may be pinned explicitly (otherwise both are
/// drawn from the seeded generator).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Number of subsystems N; the assembled plant has 2N states, N inputs.
    #[serde(rename = "n")]
    pub subsystem_count: usize,
    /// Side length of the square placement region.
    #[serde(rename = "side")]
    pub region_side: f64,
    /// Coupling decay rate (1/distance).
    #[serde(rename = "beta")]
    pub decay_rate: f64,
    pub seed: u64,
    /// Scale of the state weight Q = qScale * I.
    #[serde(rename = "qScale", default = "default_q_scale")]
    pub q_scale: f64,
    /// Scale of the input weight R = rScale * I.
    #[serde(rename = "rScale", default = "default_r_scale")]
    pub r_scale: f64,
    /// Explicit node positions; drawn uniformly when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    /// Explicit node kinds; fair coin per node when absent.
    #[serde(rename = "nodeTypes", default, skip_serializing_if = "Option::is_none")]
    pub node_types: Option<Vec<NodeKind>>,
}

fn default_q_scale() -> f64 {
    1.0
}

fn default_r_scale() -> f64 {
    2.0
}

impl NetworkSpec {
    pub fn new(subsystem_count: usize, region_side: f64, decay_rate: f64, seed: u64) -> Self {
        Self {
            subsystem_count,
            region_side,
            decay_rate,
            seed,
            q_scale: default_q_scale(),
            r_scale: default_r_scale(),
            positions: None,
            node_types: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.subsystem_count == 0 {
            return Err(Error::InvalidInput("subsystem count must be >= 1".into()));
        }
        if self.subsystem_count > 2048 {
            return Err(Error::InvalidInput("subsystem count too large".into()));
        }
        if !(self.region_side.is_finite() && self.region_side > 0.0) {
            return Err(Error::InvalidInput("region side must be positive".into()));
        }
        if !(self.decay_rate.is_finite() && self.decay_rate > 0.0) {
            return Err(Error::InvalidInput("decay rate must be positive".into()));
        }
        if !(self.q_scale.is_finite() && self.q_scale > 0.0)
            || !(self.r_scale.is_finite() && self.r_scale > 0.0)
        {
            return Err(Error::InvalidInput("weight scales must be positive".into()));
        }
        if let Some(pos) = &self.positions {
            if pos.len() != self.subsystem_count {
                return Err(Error::InvalidInput("positions length must equal n".into()));
            }
            for p in pos {
                if !p.iter().all(|c| c.is_finite() && *c >= 0.0 && *c <= self.region_side) {
                    return Err(Error::InvalidInput(
                        "positions must lie in [0, side]^2".into(),
                    ));
                }
            }
        }
        if let Some(kinds) = &self.node_types {
            if kinds.len() != self.subsystem_count {
                return Err(Error::InvalidInput("nodeTypes length must equal n".into()));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("network JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A generated network: the assembled plant plus the realized layout.
#[derive(Debug, Clone)]
pub struct GeneratedNetwork {
    pub system: LtiSystem,
    pub positions: Vec<[f64; 2]>,
    pub kinds: Vec<NodeKind>,
}

/// Assembles the 2N-state, N-input plant: local 2x2 blocks per node kind,
/// identity couplings decaying as e^{-beta dis(i,j)}, input blocks [0; 1],
/// Q = qScale I, R = rScale I. Deterministic for a fixed seed.
pub fn generate_network(spec: &NetworkSpec) -> Result<GeneratedNetwork> {
    spec.validate()?;
    let n_nodes = spec.subsystem_count;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let positions: Vec<[f64; 2]> = match &spec.positions {
        Some(p) => p.clone(),
        None => (0..n_nodes)
            .map(|_| {
                let x = rng.random_range(0.0..=spec.region_side);
                let y = rng.random_range(0.0..=spec.region_side);
                [x, y]
            })
            .collect(),
    };
    let kinds: Vec<NodeKind> = match &spec.node_types {
        Some(k) => k.clone(),
        None => (0..n_nodes)
            .map(|_| {
                if rng.random_range(0..2u32) == 0 {
                    NodeKind::Square
                } else {
                    NodeKind::Circle
                }
            })
            .collect(),
    };

    let n = 2 * n_nodes;
    let mut a = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, n_nodes);
    for i in 0..n_nodes {
        let local: [f64; 4] = match kinds[i] {
            NodeKind::Square => [1.0, 1.0, 1.0, 2.0],
            NodeKind::Circle => [-2.0, 1.0, 1.0, -3.0],
        };
        a[(2 * i, 2 * i)] = local[0];
        a[(2 * i, 2 * i + 1)] = local[1];
        a[(2 * i + 1, 2 * i)] = local[2];
        a[(2 * i + 1, 2 * i + 1)] = local[3];
        b[(2 * i + 1, i)] = 1.0;
        for j in 0..n_nodes {
            if i == j {
                continue;
            }
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            let coupling = (-spec.decay_rate * (dx * dx + dy * dy).sqrt()).exp();
            a[(2 * i, 2 * j)] = coupling;
            a[(2 * i + 1, 2 * j + 1)] = coupling;
        }
    }
    let q = Matrix::identity(n, n) * spec.q_scale;
    let r = Matrix::identity(n_nodes, n_nodes) * spec.r_scale;
    Ok(GeneratedNetwork {
        system: LtiSystem::new(a, b, q, r)?,
        positions,
        kinds,
    })
}

/// Exact closed-loop state at offset `index * h` into a hold interval:
/// (E + G B F) x, all factors read from the table.
pub fn propagate(
    sys: &LtiSystem,
    table: &IntegralTable,
    f: &Matrix,
    x: &Vector,
    index: usize,
) -> Result<Vector> {
    check_gain_dims(sys, f, x)?;
    let entry = table.query(index)?;
    let u = f * x;
    Ok(entry.e * x + entry.g * (sys.b() * u))
}

/// Running cost accumulated over the first `index * h` of a hold interval
/// starting at state `x` with gain `f`, via the quadratic form in the
/// table's integral kernels.
pub fn interval_cost(table: &IntegralTable, f: &Matrix, x: &Vector, index: usize) -> Result<f64> {
    let entry = table.query(index)?;
    if f.nrows() != entry.h2.nrows() || f.ncols() != x.len() || entry.h0.nrows() != x.len() {
        return Err(Error::Dimension(format!(
            "gain {}x{} incompatible with state of length {}",
            f.nrows(),
            f.ncols(),
            x.len()
        )));
    }
    let u = f * x;
    let state_term = (x.transpose() * entry.h0 * x)[(0, 0)];
    let cross_term = 2.0 * (u.transpose() * (entry.h1.transpose() * x))[(0, 0)];
    let input_term = (u.transpose() * entry.h2 * &u)[(0, 0)];
    Ok((state_term + cross_term + input_term).max(0.0))
}

fn check_gain_dims(sys: &LtiSystem, f: &Matrix, x: &Vector) -> Result<()> {
    if f.nrows() != sys.input_dim() || f.ncols() != sys.state_dim() || x.len() != sys.state_dim() {
        return Err(Error::Dimension(format!(
            "gain {}x{} / state {} incompatible with system ({} states, {} inputs)",
            f.nrows(),
            f.ncols(),
            x.len(),
            sys.state_dim(),
            sys.input_dim()
        )));
    }
    Ok(())
}

/// Closed-loop eigenvalues under a static gain; convenience for tests and
/// diagnostics.
pub fn closed_loop_eigenvalues(sys: &LtiSystem, f: &Matrix) -> Result<Vec<Complex<f64>>> {
    Ok(linalg::spectral(&(sys.a() + sys.b() * f))?.eigenvalues)
}
