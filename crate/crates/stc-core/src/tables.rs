//! Offline precomputation of the time-parameterized matrices used by the
//! triggering search: E(xi) = e^{A xi}, G(xi) = int_0^xi e^{A s} ds, and the
//! cost kernels H0, H1, H2, all sampled on a uniform grid.
//!
//! The five tables are produced in a single pass by integrating the coupled
//! matrix ODE system
//!
//! ```text
//!   E' = A E          E(0) = I
//!   G' = E            G(0) = 0
//!   H0' = E^T Q E     H0(0) = 0
//!   H1' = E^T Q G B   H1(0) = 0
//!   H2' = (G B)^T Q (G B) + R     H2(0) = 0
//! ```
//!
//! with classical fourth-order Runge-Kutta at an internal step of h/8. The
//! combination e^{A tau} Z(tau) B appearing in the cost kernels equals
//! G(tau) B, so Z is never formed or stored.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::plant::LtiSystem;

/// Uniform time grid; point i sits at exactly i * step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    step: f64,
    count: usize,
}

impl TimeGrid {
    pub fn new(step: f64, count: usize) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidInput(format!("grid step must be positive, got {step}")));
        }
        if count < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 points".into()));
        }
        if count > 10_000_000 {
            return Err(Error::InvalidInput("grid too large".into()));
        }
        Ok(Self { step, count })
    }

    /// Grid covering [0, horizon] with the given step (horizon rounded up
    /// to a whole number of steps).
    pub fn from_horizon(step: f64, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let count = (horizon / step).ceil() as usize + 1;
        Self::new(step, count)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Time at grid index i, derived from the index so repeated addition
    /// cannot drift.
    pub fn point(&self, index: usize) -> f64 {
        index as f64 * self.step
    }

    pub fn horizon(&self) -> f64 {
        self.point(self.count - 1)
    }
}

/// One grid point's matrices, borrowed from the table.
#[derive(Debug, Clone, Copy)]
pub struct TableEntry<'a> {
    pub e: &'a Matrix,
    pub g: &'a Matrix,
    pub h0: &'a Matrix,
    pub h1: &'a Matrix,
    pub h2: &'a Matrix,
}

/// Grid-sampled integral tables for one system. Immutable after
/// construction and safe to share across threads.
#[derive(Debug, Clone)]
pub struct IntegralTable {
    grid: TimeGrid,
    state_dim: usize,
    input_dim: usize,
    e: Vec<Matrix>,
    g: Vec<Matrix>,
    h0: Vec<Matrix>,
    h1: Vec<Matrix>,
    h2: Vec<Matrix>,
}

impl IntegralTable {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn count(&self) -> usize {
        self.grid.count()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Stored matrices at a grid index, by reference.
    pub fn query(&self, index: usize) -> Result<TableEntry<'_>> {
        if index >= self.grid.count() {
            return Err(Error::Range {
                index,
                count: self.grid.count(),
            });
        }
        Ok(TableEntry {
            e: &self.e[index],
            g: &self.g[index],
            h0: &self.h0[index],
            h1: &self.h1[index],
            h2: &self.h2[index],
        })
    }
}

// Derivatives of the coupled tables at one integrator stage; only (E, G)
// feed back into the dynamics.
struct Stage {
    de: Matrix,
    dg: Matrix,
    dh0: Matrix,
    dh1: Matrix,
    dh2: Matrix,
}

fn stage(sys: &LtiSystem, e: &Matrix, g: &Matrix) -> Stage {
    let qe = sys.q() * e;
    let w = g * sys.b();
    let qw = sys.q() * &w;
    Stage {
        de: sys.a() * e,
        dg: e.clone(),
        dh0: e.transpose() * &qe,
        dh1: e.transpose() * &qw,
        dh2: w.transpose() * qw + sys.r(),
    }
}

/// Builds the integral tables for `sys` on `grid` by RK4 integration with
/// eight internal substeps per grid interval.
pub fn build_table(sys: &LtiSystem, grid: &TimeGrid) -> IntegralTable {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let count = grid.count();

    let mut e = Matrix::identity(n, n);
    let mut g = Matrix::zeros(n, n);
    let mut h0 = Matrix::zeros(n, n);
    let mut h1 = Matrix::zeros(n, m);
    let mut h2 = Matrix::zeros(m, m);

    let mut table = IntegralTable {
        grid: grid.clone(),
        state_dim: n,
        input_dim: m,
        e: Vec::with_capacity(count),
        g: Vec::with_capacity(count),
        h0: Vec::with_capacity(count),
        h1: Vec::with_capacity(count),
        h2: Vec::with_capacity(count),
    };
    table.e.push(e.clone());
    table.g.push(g.clone());
    table.h0.push(h0.clone());
    table.h1.push(h1.clone());
    table.h2.push(h2.clone());

    const SUBSTEPS: usize = 8;
    let dt = grid.step() / SUBSTEPS as f64;
    let sixth = dt / 6.0;

    for _ in 1..count {
        for _ in 0..SUBSTEPS {
            let k1 = stage(sys, &e, &g);
            let k2 = stage(sys, &(&e + &k1.de * (dt / 2.0)), &(&g + &k1.dg * (dt / 2.0)));
            let k3 = stage(sys, &(&e + &k2.de * (dt / 2.0)), &(&g + &k2.dg * (dt / 2.0)));
            let k4 = stage(sys, &(&e + &k3.de * dt), &(&g + &k3.dg * dt));
            e += (&k1.de + &k2.de * 2.0 + &k3.de * 2.0 + &k4.de) * sixth;
            g += (&k1.dg + &k2.dg * 2.0 + &k3.dg * 2.0 + &k4.dg) * sixth;
            h0 += (&k1.dh0 + &k2.dh0 * 2.0 + &k3.dh0 * 2.0 + &k4.dh0) * sixth;
            h1 += (&k1.dh1 + &k2.dh1 * 2.0 + &k3.dh1 * 2.0 + &k4.dh1) * sixth;
            h2 += (&k1.dh2 + &k2.dh2 * 2.0 + &k3.dh2 * 2.0 + &k4.dh2) * sixth;
        }
        // The exact kernels are symmetric; pin down roundoff before storing.
        h0 = linalg::symmetrize(&h0);
        h2 = linalg::symmetrize(&h2);
        table.e.push(e.clone());
        table.g.push(g.clone());
        table.h0.push(h0.clone());
        table.h1.push(h1.clone());
        table.h2.push(h2.clone());
    }
    table
}

/// Versioned binary cache for integral tables, keyed by a digest of the
/// system matrices and the grid.
///
/// Layout (all integers and floats little-endian):
///
/// ```text
///   offset  size  field
///   0       4     magic "STCT"
///   4       4     format version (u32) = 1
///   8       32    SHA-256 key of (A, B, Q, R, step, count)
///   40      4     state dimension n (u32)
///   44      4     input dimension m (u32)
///   48      4     grid point count (u32)
///   52      8     grid step (f64)
///   60      -     count records of E, G, H0 (n*n), H1 (n*m), H2 (m*m),
///                 each row-major f64
/// ```
pub mod cache {
    use sha2::{Digest, Sha256};
    use std::path::Path;

    use super::{IntegralTable, TimeGrid};
    use crate::error::{Error, Result};
    use crate::linalg::Matrix;
    use crate::plant::LtiSystem;

    const MAGIC: &[u8; 4] = b"STCT";
    const VERSION: u32 = 1;
    const HEADER_LEN: usize = 60;

    /// Digest identifying the (system, grid) pair a table was built from.
    pub type TableKey = [u8; 32];

    fn push_matrix_row_major(out: &mut Vec<u8>, m: &Matrix) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }

    /// Key digest of the system matrices and grid parameters.
    pub fn table_key(sys: &LtiSystem, grid: &TimeGrid) -> TableKey {
        let mut hasher = Sha256::new();
        hasher.update(b"STCK");
        hasher.update(VERSION.to_le_bytes());
        hasher.update((sys.state_dim() as u64).to_le_bytes());
        hasher.update((sys.input_dim() as u64).to_le_bytes());
        let mut bytes = Vec::new();
        for m in [sys.a(), sys.b(), sys.q(), sys.r()] {
            push_matrix_row_major(&mut bytes, m);
        }
        bytes.extend_from_slice(&grid.step().to_le_bytes());
        bytes.extend_from_slice(&(grid.count() as u64).to_le_bytes());
        hasher.update(&bytes);
        hasher.finalize().into()
    }

    /// Serializes a table (with its key) into the versioned byte format.
    pub fn encode_table(sys: &LtiSystem, table: &IntegralTable) -> Vec<u8> {
        let n = table.state_dim();
        let m = table.input_dim();
        let count = table.count();
        let record = (3 * n * n + n * m + m * m) * 8;
        let mut out = Vec::with_capacity(HEADER_LEN + count * record);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&table_key(sys, table.grid()));
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(m as u32).to_le_bytes());
        out.extend_from_slice(&(count as u32).to_le_bytes());
        out.extend_from_slice(&table.grid().step().to_le_bytes());
        for i in 0..count {
            push_matrix_row_major(&mut out, &table.e[i]);
            push_matrix_row_major(&mut out, &table.g[i]);
            push_matrix_row_major(&mut out, &table.h0[i]);
            push_matrix_row_major(&mut out, &table.h1[i]);
            push_matrix_row_major(&mut out, &table.h2[i]);
        }
        out
    }

    fn read_u32(buf: &[u8], at: usize) -> u32 {
        u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
    }

    fn read_matrix(buf: &[u8], at: &mut usize, rows: usize, cols: usize) -> Result<Matrix> {
        let len = rows * cols * 8;
        let slice = &buf[*at..*at + len];
        *at += len;
        let mut values = Vec::with_capacity(rows * cols);
        for chunk in slice.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Cache("non-finite table entry".into()));
            }
            values.push(v);
        }
        Ok(Matrix::from_row_slice(rows, cols, &values))
    }

    /// Decodes the byte format back into a table, validating structure but
    /// not provenance; the embedded key is returned for the caller to
    /// compare. Never panics on malformed input.
    pub fn decode_table(buf: &[u8]) -> Result<(TableKey, IntegralTable)> {
        if buf.len() < HEADER_LEN {
            return Err(Error::Cache("truncated header".into()));
        }
        if &buf[0..4] != MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let version = read_u32(buf, 4);
        if version != VERSION {
            return Err(Error::Cache(format!("unsupported version {version}")));
        }
        let key: TableKey = buf[8..40].try_into().unwrap();
        let n = read_u32(buf, 40) as usize;
        let m = read_u32(buf, 44) as usize;
        let count = read_u32(buf, 48) as usize;
        let step = f64::from_le_bytes(buf[52..60].try_into().unwrap());
        if n == 0 || m == 0 || n > 4096 || m > 4096 {
            return Err(Error::Cache(format!("unsupported dimensions n={n}, m={m}")));
        }
        let grid = TimeGrid::new(step, count).map_err(|e| Error::Cache(e.to_string()))?;
        let record = (3 * n * n + n * m + m * m) as u64 * 8;
        let expected = HEADER_LEN as u64 + count as u64 * record;
        if buf.len() as u64 != expected {
            return Err(Error::Cache(format!(
                "length mismatch: expected {expected} bytes, got {}",
                buf.len()
            )));
        }

        let mut table = IntegralTable {
            grid,
            state_dim: n,
            input_dim: m,
            e: Vec::with_capacity(count),
            g: Vec::with_capacity(count),
            h0: Vec::with_capacity(count),
            h1: Vec::with_capacity(count),
            h2: Vec::with_capacity(count),
        };
        let mut at = HEADER_LEN;
        for _ in 0..count {
            table.e.push(read_matrix(buf, &mut at, n, n)?);
            table.g.push(read_matrix(buf, &mut at, n, n)?);
            table.h0.push(read_matrix(buf, &mut at, n, n)?);
            table.h1.push(read_matrix(buf, &mut at, n, m)?);
            table.h2.push(read_matrix(buf, &mut at, m, m)?);
        }
        if table.e[0] != Matrix::identity(n, n)
            || table.g[0] != Matrix::zeros(n, n)
            || table.h0[0] != Matrix::zeros(n, n)
            || table.h1[0] != Matrix::zeros(n, m)
            || table.h2[0] != Matrix::zeros(m, m)
        {
            return Err(Error::Cache("grid origin entries are not exact".into()));
        }
        Ok((key, table))
    }

    /// Writes the cache file for a table.
    pub fn save(path: &Path, sys: &LtiSystem, table: &IntegralTable) -> Result<()> {
        std::fs::write(path, encode_table(sys, table))?;
        Ok(())
    }

    /// Loads a cache file and verifies it was built for exactly this
    /// system and grid.
    pub fn load(path: &Path, sys: &LtiSystem, grid: &TimeGrid) -> Result<IntegralTable> {
        let bytes = std::fs::read(path)?;
        let (key, table) = decode_table(&bytes)?;
        if key != table_key(sys, grid) {
            return Err(Error::Cache("cache key does not match system and grid".into()));
        }
        if table.grid() != grid {
            return Err(Error::Cache("cached grid differs from requested grid".into()));
        }
        Ok(table)
    }
}
