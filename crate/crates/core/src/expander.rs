//! Expander masks for sparsifying linear layers at initialisation.
//!
//! A mask connects an input unit set (rows) with an output unit set
//! (columns). Every unit of the smaller set keeps exactly `d` distinct
//! partners drawn uniformly from the larger set, so no unit of the smaller
//! side is ever disconnected and the layer cannot collapse. When both sides
//! have the same size the rows are treated as the smaller side.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::unit_stream;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("density must lie in (0, 1], got {0}")]
    Density(f64),
    #[error("layer sides must be nonempty, got {rows}x{cols}")]
    EmptySide { rows: usize, cols: usize },
    #[error("mask text line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Which side of the bipartite pattern the per-unit lists belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmallerSide {
    Rows,
    Cols,
}

/// Frozen bipartite connection pattern between `rows` input units and
/// `cols` output units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpanderMask {
    rows: usize,
    cols: usize,
    degree: usize,
    seed: u64,
    /// Sorted partner indices (into the larger side) for each smaller-side unit.
    partners: Vec<Vec<usize>>,
}

/// `d = max(1, round(density · max(rows, cols)))`.
pub fn degree_for_density(rows: usize, cols: usize, density: f64) -> Result<usize, MaskError> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(MaskError::Density(density));
    }
    let larger = rows.max(cols);
    Ok(((density * larger as f64).round() as usize).clamp(1, larger))
}

impl ExpanderMask {
    /// Samples `d` partners per smaller-side unit with a partial
    /// Fisher–Yates shuffle of the larger side's index range. Unit `u` draws
    /// from its own ChaCha8 stream, so the result depends only on
    /// `(rows, cols, density, seed)`.
    pub fn sample(rows: usize, cols: usize, density: f64, seed: u64) -> Result<Self, MaskError> {
        if rows == 0 || cols == 0 {
            return Err(MaskError::EmptySide { rows, cols });
        }
        let degree = degree_for_density(rows, cols, density)?;
        let (small, large) = if rows <= cols { (rows, cols) } else { (cols, rows) };
        let partners = (0..small)
            .map(|unit| {
                let mut rng = unit_stream(seed, unit as u64);
                let mut pool: Vec<usize> = (0..large).collect();
                for k in 0..degree {
                    let j = rand::Rng::random_range(&mut rng, k..large);
                    pool.swap(k, j);
                }
                let mut chosen = pool[..degree].to_vec();
                chosen.sort_unstable();
                chosen
            })
            .collect();
        Ok(Self { rows, cols, degree, seed, partners })
    }

    /// Every connection present.
    pub fn full(rows: usize, cols: usize, seed: u64) -> Result<Self, MaskError> {
        Self::sample(rows, cols, 1.0, seed)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Connections per smaller-side unit.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn smaller_side(&self) -> SmallerSide {
        if self.rows <= self.cols {
            SmallerSide::Rows
        } else {
            SmallerSide::Cols
        }
    }

    pub fn partners(&self) -> &[Vec<usize>] {
        &self.partners
    }

    pub fn ones(&self) -> usize {
        self.partners.iter().map(Vec::len).sum()
    }

    pub fn is_full(&self) -> bool {
        self.degree == self.rows.max(self.cols)
    }

    /// `(row, col)` pairs of the pattern.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let side = self.smaller_side();
        self.partners.iter().enumerate().flat_map(move |(u, ps)| {
            ps.iter().map(move |&p| match side {
                SmallerSide::Rows => (u, p),
                SmallerSide::Cols => (p, u),
            })
        })
    }

    /// Binary `rows × cols` matrix.
    pub fn to_dense<T: Scalar>(&self) -> Array2<T> {
        let mut m = Array2::zeros((self.rows, self.cols));
        for (r, c) in self.entries() {
            m[[r, c]] = T::one();
        }
        m
    }

    /// Density `d / max(rows, cols)`.
    pub fn density(&self) -> f64 {
        self.degree as f64 / self.rows.max(self.cols) as f64
    }

    /// FLOPs of multiplying an `n`-row batch through the masked layer:
    /// `2·n·d·min(rows, cols)`.
    pub fn flops(&self, n: usize) -> u64 {
        2 * n as u64 * self.degree as u64 * self.rows.min(self.cols) as u64
    }

    /// In-degree of every row unit and every column unit.
    pub fn verify(&self) -> MaskDiagnostics {
        let mut row_degrees = vec![0usize; self.rows];
        let mut col_degrees = vec![0usize; self.cols];
        for (r, c) in self.entries() {
            row_degrees[r] += 1;
            col_degrees[c] += 1;
        }
        let larger = match self.smaller_side() {
            SmallerSide::Rows => &col_degrees,
            SmallerSide::Cols => &row_degrees,
        };
        let isolated_larger = larger.iter().filter(|&&d| d == 0).count();
        let collapsed = self.ones() == 0;
        MaskDiagnostics { row_degrees, col_degrees, isolated_larger, collapsed }
    }

    /// Writes the text form: header `rows cols d seed`, then one line of
    /// sorted partner indices per smaller-side unit.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "{self}")
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, MaskError> {
        let mut text = String::new();
        for line in r.lines() {
            let line = line.map_err(|e| MaskError::Parse { line: 0, msg: e.to_string() })?;
            text.push_str(&line);
            text.push('\n');
        }
        text.parse()
    }
}

impl fmt::Display for ExpanderMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {} {} {}", self.rows, self.cols, self.degree, self.seed)?;
        for ps in &self.partners {
            let line: Vec<String> = ps.iter().map(usize::to_string).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for ExpanderMask {
    type Err = MaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_err = |line: usize, msg: &str| MaskError::Parse { line, msg: msg.to_string() };
        let mut lines = s.lines();
        let header: Vec<u64> = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header"))?
            .split_whitespace()
            .map(|t| t.parse::<u64>().map_err(|_| parse_err(1, "header fields must be integers")))
            .collect::<Result<_, _>>()?;
        let [rows, cols, degree, seed] = header[..] else {
            return Err(parse_err(1, "header must be `rows cols d seed`"));
        };
        let (rows, cols, degree) = (rows as usize, cols as usize, degree as usize);
        if rows == 0 || cols == 0 || degree == 0 || degree > rows.max(cols) {
            return Err(parse_err(1, "invalid shape or degree"));
        }
        let (small, large) = (rows.min(cols), rows.max(cols));
        let mut partners = Vec::with_capacity(small);
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let ps: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| parse_err(lineno, "partner must be an integer")))
                .collect::<Result<_, _>>()?;
            if ps.len() != degree {
                return Err(parse_err(lineno, "partner count differs from d"));
            }
            if ps.windows(2).any(|w| w[0] >= w[1]) || ps.iter().any(|&p| p >= large) {
                return Err(parse_err(lineno, "partners must be sorted, distinct and in range"));
            }
            partners.push(ps);
        }
        if partners.len() != small {
            return Err(parse_err(small + 1, "expected one line per smaller-side unit"));
        }
        Ok(Self { rows, cols, degree, seed, partners })
    }
}

/// Connectivity report for a mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskDiagnostics {
    pub row_degrees: Vec<usize>,
    pub col_degrees: Vec<usize>,
    /// Larger-side units with no connection at all.
    pub isolated_larger: usize,
    /// True iff the mask has no connection (must never happen).
    pub collapsed: bool,
}

/// Convenience wrappers matching the operation names used elsewhere.
pub fn sample_mask(n_in: usize, n_out: usize, density: f64, seed: u64) -> Result<ExpanderMask, MaskError> {
    ExpanderMask::sample(n_in, n_out, density, seed)
}

pub fn mask_density(m: &ExpanderMask) -> f64 {
    m.density()
}

pub fn flop_estimate(m: &ExpanderMask, n: usize) -> u64 {
    m.flops(n)
}

pub fn verify_mask(m: &ExpanderMask) -> MaskDiagnostics {
    m.verify()
}
