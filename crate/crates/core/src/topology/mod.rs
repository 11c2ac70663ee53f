//! Connectivity matrices, member bookkeeping and structure builders.
//!
//! Nodes are ordered `[bar nodes (2β) | string-only nodes (σ)]` and bar `i`
//! always runs from node `2i` to node `2i + 1`.

mod builders;
mod doc;

use std::fmt;

use nalgebra::{DMatrix, Vector3};
use thiserror::Error;

pub use builders::{build_dbar, build_tbar, build_tnd1, dbar_frame, reconfigure_tnd1, tbar_frame, tnd1_frame, Dimension, Frame};
pub use doc::{Pin, StructureDoc, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("angle {0} rad is outside (0, pi/2)")]
    Angle(f64),
    #[error("length {0} must be positive")]
    Length(f64),
    #[error("expected {expected} T-bar angles, got {got}")]
    AngleCount { expected: usize, got: usize },
    #[error("complexity must be at least 1")]
    Complexity,
    #[error("member {0:?} connects a point to itself")]
    SelfLoop([usize; 2]),
    #[error("point index {0} out of range")]
    PointIndex(usize),
    #[error("invalid topology: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("structure document: {0}")]
    Document(String),
}

/// Signed incidence description of a class-1 tensegrity under the node
/// ordering convention.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub beta: usize,
    pub alpha: usize,
    pub sigma: usize,
    /// `β × n`, row `i` has `-1` at the start node and `+1` at the end node.
    pub c_b: DMatrix<f64>,
    /// `α × n`, same sign convention as `c_b`.
    pub c_s: DMatrix<f64>,
    /// `β × n` centroid map.
    pub c_r: DMatrix<f64>,
    /// `2β × n` bar-node selector.
    pub c_nb: DMatrix<f64>,
    /// `σ × n` string-node selector.
    pub c_ns: DMatrix<f64>,
    /// `α × 2β` string incidence on bar nodes.
    pub c_sb: DMatrix<f64>,
    /// `α × σ` string incidence on string nodes.
    pub c_ss: DMatrix<f64>,
}

impl Topology {
    /// Builds the connectivity for `beta` bars under the node ordering
    /// convention plus `sigma` string nodes and the given strings
    /// `(start, end)`.
    pub fn new(beta: usize, sigma: usize, strings: &[[usize; 2]]) -> Self {
        let n = 2 * beta + sigma;
        let alpha = strings.len();
        let mut c_b = DMatrix::zeros(beta, n);
        let mut c_r = DMatrix::zeros(beta, n);
        for i in 0..beta {
            c_b[(i, 2 * i)] = -1.0;
            c_b[(i, 2 * i + 1)] = 1.0;
            c_r[(i, 2 * i)] = 0.5;
            c_r[(i, 2 * i + 1)] = 0.5;
        }
        let mut c_s = DMatrix::zeros(alpha, n);
        for (k, [a, b]) in strings.iter().enumerate() {
            c_s[(k, *a)] -= 1.0;
            c_s[(k, *b)] += 1.0;
        }
        let mut c_nb = DMatrix::zeros(2 * beta, n);
        for i in 0..2 * beta {
            c_nb[(i, i)] = 1.0;
        }
        let mut c_ns = DMatrix::zeros(sigma, n);
        for j in 0..sigma {
            c_ns[(j, 2 * beta + j)] = 1.0;
        }
        let c_sb = &c_s * c_nb.transpose();
        let c_ss = &c_s * c_ns.transpose();
        Self {
            beta,
            alpha,
            sigma,
            c_b,
            c_s,
            c_r,
            c_nb,
            c_ns,
            c_sb,
            c_ss,
        }
    }

    pub fn n_nodes(&self) -> usize {
        2 * self.beta + self.sigma
    }

    /// `(start, end)` node pairs of each bar read back from `c_b`.
    pub fn bar_ends(&self) -> Vec<[usize; 2]> {
        incidence_pairs(&self.c_b)
    }

    /// `(start, end)` node pairs of each string read back from `c_s`.
    pub fn string_ends(&self) -> Vec<[usize; 2]> {
        incidence_pairs(&self.c_s)
    }

    /// Returns all invariant violations; empty iff the topology is valid.
    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }
}

fn incidence_pairs(c: &DMatrix<f64>) -> Vec<[usize; 2]> {
    c.row_iter()
        .map(|row| {
            let start = row.iter().position(|v| *v < 0.0).unwrap_or(usize::MAX);
            let end = row.iter().position(|v| *v > 0.0).unwrap_or(usize::MAX);
            [start, end]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Shape { matrix: &'static str, expected: (usize, usize), got: (usize, usize) },
    BadIncidenceRow { matrix: &'static str, row: usize },
    SelfLoop { matrix: &'static str, row: usize },
    Duplicate { matrix: &'static str, first: usize, second: usize },
    BarNodeOrder { bar: usize },
    Partition { matrix: &'static str },
    Centroid { bar: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape { matrix, expected, got } => write!(f, "{matrix} is {got:?}, expected {expected:?}"),
            Self::BadIncidenceRow { matrix, row } => write!(f, "{matrix} row {row} is not a single +1/-1 pair"),
            Self::SelfLoop { matrix, row } => write!(f, "{matrix} row {row} connects a node to itself"),
            Self::Duplicate { matrix, first, second } => write!(f, "{matrix} rows {first} and {second} are the same member"),
            Self::BarNodeOrder { bar } => write!(f, "bar {bar} does not use nodes (2i, 2i+1)"),
            Self::Partition { matrix } => write!(f, "{matrix} does not match the column partition of C_s"),
            Self::Centroid { bar } => write!(f, "C_r row {bar} does not average the bar end nodes"),
        }
    }
}

pub fn validate(t: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = t.n_nodes();
    let shapes: [(&'static str, &DMatrix<f64>, (usize, usize)); 7] = [
        ("C_b", &t.c_b, (t.beta, n)),
        ("C_s", &t.c_s, (t.alpha, n)),
        ("C_r", &t.c_r, (t.beta, n)),
        ("C_nb", &t.c_nb, (2 * t.beta, n)),
        ("C_ns", &t.c_ns, (t.sigma, n)),
        ("C_sb", &t.c_sb, (t.alpha, 2 * t.beta)),
        ("C_ss", &t.c_ss, (t.alpha, t.sigma)),
    ];
    for (name, m, expected) in shapes {
        if m.shape() != expected {
            out.push(Violation::Shape {
                matrix: name,
                expected,
                got: m.shape(),
            });
        }
    }
    if !out.is_empty() {
        return out;
    }

    for (name, m) in [("C_b", &t.c_b), ("C_s", &t.c_s)] {
        let mut seen: Vec<(usize, [usize; 2])> = Vec::new();
        for (r, row) in m.row_iter().enumerate() {
            let nz: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
            let pair = match nz.as_slice() {
                [(a, va), (b, vb)] if (*va == -1.0 && *vb == 1.0) || (*va == 1.0 && *vb == -1.0) => [*a.min(b), *a.max(b)],
                [] => {
                    // A row that cancels to zero is a member whose two ends coincide.
                    out.push(Violation::SelfLoop { matrix: name, row: r });
                    continue;
                }
                _ => {
                    out.push(Violation::BadIncidenceRow { matrix: name, row: r });
                    continue;
                }
            };
            if let Some((first, _)) = seen.iter().find(|(_, p)| *p == pair) {
                out.push(Violation::Duplicate {
                    matrix: name,
                    first: *first,
                    second: r,
                });
            }
            seen.push((r, pair));
        }
    }

    for (i, [a, b]) in t.bar_ends().into_iter().enumerate() {
        if a != 2 * i || b != 2 * i + 1 {
            out.push(Violation::BarNodeOrder { bar: i });
        }
        let row = t.c_r.row(i);
        let ok = row.iter().enumerate().all(|(j, v)| {
            if j == a || j == b {
                *v == 0.5
            } else {
                *v == 0.0
            }
        });
        if !ok {
            out.push(Violation::Centroid { bar: i });
        }
    }

    let nb_ok = t.c_nb == DMatrix::from_fn(2 * t.beta, n, |r, c| if r == c { 1.0 } else { 0.0 });
    if !nb_ok {
        out.push(Violation::Partition { matrix: "C_nb" });
    }
    let ns_ok = t.c_ns == DMatrix::from_fn(t.sigma, n, |r, c| if c == 2 * t.beta + r { 1.0 } else { 0.0 });
    if !ns_ok {
        out.push(Violation::Partition { matrix: "C_ns" });
    }
    if &t.c_s * t.c_nb.transpose() != t.c_sb {
        out.push(Violation::Partition { matrix: "C_sb" });
    }
    if &t.c_s * t.c_ns.transpose() != t.c_ss {
        out.push(Violation::Partition { matrix: "C_ss" });
    }
    out
}

/// A topology together with nominal geometry and joint bookkeeping.
#[derive(Clone, Debug)]
pub struct Structure {
    pub topology: Topology,
    /// `3 × n` nominal node positions.
    pub nodes: DMatrix<f64>,
    /// Spatial point of every node; nodes sharing a point form a joint.
    pub node_point: Vec<usize>,
    /// Distinct spatial points.
    pub points: Vec<Vector3<f64>>,
    /// Groups of coincident (virtual) nodes, each with at least two members.
    /// The first entry is the representative that strings attach to.
    pub joints: Vec<Vec<usize>>,
    pub planar: bool,
}

impl Structure {
    pub fn bar_lengths(&self) -> Vec<f64> {
        let b = &self.nodes * self.topology.c_b.transpose();
        b.column_iter().map(|c| c.norm()).collect()
    }

    /// Representative node of a spatial point.
    pub fn point_node(&self, point: usize) -> Option<usize> {
        self.node_point.iter().position(|p| *p == point)
    }

    /// Joint multiplicity of each point.
    pub fn multiplicity(&self, point: usize) -> usize {
        self.node_point.iter().filter(|p| **p == point).count()
    }

    /// Node positions with every point moved to `points[p]`.
    pub fn nodes_at(&self, points: &[Vector3<f64>]) -> DMatrix<f64> {
        let mut n = DMatrix::zeros(3, self.node_point.len());
        for (j, p) in self.node_point.iter().enumerate() {
            n.set_column(j, &points[*p]);
        }
        n
    }
}
