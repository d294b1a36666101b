use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodingKind {
    Unordered,
    Ordered,
    Graph,
}

/// JSON form of a coding. `edges` is read only for `kind = "graph"`; an edge
/// `[a, b]` is an arrow from `a` to `b`, i.e. the effect `Y(b) - Y(a)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodingSpec {
    pub n_treatments: usize,
    pub kind: CodingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

/// Maps the multivalued treatment into `n = n_treatments - 1` binary
/// indicators `D_k = 1[T ∈ R_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodingSpec", into = "CodingSpec")]
pub struct TreatmentCoding {
    n_treatments: usize,
    kind: CodingKind,
    edges: Vec<(usize, usize)>,
    membership: Vec<Vec<bool>>,
}

impl TryFrom<CodingSpec> for TreatmentCoding {
    type Error = Error;
    fn try_from(s: CodingSpec) -> Result<Self> {
        match s.kind {
            CodingKind::Unordered => check_count(s.n_treatments).map(|_| TreatmentCoding::unordered(s.n_treatments)),
            CodingKind::Ordered => check_count(s.n_treatments).map(|_| TreatmentCoding::ordered(s.n_treatments)),
            CodingKind::Graph => {
                let edges = s
                    .edges
                    .ok_or_else(|| Error::InvalidCoding("graph coding needs an edge list".into()))?;
                TreatmentCoding::from_edges(s.n_treatments, edges.iter().map(|e| (e[0], e[1])).collect())
            }
        }
    }
}

impl From<TreatmentCoding> for CodingSpec {
    fn from(c: TreatmentCoding) -> Self {
        CodingSpec {
            n_treatments: c.n_treatments,
            kind: c.kind,
            edges: match c.kind {
                CodingKind::Graph => Some(c.edges.iter().map(|&(a, b)| [a, b]).collect()),
                _ => None,
            },
        }
    }
}

fn check_count(n_treatments: usize) -> Result<()> {
    if n_treatments < 2 {
        return Err(Error::InvalidCoding(format!(
            "need at least 2 treatments, got {n_treatments}"
        )));
    }
    Ok(())
}

impl TreatmentCoding {
    /// `D_k = 1[T = k]`: effects relative to treatment 0.
    pub fn unordered(n_treatments: usize) -> Self {
        let edges = (1..n_treatments).map(|k| (0, k)).collect();
        Self::build(n_treatments, CodingKind::Unordered, edges).expect("star graph is a tree")
    }

    /// `D_k = 1[T ≥ k]`: effects of consecutive transitions.
    pub fn ordered(n_treatments: usize) -> Self {
        let edges = (1..n_treatments).map(|k| (k - 1, k)).collect();
        Self::build(n_treatments, CodingKind::Ordered, edges).expect("path graph is a tree")
    }

    /// Generic coding from effect arrows `(a, b)` meaning `Y(b) - Y(a)`.
    /// `R_k` is the set of treatments on the `b` side of edge `k`.
    pub fn from_edges(n_treatments: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::build(n_treatments, CodingKind::Graph, edges)
    }

    fn build(n_treatments: usize, kind: CodingKind, edges: Vec<(usize, usize)>) -> Result<Self> {
        check_count(n_treatments)?;
        if edges.len() != n_treatments - 1 {
            return Err(Error::InvalidCoding(format!(
                "{} treatments need {} effect edges, got {}",
                n_treatments,
                n_treatments - 1,
                edges.len()
            )));
        }
        for &(a, b) in &edges {
            if a >= n_treatments || b >= n_treatments {
                return Err(Error::InvalidCoding(format!("edge ({a}, {b}) is out of range")));
            }
            if a == b {
                return Err(Error::InvalidCoding(format!("edge ({a}, {b}) is a self-loop")));
            }
        }
        // n edges on n+1 nodes form a tree iff the graph is connected.
        let mut parent: Vec<usize> = (0..n_treatments).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let next = p[y];
                p[y] = r;
                y = next;
            }
            r
        }
        for &(a, b) in &edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(Error::InvalidCoding(format!(
                    "edge ({a}, {b}) closes a cycle in the effect graph"
                )));
            }
            parent[ra] = rb;
        }
        let membership = edges
            .iter()
            .enumerate()
            .map(|(k, &(_, b))| {
                let mut inside = vec![false; n_treatments];
                let mut stack = vec![b];
                inside[b] = true;
                while let Some(node) = stack.pop() {
                    for (e, &(x, y)) in edges.iter().enumerate() {
                        if e == k {
                            continue;
                        }
                        let other = if x == node {
                            y
                        } else if y == node {
                            x
                        } else {
                            continue;
                        };
                        if !inside[other] {
                            inside[other] = true;
                            stack.push(other);
                        }
                    }
                }
                inside
            })
            .collect();
        Ok(TreatmentCoding {
            n_treatments,
            kind,
            edges,
            membership,
        })
    }

    /// Number of treatments `n + 1`.
    pub fn n_treatments(&self) -> usize {
        self.n_treatments
    }

    /// Number of indicators `n`.
    pub fn n(&self) -> usize {
        self.n_treatments - 1
    }

    pub fn kind(&self) -> CodingKind {
        self.kind
    }

    /// Effect edge `(a, b)` of each indicator: `β_k` is `Y(b) - Y(a)`.
    pub fn labels(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Whether treatment `t` belongs to `R_k`.
    pub fn contains(&self, k: usize, t: usize) -> bool {
        self.membership[k][t]
    }

    /// Sorted members of `R_k`.
    pub fn indicator_set(&self, k: usize) -> Vec<usize> {
        (0..self.n_treatments).filter(|&t| self.membership[k][t]).collect()
    }

    /// Indicator vector `D(t)` for treatment `t`.
    pub fn indicators(&self, t: usize) -> Vec<f64> {
        (0..self.n())
            .map(|k| if self.membership[k][t] { 1.0 } else { 0.0 })
            .collect()
    }

    /// Express each treatment dummy `1[T = t]` as `c_t + Σ_k M[t][k] D_k`.
    /// Returns `(M, c)`, with `M` of shape `n_treatments × n`.
    pub fn reconstruction(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let size = self.n_treatments;
        let n = self.n();
        // Rows k < n: D_k = Σ_t A[k][t] u_t. Last row: 1 = Σ_t u_t.
        let a = nalgebra::DMatrix::from_fn(size, size, |r, t| {
            if r < n {
                if self.membership[r][t] {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0
            }
        });
        let inv = a
            .try_inverse()
            .expect("indicator matrix of a tree coding is invertible");
        let m = (0..size)
            .map(|t| (0..n).map(|k| clean(inv[(t, k)])).collect())
            .collect();
        let c = (0..size).map(|t| clean(inv[(t, n)])).collect();
        (m, c)
    }
}

fn clean(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}
