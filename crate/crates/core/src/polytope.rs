//! Polytopes `{x : Ax > b}` with an interior witness, slack computations and
//! the standard test bodies.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RhmcError};

/// Relative threshold on the minimum slack below which a point is treated as
/// numerically on the boundary. Scaled by the minimum slack of the witness.
pub const BOUNDARY_GUARD: f64 = 1e-12;

/// An open polytope `{x : Ax > b}` together with a strictly feasible point.
///
/// Instances are immutable once built and can be shared freely between
/// concurrently running chains.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    name: String,
    a: DMatrix<f64>,
    b: DVector<f64>,
    x0: DVector<f64>,
    slack_floor: f64,
}

/// The slack vector `s = Ax - b` at some point.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackView {
    pub s: DVector<f64>,
    pub interior: bool,
}

impl SlackView {
    pub fn min(&self) -> f64 {
        self.s.min()
    }
}

/// Outcome of [`Polytope::validate`]. An empty failure list means the body is usable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

impl Polytope {
    /// Builds a polytope after checking that the shapes agree.
    ///
    /// Rank and feasibility are not enforced here; see [`Polytope::validate`].
    pub fn new(
        name: impl Into<String>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let (m, n) = a.shape();
        if n == 0 || m == 0 {
            return Err(RhmcError::input("polytope: empty constraint matrix"));
        }
        if b.len() != m {
            return Err(RhmcError::input(format!(
                "polytope: b has {} entries, expected {m}",
                b.len()
            )));
        }
        if x0.len() != n {
            return Err(RhmcError::input(format!(
                "polytope: x0 has {} entries, expected {n}",
                x0.len()
            )));
        }
        let s0 = &a * &x0 - &b;
        let min0 = s0.min();
        let slack_floor = if min0.is_finite() && min0 > 0.0 {
            BOUNDARY_GUARD * min0
        } else {
            0.0
        };
        Ok(Polytope {
            name: name.into(),
            a,
            b,
            x0,
            slack_floor,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of constraints.
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// Ambient dimension.
    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    /// Slacks below this value are rejected by the geometry layer.
    pub fn slack_floor(&self) -> f64 {
        self.slack_floor
    }

    /// `s = Ax - b`, flagging whether every slack is strictly positive.
    pub fn slacks(&self, x: &DVector<f64>) -> Result<SlackView> {
        if x.len() != self.n() {
            return Err(RhmcError::input(format!(
                "point has dimension {}, polytope has {}",
                x.len(),
                self.n()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RhmcError::input("point has non-finite coordinates"));
        }
        let s = &self.a * x - &self.b;
        let interior = s.iter().all(|&v| v > 0.0);
        Ok(SlackView { s, interior })
    }

    /// True when every slack at `x` exceeds the boundary guard.
    pub fn is_safely_interior(&self, x: &DVector<f64>) -> bool {
        match self.slacks(x) {
            Ok(view) => view.interior && view.min() > self.slack_floor,
            Err(_) => false,
        }
    }

    /// Checks finiteness, full column rank and strict feasibility of the witness.
    pub fn validate(&self) -> ValidationReport {
        let mut failures = Vec::new();
        let finite = self.a.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.x0.iter().all(|v| v.is_finite());
        if !finite {
            failures.push("non-finite entries in A, b or x0".to_string());
        }
        if self.m() < self.n() {
            failures.push(format!(
                "fewer constraints ({}) than dimensions ({})",
                self.m(),
                self.n()
            ));
        }
        if finite {
            let sv = self.a.clone().singular_values();
            let norm = sv.max();
            let tol = 1e-10 * norm;
            let rank = sv.iter().filter(|&&v| v > tol).count();
            if rank < self.n() {
                failures.push(format!(
                    "constraint matrix has rank {rank} < n = {}",
                    self.n()
                ));
            }
            let s0 = &self.a * &self.x0 - &self.b;
            if let Some((i, v)) = s0
                .iter()
                .enumerate()
                .find(|(_, &v)| v <= 0.0)
            {
                failures.push(format!(
                    "witness x0 is not strictly feasible: slack {i} = {v}"
                ));
            }
        }
        ValidationReport { failures }
    }

    /// Translates the body by `shift`: the new body is `{x + shift : x in P}`.
    pub fn translated(&self, shift: &DVector<f64>) -> Result<Polytope> {
        if shift.len() != self.n() {
            return Err(RhmcError::input("shift has the wrong dimension"));
        }
        let b = &self.b + &self.a * shift;
        let x0 = &self.x0 + shift;
        Polytope::new(self.name.clone(), self.a.clone(), b, x0)
    }
}

/// Families of generated test bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyKind {
    Cube,
    Simplex,
    RandomHalfspaces,
}

impl std::str::FromStr for BodyKind {
    type Err = RhmcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(BodyKind::Cube),
            "simplex" => Ok(BodyKind::Simplex),
            "random_halfspaces" | "random" => Ok(BodyKind::RandomHalfspaces),
            other => Err(RhmcError::input(format!("unknown body kind '{other}'"))),
        }
    }
}

/// Extra parameters for [`generate`]; only the random family uses them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GenParams {
    pub m: Option<usize>,
    pub seed: Option<u64>,
}

/// Generates a standard body.
///
/// * `Cube`: `[0,1]^n`, `m = 2n`, witness at the center.
/// * `Simplex`: `{x >= 0, sum x <= 1}`, `m = n + 1`, witness at the barycenter.
/// * `RandomHalfspaces`: `m` unit normals uniform on the sphere with `b_i = -1`,
///   so the origin is the witness with unit slack everywhere.
pub fn generate(kind: BodyKind, n: usize, params: GenParams) -> Result<Polytope> {
    if n == 0 {
        return Err(RhmcError::input("dimension must be at least 1"));
    }
    match kind {
        BodyKind::Cube => {
            let mut a = DMatrix::zeros(2 * n, n);
            let mut b = DVector::zeros(2 * n);
            for j in 0..n {
                a[(2 * j, j)] = 1.0;
                a[(2 * j + 1, j)] = -1.0;
                b[2 * j + 1] = -1.0;
            }
            Polytope::new(format!("cube{n}"), a, b, DVector::from_element(n, 0.5))
        }
        BodyKind::Simplex => {
            let mut a = DMatrix::zeros(n + 1, n);
            let mut b = DVector::zeros(n + 1);
            for j in 0..n {
                a[(j, j)] = 1.0;
                a[(n, j)] = -1.0;
            }
            b[n] = -1.0;
            let x0 = DVector::from_element(n, 1.0 / (n as f64 + 1.0));
            Polytope::new(format!("simplex{n}"), a, b, x0)
        }
        BodyKind::RandomHalfspaces => {
            let m = params
                .m
                .ok_or_else(|| RhmcError::input("random_halfspaces needs m"))?;
            let seed = params
                .seed
                .ok_or_else(|| RhmcError::input("random_halfspaces needs a seed"))?;
            if m <= n {
                return Err(RhmcError::input(format!(
                    "random_halfspaces needs m > n (got m = {m}, n = {n})"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = DMatrix::zeros(m, n);
            for i in 0..m {
                loop {
                    let row: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        for (j, v) in row.iter().enumerate() {
                            a[(i, j)] = v / norm;
                        }
                        break;
                    }
                }
            }
            Polytope::new(
                format!("random{n}x{m}s{seed}"),
                a,
                DVector::from_element(m, -1.0),
                DVector::zeros(n),
            )
        }
    }
}
