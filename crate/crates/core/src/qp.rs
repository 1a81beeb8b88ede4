//! Nonnegative minimization of the Gauss functional `F(w) = wᵀMw − 2bᵀw`.
//!
//! Lawson–Hanson active set with a Cholesky factor of the passive block that
//! grows by one row per added coordinate and is refactored after removals.
//! Before the main loop the passive set is seeded with `{i : b_i > 0}` and
//! pruned until the unconstrained solve on it is positive; for equilibrium
//! problems this usually is already the answer. Since `M` is positive
//! definite the minimizer is unique, so the seed only changes the path.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::{dot, Append, Cholesky, SymMatrix};

/// Relative floor on the diagonal of the Cholesky factor.
pub const CONDITIONING_FLOOR: f64 = 1e-12;

/// Default absolute tolerance for a right-hand side: `1e−9 · max|b|`.
pub fn default_tol(b: &[f64]) -> f64 {
    let m = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        1e-9 * m
    } else {
        1e-9
    }
}

#[derive(Clone, Debug)]
pub struct QpProblem {
    m: SymMatrix,
    b: Vec<f64>,
}

impl QpProblem {
    pub fn new(m: SymMatrix, b: Vec<f64>) -> Result<Self> {
        if m.dim() != b.len() {
            return Err(LabError::Mismatch(format!(
                "matrix is {0}x{0} but b has {1} entries",
                m.dim(),
                b.len()
            )));
        }
        let asym = m.asymmetry();
        if asym > 1e-12 * m.max_abs().max(1.0) {
            return Err(LabError::param(format!(
                "matrix is not symmetric (deviation {asym:e})"
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(LabError::param("right-hand side must be finite"));
        }
        Ok(QpProblem { m, b })
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.m
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Same matrix, new right-hand side.
    pub fn with_rhs(&self, b: Vec<f64>) -> Result<QpProblem> {
        QpProblem::new(self.m.clone(), b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub weights: Vec<f64>,
    /// `max |(Mw − b)_i|` over `w_i > 0`.
    pub kkt_stationarity: f64,
    /// `min (Mw − b)_i` over `w_i = 0`; `None` if every weight is positive.
    pub kkt_feasibility_dual: Option<f64>,
    pub iterations: usize,
    pub objective: f64,
    /// Coordinates refused by the conditioning guard.
    pub rejected: Vec<usize>,
}

impl QpSolution {
    pub fn total(&self) -> f64 {
        self.weights.iter().fold(0.0, |a, w| a + w)
    }

    /// Every weight above `1e−12 ·` total mass.
    pub fn is_interior(&self) -> bool {
        let t = self.total();
        t > 0.0 && self.weights.iter().all(|&w| w > 1e-12 * t)
    }
}

/// KKT residuals recomputed from scratch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub dual_min: f64,
    pub complementarity: f64,
    pub min_weight: f64,
}

impl KktReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.dual_min >= -tol && self.min_weight >= 0.0
    }
}

/// Independent certificate: `Mw − b` with plain row sums.
pub fn check_kkt(problem: &QpProblem, weights: &[f64]) -> Result<KktReport> {
    let n = problem.dim();
    if weights.len() != n {
        return Err(LabError::Mismatch(
            "weight vector has the wrong length".into(),
        ));
    }
    let mut rep = KktReport {
        stationarity: 0.0,
        dual_min: f64::INFINITY,
        complementarity: 0.0,
        min_weight: weights.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    for i in 0..n {
        let mut r = -problem.b[i];
        for (j, w) in weights.iter().enumerate() {
            r += problem.m.get(i, j) * w;
        }
        if weights[i] > 0.0 {
            rep.stationarity = rep.stationarity.max(r.abs());
        } else {
            rep.dual_min = rep.dual_min.min(r);
        }
        rep.complementarity = rep.complementarity.max((weights[i] * r).abs());
    }
    if n == 0 {
        rep.min_weight = 0.0;
    }
    Ok(rep)
}

struct State<'a> {
    m: &'a SymMatrix,
    b: &'a [f64],
    passive: Vec<usize>,
    chol: Cholesky,
    w: Vec<f64>,
    g: Vec<f64>,
    rejected: Vec<bool>,
}

impl<'a> State<'a> {
    fn coupling(&self, j: usize) -> Vec<f64> {
        let row = self.m.row(j);
        self.passive.iter().map(|&i| row[i]).collect()
    }

    /// Try to add `j` to the factor; `Ok(false)` if refused by the guard.
    fn push(&mut self, j: usize) -> Result<bool> {
        let c = self.coupling(j);
        match self.chol.append(&c, self.m.get(j, j)) {
            Append::Accepted => {
                self.passive.push(j);
                Ok(true)
            }
            Append::IllConditioned(_) => {
                self.rejected[j] = true;
                Ok(false)
            }
            Append::Indefinite(pivot) => Err(LabError::NotPositiveDefinite { index: j, pivot }),
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let idx = std::mem::take(&mut self.passive);
        self.chol = Cholesky::new(CONDITIONING_FLOOR);
        for j in idx {
            self.push(j)?;
        }
        Ok(())
    }

    fn solve_passive(&self) -> Vec<f64> {
        let rhs: Vec<f64> = self.passive.iter().map(|&i| self.b[i]).collect();
        self.chol.solve(&rhs)
    }

    fn update_gradient(&mut self) {
        let passive = &self.passive;
        let w = &self.w;
        let wp: Vec<f64> = passive.iter().map(|&i| w[i]).collect();
        for (i, gi) in self.g.iter_mut().enumerate() {
            let row = self.m.row(i);
            let mut s = 0.0;
            for (k, &j) in passive.iter().enumerate() {
                s += row[j] * wp[k];
            }
            *gi = s - self.b[i];
        }
    }

    fn solution(&self, iterations: usize) -> QpSolution {
        let mut stat = 0.0f64;
        let mut dual: Option<f64> = None;
        for (&w, &g) in self.w.iter().zip(&self.g) {
            if w > 0.0 {
                stat = stat.max(g.abs());
            } else {
                dual = Some(dual.map_or(g, |d| d.min(g)));
            }
        }
        let objective = dot(&self.w, &self.g) - dot(&self.w, self.b);
        QpSolution {
            weights: self.w.clone(),
            kkt_stationarity: stat,
            kkt_feasibility_dual: dual,
            iterations,
            objective,
            rejected: (0..self.rejected.len())
                .filter(|&i| self.rejected[i])
                .collect(),
        }
    }
}

/// Solve `min wᵀMw − 2bᵀw, w ≥ 0`. `tol` is the absolute KKT tolerance on
/// `Mw − b`.
pub fn solve_gauss_qp(problem: &QpProblem, tol: f64) -> Result<QpSolution> {
    solve_gauss_qp_seeded(problem, tol, None)
}

/// As [`solve_gauss_qp`], with the initial passive set restricted to
/// `seed` (intersected with `{b_i > 0}`). A seed close to the true support
/// saves most of the factorization work; the result does not depend on it.
pub fn solve_gauss_qp_seeded(
    problem: &QpProblem,
    tol: f64,
    seed: Option<&[usize]>,
) -> Result<QpSolution> {
    if !(tol > 0.0) {
        return Err(LabError::param("tolerance must be positive"));
    }
    let n = problem.dim();
    let mut st = State {
        m: &problem.m,
        b: &problem.b,
        passive: Vec::new(),
        chol: Cholesky::new(CONDITIONING_FLOOR),
        w: vec![0.0; n],
        g: problem.b.iter().map(|v| -v).collect(),
        rejected: vec![false; n],
    };
    if problem.b.iter().all(|&v| v <= 0.0) {
        return Ok(st.solution(0));
    }
    let max_iter = 10 * n + 100;
    let mut iterations = 0;

    // seed: positive targets (optionally restricted), pruned until the passive solve is positive
    let all: Vec<usize>;
    let seed = match seed {
        Some(s) => s,
        None => {
            all = (0..n).collect();
            &all
        }
    };
    let mut seen = vec![false; n];
    for &j in seed {
        if j >= n {
            return Err(LabError::param(format!("seed index {j} out of range")));
        }
        if problem.b[j] > 0.0 && !seen[j] {
            seen[j] = true;
            st.push(j)?;
        }
    }
    loop {
        if st.passive.is_empty() {
            break;
        }
        iterations += 1;
        let z = st.solve_passive();
        if z.iter().all(|&v| v > 0.0) {
            for (k, &i) in st.passive.iter().enumerate() {
                st.w[i] = z[k];
            }
            break;
        }
        st.passive = st
            .passive
            .iter()
            .zip(&z)
            .filter(|(_, &v)| v > 0.0)
            .map(|(&i, _)| i)
            .collect();
        st.refactor()?;
    }
    st.update_gradient();

    let mut blocked = vec![false; n];
    loop {
        // most violated inactive coordinate, lowest index on ties
        let mut pick: Option<usize> = None;
        for (j, &b) in blocked.iter().enumerate() {
            if st.w[j] > 0.0 || st.rejected[j] || b {
                continue;
            }
            if st.g[j] < -tol && pick.is_none_or(|p| st.g[j] < st.g[p]) {
                pick = Some(j);
            }
        }
        let Some(j) = pick else { break };
        if iterations >= max_iter {
            return Err(LabError::Convergence {
                iterations,
                best: Box::new(st.solution(iterations)),
            });
        }
        iterations += 1;
        if !st.push(j)? {
            continue;
        }
        let mut first = true;
        loop {
            let z = st.solve_passive();
            if z.iter().all(|&v| v > 0.0) {
                for (k, &i) in st.passive.iter().enumerate() {
                    st.w[i] = z[k];
                }
                break;
            }
            if first && z[z.len() - 1] <= 0.0 {
                // rounding made the entering coordinate useless: undo it
                st.passive.pop();
                st.refactor()?;
                blocked[j] = true;
                break;
            }
            first = false;
            // step from w towards z until the first passive weight hits 0
            let mut step = 1.0f64;
            let mut hit = 0;
            for (k, &i) in st.passive.iter().enumerate() {
                if z[k] <= 0.0 {
                    let wi = st.w[i];
                    let t = wi / (wi - z[k]);
                    if t < step {
                        step = t;
                        hit = k;
                    }
                }
            }
            let mut keep = Vec::with_capacity(st.passive.len());
            for (k, &i) in st.passive.iter().enumerate() {
                let v = st.w[i] + step * (z[k] - st.w[i]);
                if k == hit || v <= 0.0 {
                    st.w[i] = 0.0;
                } else {
                    st.w[i] = v;
                    keep.push(i);
                }
            }
            st.passive = keep;
            st.refactor()?;
            if st.passive.is_empty() {
                break;
            }
        }
        if !blocked[j] {
            blocked.iter_mut().for_each(|b| *b = false);
        }
        st.update_gradient();
    }
    Ok(st.solution(iterations))
}
