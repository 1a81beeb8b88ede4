//! Equilibrium measures, balayage, harmonic measures and the checks built
//! on them. Every solve is one Gauss QP on the node set of a
//! [`Discretization`].

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{Cell, Discretization, Point, ShapeSpec, COINCIDENCE};
use crate::kernel::{
    cell_kernel, kernel_matrix, mutual_energy, potential, DiscreteMeasure, KernelParams,
};
use crate::linalg::SymMatrix;
use crate::qp::{default_tol, solve_gauss_qp, solve_gauss_qp_seeded, QpProblem, QpSolution};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub measure: DiscreteMeasure,
    pub capacity_mass: f64,
    pub capacity_energy: f64,
    /// Largest equilibrium potential over the nodes.
    pub max_node_potential: f64,
    pub tol: f64,
    pub kkt: QpSolution,
}

impl EquilibriumResult {
    pub fn capacity(&self) -> f64 {
        self.capacity_mass
    }

    pub fn mass_energy_gap(&self) -> f64 {
        (self.capacity_mass - self.capacity_energy).abs()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalayageResult {
    pub swept: DiscreteMeasure,
    pub source_mass: f64,
    pub swept_mass: f64,
    /// `max |κμ^A − κμ|` over nodes with positive weight.
    pub potential_gap_on_a: f64,
    /// `min (κμ − κμ^A)` over the probe points; `None` without probes.
    pub contraction_margin: Option<f64>,
    pub tol: f64,
    pub kkt: QpSolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportProfile {
    pub interior_mass_fraction: f64,
    pub boundary_mass_fraction: f64,
    pub per_cell_masses: Vec<f64>,
    pub empty: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicMassIdentity {
    pub mass: f64,
    pub eq_potential_at_y: f64,
    pub gap: f64,
    /// Both solves have full support, so the identity is exact.
    pub interior: bool,
}

/// A node set with its Gram matrix, shared by several solves.
pub struct Assembled<'a> {
    pub params: KernelParams,
    pub disc: &'a Discretization,
    pub matrix: SymMatrix,
}

impl<'a> Assembled<'a> {
    pub fn new(params: &KernelParams, disc: &'a Discretization) -> Result<Self> {
        let matrix = if disc.is_empty() {
            SymMatrix::zeros(0)
        } else {
            kernel_matrix(params, disc)?
        };
        Ok(Assembled {
            params: *params,
            disc,
            matrix,
        })
    }

    fn solve(&self, b: Vec<f64>) -> Result<(QpSolution, f64)> {
        let tol = default_tol(&b);
        let problem = QpProblem::new(self.matrix.clone(), b)?;
        let seed = self.support_guess();
        Ok((solve_gauss_qp_seeded(&problem, tol, seed.as_deref())?, tol))
    }

    /// Newtonian measures on a solid live on its boundary, so boundary
    /// cells are the natural starting support there.
    fn support_guess(&self) -> Option<Vec<usize>> {
        if self.params.alpha() != 2.0 || self.disc.boundary_flags.iter().all(|&b| b) {
            return None;
        }
        Some(
            (0..self.disc.len())
                .filter(|&i| self.disc.boundary_flags[i])
                .collect(),
        )
    }

    pub fn equilibrium(&self) -> Result<EquilibriumResult> {
        let n = self.disc.len();
        let (sol, tol) = self.solve(vec![1.0; n])?;
        let mw = self.matrix.mul_vec(&sol.weights);
        let energy = sol.weights.iter().zip(&mw).fold(0.0, |a, (w, p)| a + w * p);
        let max_node_potential = mw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(EquilibriumResult {
            measure: DiscreteMeasure::from_discretization(self.disc, sol.weights.clone())?,
            capacity_mass: sol.total(),
            capacity_energy: energy,
            max_node_potential: if n == 0 { 0.0 } else { max_node_potential },
            tol,
            kkt: sol,
        })
    }

    /// Potential of `mu` at every node, as seen by the node's cell (see
    /// [`cell_kernel`]); atoms outside the cell contribute plain kernel
    /// values.
    pub fn source_potentials(&self, mu: &DiscreteMeasure) -> Vec<f64> {
        (0..self.disc.len())
            .into_par_iter()
            .map(|i| {
                let x = &self.disc.nodes[i];
                let cell = &self.disc.cells[i];
                let diag = self.matrix.get(i, i);
                mu.points().iter().zip(mu.weights()).fold(0.0, |s, (p, w)| {
                    if *w == 0.0 {
                        return s;
                    }
                    s + w * cell_kernel(&self.params, cell, diag, x.dist(p))
                })
            })
            .collect()
    }

    pub fn balayage(&self, mu: &DiscreteMeasure, probes: &[Point]) -> Result<BalayageResult> {
        let b = self.source_potentials(mu);
        let (sol, tol) = self.solve(b)?;
        let swept = DiscreteMeasure::from_discretization(self.disc, sol.weights.clone())?;
        let contraction_margin = if probes.is_empty() {
            None
        } else {
            let margins: Vec<f64> = probes
                .par_iter()
                .map(|x| potential(&self.params, mu, x) - potential(&self.params, &swept, x))
                .collect();
            Some(margins.into_iter().fold(f64::INFINITY, f64::min))
        };
        Ok(BalayageResult {
            source_mass: mu.total_mass(),
            swept_mass: sol.total(),
            potential_gap_on_a: sol.kkt_stationarity,
            contraction_margin,
            swept,
            tol,
            kkt: sol,
        })
    }

    /// Unit Dirac at `y`; if `y` is a node it carries that node's cell.
    pub fn dirac(&self, y: &Point) -> Result<DiscreteMeasure> {
        let cell = self
            .node_at(y)
            .map(|i| self.disc.cells[i])
            .unwrap_or(Cell::Ball {
                radius: f64::MIN_POSITIVE,
            });
        DiscreteMeasure::dirac(y.clone(), 1.0, cell)
    }

    pub fn node_at(&self, y: &Point) -> Option<usize> {
        self.disc
            .nodes
            .iter()
            .position(|x| x.dist_sq(y) < COINCIDENCE * COINCIDENCE)
    }

    pub fn harmonic_measure(&self, y: &Point, probes: &[Point]) -> Result<BalayageResult> {
        self.balayage(&self.dirac(y)?, probes)
    }
}

pub fn equilibrium(params: &KernelParams, disc: &Discretization) -> Result<EquilibriumResult> {
    Assembled::new(params, disc)?.equilibrium()
}

/// Capacity of a node set, `0` when empty.
pub fn capacity(params: &KernelParams, disc: &Discretization) -> Result<f64> {
    Ok(equilibrium(params, disc)?.capacity_mass)
}

pub fn balayage(
    params: &KernelParams,
    mu: &DiscreteMeasure,
    disc: &Discretization,
    probes: &[Point],
) -> Result<BalayageResult> {
    Assembled::new(params, disc)?.balayage(mu, probes)
}

pub fn harmonic_measure(
    params: &KernelParams,
    y: &Point,
    disc: &Discretization,
    probes: &[Point],
) -> Result<BalayageResult> {
    Assembled::new(params, disc)?.harmonic_measure(y, probes)
}

/// Swept mass of `ε_y` against the equilibrium potential at `y`.
pub fn harmonic_mass_identity(
    params: &KernelParams,
    y: &Point,
    disc: &Discretization,
) -> Result<HarmonicMassIdentity> {
    if disc.is_empty() {
        return Err(LabError::param(
            "harmonic mass identity needs a nonempty node set",
        ));
    }
    let asm = Assembled::new(params, disc)?;
    let eq = asm.equilibrium()?;
    let h = asm.harmonic_measure(y, &[])?;
    let eq_potential_at_y = match asm.node_at(y) {
        Some(i) => asm.matrix.mul_vec(&eq.kkt.weights)[i],
        None => potential(params, &eq.measure, y),
    };
    Ok(HarmonicMassIdentity {
        mass: h.swept_mass,
        eq_potential_at_y,
        gap: (h.swept_mass - eq_potential_at_y).abs(),
        interior: h.kkt.is_interior() && eq.kkt.is_interior(),
    })
}

/// Split the mass of a measure living on the nodes of `disc` by boundary
/// flags.
pub fn support_profile(swept: &DiscreteMeasure, disc: &Discretization) -> Result<SupportProfile> {
    if swept.len() != disc.len()
        || swept
            .points()
            .iter()
            .zip(&disc.nodes)
            .any(|(a, b)| a.dist_sq(b) > COINCIDENCE * COINCIDENCE)
    {
        return Err(LabError::Mismatch(
            "measure is not supported on the node set".into(),
        ));
    }
    let total = swept.total_mass();
    let per_cell_masses = swept.weights().to_vec();
    if !(total > 0.0) {
        return Ok(SupportProfile {
            interior_mass_fraction: 0.0,
            boundary_mass_fraction: 0.0,
            per_cell_masses,
            empty: true,
        });
    }
    let boundary: f64 = swept
        .weights()
        .iter()
        .zip(&disc.boundary_flags)
        .filter(|(_, &b)| b)
        .map(|(w, _)| w)
        .sum();
    let boundary_mass_fraction = boundary / total;
    Ok(SupportProfile {
        interior_mass_fraction: 1.0 - boundary_mass_fraction,
        boundary_mass_fraction,
        per_cell_masses,
        empty: false,
    })
}

/// What an exhaustion run solves on each step.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustionSource {
    Equilibrium,
    Balayage(DiscreteMeasure),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExhaustionStep {
    pub step: usize,
    pub nodes: usize,
    /// Total mass of the step's measure: capacity for equilibrium runs.
    pub mass: f64,
    /// `‖ν_k − ν_K‖_α` in the energy of the final node set.
    pub strong_distance: f64,
    /// `max |κν_k − κν_K|` over the probes.
    pub max_potential_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExhaustionTable {
    pub steps: Vec<ExhaustionStep>,
    pub masses_nondecreasing: bool,
    /// Largest decrease of a probe potential from one step to the next
    /// (`0` if all are nondecreasing).
    pub worst_probe_decrease: f64,
    pub max_kkt_stationarity: f64,
}

fn coordinate_key(p: &Point) -> Vec<u64> {
    p.coords().iter().map(|c| c.to_bits()).collect()
}

/// Solve on each of a nested family of node sets, comparing every step with
/// the last one.
pub fn exhaustion_run(
    params: &KernelParams,
    nested: &[Discretization],
    source: &ExhaustionSource,
    probes: &[Point],
) -> Result<ExhaustionTable> {
    let Some(last) = nested.last() else {
        return Err(LabError::param("exhaustion needs at least one step"));
    };
    let index: HashMap<Vec<u64>, usize> = last
        .nodes
        .iter()
        .enumerate()
        .map(|(i, p)| (coordinate_key(p), i))
        .collect();
    let mut maps = Vec::with_capacity(nested.len());
    for (k, d) in nested.iter().enumerate() {
        let idx = d
            .nodes
            .iter()
            .map(|p| index.get(&coordinate_key(p)).copied())
            .collect::<Option<Vec<usize>>>()
            .ok_or_else(|| {
                LabError::param(format!("step {k} is not contained in the final node set"))
            })?;
        if k + 1 < nested.len() {
            let next: std::collections::HashSet<Vec<u64>> =
                nested[k + 1].nodes.iter().map(coordinate_key).collect();
            if d.nodes.iter().any(|p| !next.contains(&coordinate_key(p))) {
                return Err(LabError::param(format!(
                    "step {k} is not contained in step {}",
                    k + 1
                )));
            }
        }
        maps.push(idx);
    }
    let asm = Assembled::new(params, last)?;
    let b_full = match source {
        ExhaustionSource::Equilibrium => vec![1.0; last.len()],
        ExhaustionSource::Balayage(mu) => asm.source_potentials(mu),
    };
    let embedded: Vec<(Vec<f64>, f64)> = maps
        .par_iter()
        .map(|idx| {
            let m = asm.matrix.submatrix(idx);
            let b: Vec<f64> = idx.iter().map(|&i| b_full[i]).collect();
            let tol = default_tol(&b);
            let sol = solve_gauss_qp(&QpProblem::new(m, b)?, tol)?;
            let mut full = vec![0.0; last.len()];
            for (&i, w) in idx.iter().zip(&sol.weights) {
                full[i] = *w;
            }
            Ok((full, sol.kkt_stationarity))
        })
        .collect::<Result<Vec<_>>>()?;
    let final_w = &embedded.last().expect("nonempty").0;
    let measures: Vec<DiscreteMeasure> = embedded
        .iter()
        .map(|(w, _)| DiscreteMeasure::from_discretization(last, w.clone()))
        .collect::<Result<_>>()?;
    let probe_pots: Vec<Vec<f64>> = measures
        .par_iter()
        .map(|m| probes.iter().map(|x| potential(params, m, x)).collect())
        .collect();
    let final_pots = probe_pots.last().expect("nonempty");
    let mut steps = Vec::with_capacity(nested.len());
    for (k, (w, _)) in embedded.iter().enumerate() {
        let diff: Vec<f64> = w.iter().zip(final_w).map(|(a, b)| a - b).collect();
        let md = asm.matrix.mul_vec(&diff);
        let d2: f64 = diff.iter().zip(&md).map(|(a, b)| a * b).sum();
        let gap = probe_pots[k]
            .iter()
            .zip(final_pots)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        steps.push(ExhaustionStep {
            step: k,
            nodes: nested[k].len(),
            mass: w.iter().fold(0.0, |a, v| a + v),
            strong_distance: d2.max(0.0).sqrt(),
            max_potential_gap: gap,
        });
    }
    let masses_nondecreasing = steps.windows(2).all(|s| s[1].mass >= s[0].mass);
    let mut worst = 0.0f64;
    for pair in probe_pots.windows(2) {
        for (a, b) in pair[0].iter().zip(&pair[1]) {
            worst = worst.max(a - b);
        }
    }
    Ok(ExhaustionTable {
        steps,
        masses_nondecreasing,
        worst_probe_decrease: worst,
        max_kkt_stationarity: embedded.iter().map(|e| e.1).fold(0.0, f64::max),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditivityReport {
    /// `max_i |(Σμ_j)^A_i − Σ(μ_j^A)_i|`.
    pub max_deviation: f64,
    pub all_interior: bool,
    /// For parts living on the nodes: how far their sweep is from the part
    /// itself.
    pub pass_through: Vec<Option<f64>>,
}

/// Balayage of a sum against the sum of balayages.
pub fn additivity_check(
    params: &KernelParams,
    parts: &[DiscreteMeasure],
    disc: &Discretization,
) -> Result<AdditivityReport> {
    let asm = Assembled::new(params, disc)?;
    let total = DiscreteMeasure::sum(parts);
    let whole = asm.balayage(&total, &[])?;
    let swept: Vec<BalayageResult> = parts
        .iter()
        .map(|p| asm.balayage(p, &[]))
        .collect::<Result<_>>()?;
    let mut summed = vec![0.0; disc.len()];
    for s in &swept {
        for (a, w) in summed.iter_mut().zip(s.swept.weights()) {
            *a += w;
        }
    }
    let max_deviation = summed
        .iter()
        .zip(whole.swept.weights())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let all_interior = whole.kkt.is_interior() && swept.iter().all(|s| s.kkt.is_interior());
    let pass_through = parts
        .iter()
        .zip(&swept)
        .map(|(part, s)| {
            let mut embedded = vec![0.0; disc.len()];
            for (p, w) in part.points().iter().zip(part.weights()) {
                embedded[asm.node_at(p)?] += w;
            }
            Some(
                embedded
                    .iter()
                    .zip(s.swept.weights())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            )
        })
        .collect();
    Ok(AdditivityReport {
        max_deviation,
        all_interior,
        pass_through,
    })
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let inv = 1.0 / base as f64;
    while i > 0 {
        f *= inv;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Quasi-random probes (Halton sequence started at `seed`) in the box of
/// three times the diameter around the nodes, keeping away from every cell.
pub fn probe_points(disc: &Discretization, count: usize, seed: u64) -> Vec<Point> {
    if disc.is_empty() || count == 0 {
        return Vec::new();
    }
    let n = disc.nodes[0].dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in &disc.nodes {
        for (i, c) in p.coords().iter().enumerate() {
            lo[i] = lo[i].min(*c);
            hi[i] = hi[i].max(*c);
        }
    }
    let diam = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt()
        .max(disc.cells.iter().map(Cell::extent).fold(0.0, f64::max) * 2.0)
        .max(f64::MIN_POSITIVE);
    let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let half = 1.5 * diam;
    let mut out = Vec::with_capacity(count);
    let start = seed % (1 << 40);
    let mut i = 0u64;
    while out.len() < count && i < 200 * count as u64 {
        let idx = start + i + 1;
        i += 1;
        let x = Point::new(
            (0..n)
                .map(|d| {
                    mid[d] - half + 2.0 * half * radical_inverse(idx, PRIMES[d % PRIMES.len()])
                })
                .collect(),
        );
        let clear = disc
            .nodes
            .iter()
            .zip(&disc.cells)
            .all(|(p, c)| p.dist(&x) > c.extent());
        if clear {
            out.push(x);
        }
    }
    out
}

/// Probes as in [`probe_points`], restricted to points the shape does not
/// enclose. Inside a set and its holes the Newtonian sweep reproduces the
/// source potential exactly, so a discretization cannot resolve the sign of
/// `κμ − κμ^A` there.
pub fn exterior_probes(
    shape: &ShapeSpec,
    disc: &Discretization,
    count: usize,
    seed: u64,
) -> Vec<Point> {
    let mut m = count;
    loop {
        let all = probe_points(disc, m, seed);
        let mut out: Vec<Point> = all.iter().filter(|x| !shape.encloses(x)).cloned().collect();
        if out.len() >= count || all.len() < m || m >= 64 * count {
            out.truncate(count);
            return out;
        }
        m *= 2;
    }
}

/// `‖μ − ν‖_α` from the three energies, clamped at 0.
pub fn strong_distance(params: &KernelParams, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let d2 = mutual_energy(params, mu, mu) - 2.0 * mutual_energy(params, mu, nu)
        + mutual_energy(params, nu, nu);
    d2.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{discretize, ShapeSpec};
    use approx::assert_relative_eq;

    fn newton() -> KernelParams {
        KernelParams::newtonian()
    }

    fn sphere(n: usize) -> Discretization {
        discretize(&ShapeSpec::sphere([0.0; 3], 1.0), n).unwrap()
    }

    #[test]
    fn empty_set_has_zero_capacity() {
        let d = Discretization::empty(ShapeSpec::ball([0.0; 3], 1.0));
        let eq = equilibrium(&newton(), &d).unwrap();
        assert_eq!(eq.capacity_mass, 0.0);
        assert!(eq.measure.is_empty());
    }

    #[test]
    fn unit_sphere_capacity_and_exterior_potential() {
        let d = sphere(500);
        let eq = equilibrium(&newton(), &d).unwrap();
        assert!(
            (eq.capacity_mass - 1.0).abs() < 0.02,
            "{}",
            eq.capacity_mass
        );
        assert!(eq.mass_energy_gap() <= 1e-6 * eq.capacity_mass);
        let v = potential(&newton(), &eq.measure, &Point::from([3.0, 0.0, 0.0]));
        assert!((v - 1.0 / 3.0).abs() < 0.01 / 3.0, "{v}");
        let e = mutual_energy(&newton(), &eq.measure, &eq.measure);
        assert!((e - 1.0).abs() < 0.02);
    }

    #[test]
    fn capacity_homogeneity() {
        let d = sphere(300);
        let c1 = capacity(&newton(), &d).unwrap();
        let c2 = capacity(&newton(), &d.scaled(2.0)).unwrap();
        assert_relative_eq!(c2, 2.0 * c1, max_relative = 1e-10);
        let k = KernelParams::new(1.5, 3).unwrap();
        let b = discretize(&ShapeSpec::ball([0.0; 3], 1.0), 8).unwrap();
        let c1 = capacity(&k, &b).unwrap();
        let c2 = capacity(&k, &b.scaled(3.0)).unwrap();
        assert_relative_eq!(c2, 3f64.powf(1.5) * c1, max_relative = 1e-10);
    }

    #[test]
    fn dirac_at_node_sweeps_to_itself() {
        let d = sphere(200);
        let y = d.nodes[17].clone();
        let h = harmonic_measure(&newton(), &y, &d, &[]).unwrap();
        assert!((h.swept_mass - 1.0).abs() < 1e-9);
        assert!((h.swept.weights()[17] - 1.0).abs() < 1e-9);
        let id = harmonic_mass_identity(&newton(), &y, &d).unwrap();
        assert!((id.eq_potential_at_y - 1.0).abs() < 1e-8);
    }

    #[test]
    fn exterior_dirac_mass_and_barycenter() {
        let d = sphere(500);
        let probes = probe_points(&d, 200, 1);
        let h = harmonic_measure(&newton(), &Point::from([2.0, 0.0, 0.0]), &d, &probes).unwrap();
        assert!((h.swept_mass - 0.5).abs() < 0.01);
        assert!(h.swept.barycenter().unwrap()[0] > 0.0);
        assert!(h.contraction_margin.unwrap() >= -1e-9);
        let far = harmonic_measure(&newton(), &Point::from([100.0, 0.0, 0.0]), &d, &[]).unwrap();
        assert!((far.swept_mass - 0.01).abs() < 0.001);
    }

    #[test]
    fn doubling_the_source_doubles_the_sweep() {
        let d = sphere(200);
        let one = DiscreteMeasure::dirac(
            Point::from([0.0, 3.0, 0.0]),
            1.0,
            Cell::Ball { radius: 0.1 },
        )
        .unwrap();
        let a = balayage(&newton(), &one, &d, &[]).unwrap();
        let b = balayage(&newton(), &one.scaled(2.0), &d, &[]).unwrap();
        for (x, y) in a.swept.weights().iter().zip(b.swept.weights()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn support_profile_of_empty_sweep() {
        let d = sphere(50);
        let zero = DiscreteMeasure::from_discretization(&d, vec![0.0; d.len()]).unwrap();
        let p = support_profile(&zero, &d).unwrap();
        assert!(p.empty);
        assert_eq!(p.boundary_mass_fraction, 0.0);
        let other = sphere(60);
        let m = DiscreteMeasure::from_discretization(&other, vec![1.0; other.len()]).unwrap();
        assert!(support_profile(&m, &d).is_err());
    }

    #[test]
    fn single_step_exhaustion_has_zero_distance() {
        let d = sphere(100);
        let t = exhaustion_run(
            &newton(),
            std::slice::from_ref(&d),
            &ExhaustionSource::Equilibrium,
            &[],
        )
        .unwrap();
        assert_eq!(t.steps[0].strong_distance, 0.0);
        let sub = d.select(|i, _| i % 2 == 0);
        let bad = exhaustion_run(
            &newton(),
            &[d.clone(), sub],
            &ExhaustionSource::Equilibrium,
            &[],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn additivity_on_three_exterior_diracs() {
        let d = sphere(300);
        let cell = Cell::Ball { radius: 0.01 };
        let parts: Vec<DiscreteMeasure> = [[2.0, 0.0, 0.0], [0.0, -3.0, 0.0], [0.0, 1.0, 2.5]]
            .iter()
            .map(|c| DiscreteMeasure::dirac(Point::from(*c), 1.0, cell).unwrap())
            .collect();
        let r = additivity_check(&newton(), &parts, &d).unwrap();
        assert!(r.all_interior);
        assert!(r.max_deviation < 1e-8, "{}", r.max_deviation);
        let on = DiscreteMeasure::dirac(d.nodes[5].clone(), 0.5, d.cells[5]).unwrap();
        let r = additivity_check(&newton(), &[on], &d).unwrap();
        assert!(r.pass_through[0].unwrap() < 1e-9);
        let r = additivity_check(&newton(), &[DiscreteMeasure::zero()], &d).unwrap();
        assert_eq!(r.max_deviation, 0.0);
    }

    #[test]
    fn probes_avoid_cells_and_are_reproducible() {
        let d = sphere(100);
        let a = probe_points(&d, 50, 9);
        assert_eq!(a, probe_points(&d, 50, 9));
        assert_eq!(a.len(), 50);
        for x in &a {
            assert!(d
                .nodes
                .iter()
                .zip(&d.cells)
                .all(|(p, c)| p.dist(x) > c.extent()));
            assert!(x
                .coords()
                .iter()
                .all(|c| c.abs() <= 3.0 * 3f64.sqrt() + 1e-9));
        }
    }
}
