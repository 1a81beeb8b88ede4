//! The Riesz kernel `κ_α(x, y) = |x − y|^{α−n}`, potentials and energies of
//! atomic measures, Gram matrices of discretizations and the Kelvin
//! transform.
//!
//! Point masses have infinite self-energy, so each atom carries a [`Cell`]
//! and its self-interaction is replaced by the average of the kernel over
//! that cell:
//!
//! * ball of radius r in ℝⁿ: `(n/α) r^{α−n}`
//! * disk of radius r (panels, needs `α > n − 2`): `2 r^{α−n} / (α − n + 2)`
//! * rod of length h and radius ϱ (only `α = 2, n = 3`): `(2/h) asinh(h / 2ϱ)`
//!
//! All three scale by `λ^{α−n}` under a homothety of ratio λ, which is what
//! makes the Kelvin transform an exact isometry on the discrete level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{invert_point, Cell, Discretization, Point, COINCIDENCE};
use crate::linalg::SymMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct KernelParams {
    alpha: f64,
    n: usize,
}

#[derive(Deserialize)]
struct RawParams {
    alpha: f64,
    n: usize,
}

impl TryFrom<RawParams> for KernelParams {
    type Error = LabError;

    fn try_from(raw: RawParams) -> Result<Self> {
        KernelParams::new(raw.alpha, raw.n)
    }
}

impl KernelParams {
    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(LabError::param(format!(
                "alpha must lie in (0, 2], got {alpha}"
            )));
        }
        if n < 3 {
            return Err(LabError::param(format!(
                "dimension must be at least 3, got {n}"
            )));
        }
        Ok(KernelParams { alpha, n })
    }

    /// `α = 2, n = 3`.
    pub fn newtonian() -> Self {
        KernelParams { alpha: 2.0, n: 3 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `α − n` (negative).
    pub fn exponent(&self) -> f64 {
        self.alpha - self.n as f64
    }

    /// `n − α`, the homogeneity degree of capacity.
    pub fn degree(&self) -> f64 {
        self.n as f64 - self.alpha
    }

    fn is_coulomb(&self) -> bool {
        self.exponent() == -1.0
    }

    /// Kernel as a function of the squared distance.
    #[inline]
    pub fn eval_sq(&self, d2: f64) -> f64 {
        if self.is_coulomb() {
            1.0 / d2.sqrt()
        } else {
            d2.powf(0.5 * self.exponent())
        }
    }

    /// `d^{α−n}`.
    #[inline]
    pub fn eval_dist(&self, d: f64) -> f64 {
        if self.is_coulomb() {
            1.0 / d
        } else {
            d.powf(self.exponent())
        }
    }

    fn check_point(&self, x: &Point) -> Result<()> {
        if x.dim() != self.n {
            return Err(LabError::param(format!(
                "point of dimension {} used with n = {}",
                x.dim(),
                self.n
            )));
        }
        Ok(())
    }
}

/// Cell-averaged self-kernel used on the diagonal.
pub fn self_kernel(params: &KernelParams, cell: &Cell) -> Result<f64> {
    let e = params.exponent();
    let n = params.dim() as f64;
    match *cell {
        Cell::Ball { radius } => Ok(n / params.alpha() * radius.powf(e)),
        Cell::Disk { radius } => {
            let p = e + 2.0;
            if p <= 0.0 {
                return Err(LabError::Unsupported(format!(
                    "surface panels need alpha > n - 2 (alpha = {}, n = {})",
                    params.alpha(),
                    params.dim()
                )));
            }
            Ok(2.0 * radius.powf(e) / p)
        }
        Cell::Rod { length, log_radius } => {
            if !params.is_coulomb() {
                return Err(LabError::Unsupported(
                    "rod cells are only defined for alpha = 2, n = 3".into(),
                ));
            }
            // asinh(u) with u = h/(2ϱ), evaluated from ln u
            let ln_u = (0.5 * length).ln() - log_radius;
            let asinh = if ln_u > 30.0 {
                ln_u + std::f64::consts::LN_2
            } else {
                ln_u.exp().asinh()
            };
            Ok(2.0 * asinh / length)
        }
    }
}

/// Kernel between a point at distance `d` from a node and that node's cell.
/// Beyond the cell extent this is the plain kernel; inside it interpolates
/// from the self-value at `d = 0` to the kernel at the extent, quadratically
/// for volume cells and linearly otherwise. For α = 2, n = 3 both are exact:
/// the potential of a uniform ball, and of a uniform disk averaged over its
/// orientations.
pub fn cell_kernel(params: &KernelParams, cell: &Cell, self_value: f64, d: f64) -> f64 {
    let r = cell.extent();
    if d >= r {
        return params.eval_dist(d);
    }
    let edge = params.eval_dist(r);
    let t = d / r;
    let drop = self_value - edge;
    match cell {
        Cell::Ball { .. } => self_value - drop * t * t,
        Cell::Disk { .. } | Cell::Rod { .. } => self_value - drop * t,
    }
}

/// `κ_α(x, y)`, `+∞` when the points coincide.
pub fn kernel_eval(params: &KernelParams, x: &Point, y: &Point) -> f64 {
    let d2 = x.dist_sq(y);
    if d2 == 0.0 {
        f64::INFINITY
    } else {
        params.eval_sq(d2)
    }
}

/// Finite positive measure with atoms at `points`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureDoc", into = "MeasureDoc")]
pub struct DiscreteMeasure {
    points: Vec<Point>,
    weights: Vec<f64>,
    cells: Vec<Cell>,
}

/// JSON layout `{points, weights, radii, cells?}`; without `cells` every atom
/// is a volume cell of the listed radius.
#[derive(Serialize, Deserialize)]
struct MeasureDoc {
    points: Vec<Point>,
    weights: Vec<f64>,
    radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cells: Option<Vec<Cell>>,
}

impl TryFrom<MeasureDoc> for DiscreteMeasure {
    type Error = LabError;

    fn try_from(doc: MeasureDoc) -> Result<Self> {
        let cells = match doc.cells {
            Some(c) => c,
            None => doc
                .radii
                .iter()
                .map(|&radius| Cell::Ball { radius })
                .collect(),
        };
        DiscreteMeasure::new(doc.points, doc.weights, cells)
    }
}

impl From<DiscreteMeasure> for MeasureDoc {
    fn from(m: DiscreteMeasure) -> Self {
        let radii = m.cells.iter().map(Cell::effective_radius).collect();
        let all_balls = m.cells.iter().all(|c| matches!(c, Cell::Ball { .. }));
        MeasureDoc {
            points: m.points,
            weights: m.weights,
            radii,
            cells: (!all_balls).then_some(m.cells),
        }
    }
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>, cells: Vec<Cell>) -> Result<Self> {
        if points.len() != weights.len() || points.len() != cells.len() {
            return Err(LabError::Mismatch(format!(
                "measure arrays differ in length: {} points, {} weights, {} cells",
                points.len(),
                weights.len(),
                cells.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(LabError::param(
                "measure weights must be finite and nonnegative",
            ));
        }
        if let Some(p) = points.first() {
            let n = p.dim();
            if points.iter().any(|q| q.dim() != n || !q.is_finite()) {
                return Err(LabError::param(
                    "measure points must be finite and share a dimension",
                ));
            }
        }
        Ok(DiscreteMeasure {
            points,
            weights,
            cells,
        })
    }

    pub fn zero() -> Self {
        DiscreteMeasure {
            points: Vec::new(),
            weights: Vec::new(),
            cells: Vec::new(),
        }
    }

    /// `mass · ε_x`. The cell only matters if the potential is evaluated at
    /// `x` itself.
    pub fn dirac(x: Point, mass: f64, cell: Cell) -> Result<Self> {
        DiscreteMeasure::new(vec![x], vec![mass], vec![cell])
    }

    pub fn from_discretization(disc: &Discretization, weights: Vec<f64>) -> Result<Self> {
        DiscreteMeasure::new(disc.nodes.clone(), weights, disc.cells.clone())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn effective_radii(&self) -> Vec<f64> {
        self.cells.iter().map(Cell::effective_radius).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().fold(0.0, |a, w| a + w)
    }

    pub fn scaled(&self, factor: f64) -> DiscreteMeasure {
        DiscreteMeasure {
            points: self.points.clone(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
            cells: self.cells.clone(),
        }
    }

    /// Sum of measures, atoms concatenated.
    pub fn sum(parts: &[DiscreteMeasure]) -> DiscreteMeasure {
        let mut out = DiscreteMeasure::zero();
        for p in parts {
            out.points.extend_from_slice(&p.points);
            out.weights.extend_from_slice(&p.weights);
            out.cells.extend_from_slice(&p.cells);
        }
        out
    }

    /// Centre of mass, `None` for the zero measure.
    pub fn barycenter(&self) -> Option<Point> {
        let m = self.total_mass();
        if !(m > 0.0) {
            return None;
        }
        let n = self.points[0].dim();
        let mut c = vec![0.0; n];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (ci, xi) in c.iter_mut().zip(p.coords()) {
                *ci += w * xi;
            }
        }
        Some(Point::new(c.into_iter().map(|v| v / m).collect()))
    }
}

/// `κ_αμ(x)`; atoms coinciding with `x` contribute their cell-averaged
/// self-value.
pub fn potential(params: &KernelParams, mu: &DiscreteMeasure, x: &Point) -> f64 {
    let mut s = 0.0;
    for ((p, w), cell) in mu.points.iter().zip(&mu.weights).zip(&mu.cells) {
        if *w == 0.0 {
            continue;
        }
        let d2 = x.dist_sq(p);
        let k = if d2 < COINCIDENCE * COINCIDENCE {
            self_kernel(params, cell).unwrap_or(f64::INFINITY)
        } else {
            params.eval_sq(d2)
        };
        s += w * k;
    }
    s
}

/// Energy inner product `κ_α(μ, ν)`.
pub fn mutual_energy(params: &KernelParams, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let terms: Vec<f64> = mu
        .points
        .par_iter()
        .zip(mu.weights.par_iter())
        .zip(mu.cells.par_iter())
        .map(|((p, w), cell)| {
            if *w == 0.0 {
                return 0.0;
            }
            let mut s = 0.0;
            for (q, v) in nu.points.iter().zip(&nu.weights) {
                let d2 = p.dist_sq(q);
                let k = if d2 < COINCIDENCE * COINCIDENCE {
                    self_kernel(params, cell).unwrap_or(f64::INFINITY)
                } else {
                    params.eval_sq(d2)
                };
                s += v * k;
            }
            w * s
        })
        .collect();
    terms.iter().fold(0.0, |a, t| a + t)
}

/// Gram matrix of the energy inner product on a node set: off-diagonal
/// entries are node-to-node kernel values, diagonal entries the cell
/// averages.
pub fn kernel_matrix(params: &KernelParams, disc: &Discretization) -> Result<SymMatrix> {
    gram_matrix(params, &disc.nodes, &disc.cells)
}

pub fn gram_matrix(params: &KernelParams, nodes: &[Point], cells: &[Cell]) -> Result<SymMatrix> {
    let n = nodes.len();
    if cells.len() != n {
        return Err(LabError::Mismatch("one cell per node required".into()));
    }
    for x in nodes {
        params.check_point(x)?;
    }
    let diag = cells
        .iter()
        .map(|c| self_kernel(params, c))
        .collect::<Result<Vec<f64>>>()?;
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &nodes[i];
            let mut row = Vec::with_capacity(n);
            for (j, xj) in nodes.iter().enumerate() {
                if i == j {
                    row.push(diag[i]);
                    continue;
                }
                let d2 = xi.dist_sq(xj);
                if d2 < COINCIDENCE * COINCIDENCE {
                    return Err(LabError::Assembly(format!(
                        "nodes {} and {} coincide",
                        i.min(j),
                        i.max(j)
                    )));
                }
                row.push(params.eval_sq(d2));
            }
            Ok(row)
        })
        .collect();
    let mut data = Vec::with_capacity(n * n);
    for r in rows {
        data.extend(r?);
    }
    Ok(SymMatrix::from_row_major(n, data))
}

/// Kelvin transform `𝒦_y ν`: atom `p` of weight `w` goes to `J_y(p)` with
/// weight `w |p − y|^{α−n}`; cells are carried along by the local homothety
/// of the inversion.
pub fn kelvin_transform(
    params: &KernelParams,
    y: &Point,
    nu: &DiscreteMeasure,
) -> Result<DiscreteMeasure> {
    params.check_point(y)?;
    let mut out = DiscreteMeasure::zero();
    for ((p, w), cell) in nu.points.iter().zip(&nu.weights).zip(&nu.cells) {
        params.check_point(p)?;
        let d = p.dist(y);
        if d < COINCIDENCE {
            return Err(LabError::domain("Kelvin transform needs nu({y}) = 0"));
        }
        out.points.push(invert_point(y, p)?);
        out.weights.push(w * params.eval_dist(d));
        out.cells.push(cell.inverted(d));
    }
    Ok(out)
}

/// Relative residuals of the Kelvin transform identities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KelvinResiduals {
    /// `𝒦_y 𝒦_y ν = ν`, atoms and weights.
    pub involution: f64,
    /// `(𝒦_y ν)(ℝⁿ) = κν(y)`.
    pub mass: f64,
    /// `κ(𝒦_y ν)(x*) = |x − y|^{n−α} κν(x)` at the probes.
    pub potential: f64,
    /// `κ(𝒦_y ν, 𝒦_y μ) = κ(ν, μ)` between measures without common atoms.
    pub energy: f64,
}

impl KelvinResiduals {
    pub fn max(&self) -> f64 {
        self.involution
            .max(self.mass)
            .max(self.potential)
            .max(self.energy)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Check the Kelvin identities for `ν`, `μ` and probe points, none of which
/// may sit at `y`.
pub fn kelvin_identities(
    params: &KernelParams,
    y: &Point,
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    probes: &[Point],
) -> Result<KelvinResiduals> {
    let nu_star = kelvin_transform(params, y, nu)?;
    let mu_star = kelvin_transform(params, y, mu)?;
    let back = kelvin_transform(params, y, &nu_star)?;
    let mut involution = 0.0f64;
    for ((p, q), (w, v)) in nu
        .points
        .iter()
        .zip(&back.points)
        .zip(nu.weights.iter().zip(&back.weights))
    {
        let scale = p.norm().max(y.norm()).max(1.0);
        involution = involution.max(p.dist(q) / scale).max(rel(*w, *v));
    }
    let mass = rel(nu_star.total_mass(), potential(params, nu, y));
    let mut pot = 0.0f64;
    for x in probes {
        let d = x.dist(y);
        if d < COINCIDENCE {
            return Err(LabError::domain("probe at the inversion centre"));
        }
        let lhs = potential(params, &nu_star, &invert_point(y, x)?);
        let rhs = d.powf(params.degree()) * potential(params, nu, x);
        pot = pot.max(rel(lhs, rhs));
    }
    let energy = rel(
        mutual_energy(params, &nu_star, &mu_star),
        mutual_energy(params, nu, mu),
    );
    Ok(KelvinResiduals {
        involution,
        mass,
        potential: pot,
        energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(c: [f64; 3]) -> Point {
        Point::from(c)
    }

    fn ball(r: f64) -> Cell {
        Cell::Ball { radius: r }
    }

    #[test]
    fn kernel_values() {
        let k = KernelParams::newtonian();
        assert_eq!(kernel_eval(&k, &p([0.0; 3]), &p([2.0, 0.0, 0.0])), 0.5);
        let k15 = KernelParams::new(1.5, 3).unwrap();
        assert_relative_eq!(
            kernel_eval(&k15, &p([0.0; 3]), &p([0.0, 4.0, 0.0])),
            0.125,
            max_relative = 1e-15
        );
        let (x, y) = (p([0.3, -1.0, 2.0]), p([1.1, 0.4, -0.7]));
        assert_eq!(kernel_eval(&k15, &x, &y), kernel_eval(&k15, &y, &x));
        assert!(kernel_eval(&k, &x, &x).is_infinite());
        assert!(KernelParams::new(0.0, 3).is_err());
        assert!(KernelParams::new(2.5, 3).is_err());
        assert!(KernelParams::new(1.0, 2).is_err());
    }

    #[test]
    fn potential_of_diracs() {
        let k = KernelParams::newtonian();
        let mu = DiscreteMeasure::dirac(p([2.0, 0.0, 0.0]), 1.0, ball(0.1)).unwrap();
        assert_eq!(potential(&k, &mu, &p([0.0; 3])), 0.5);
        let two = DiscreteMeasure::new(
            vec![p([1.0, 0.0, 0.0]), p([-1.0, 0.0, 0.0])],
            vec![1.0, 1.0],
            vec![ball(0.1); 2],
        )
        .unwrap();
        assert_eq!(potential(&k, &two, &p([0.0; 3])), 2.0);
    }

    #[test]
    fn self_kernel_closed_forms() {
        let k = KernelParams::newtonian();
        assert_relative_eq!(
            self_kernel(&k, &ball(0.1)).unwrap(),
            15.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            self_kernel(&k, &Cell::Disk { radius: 0.1 }).unwrap(),
            20.0,
            max_relative = 1e-14
        );
        let k1 = KernelParams::new(1.0, 3).unwrap();
        assert!(self_kernel(&k1, &Cell::Disk { radius: 0.1 }).is_err());
        assert!(self_kernel(
            &k1,
            &Cell::Rod {
                length: 1.0,
                log_radius: -3.0
            }
        )
        .is_err());
        // moderate aspect ratio: direct asinh
        let rod = Cell::Rod {
            length: 2.0,
            log_radius: (0.5f64).ln(),
        };
        assert_relative_eq!(
            self_kernel(&k, &rod).unwrap(),
            2f64.asinh(),
            max_relative = 1e-14
        );
        // extreme aspect ratio through the log branch
        let rod = Cell::Rod {
            length: 2.0,
            log_radius: -1e6,
        };
        assert_relative_eq!(
            self_kernel(&k, &rod).unwrap(),
            1e6 + 2f64.ln(),
            max_relative = 1e-12
        );
    }

    /// Monte Carlo averages of the kernel over an equal-volume ball and an
    /// equal-area disk, against the closed-form diagonal.
    #[test]
    fn self_kernel_matches_monte_carlo_cell_averages() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = 0.1;
        let samples = 400_000;
        let mut ball_sum = 0.0;
        let mut taken = 0;
        while taken < samples {
            let v: [f64; 3] = [
                rng.random_range(-r..r),
                rng.random_range(-r..r),
                rng.random_range(-r..r),
            ];
            let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if d <= r && d > 0.0 {
                ball_sum += 1.0 / d;
                taken += 1;
            }
        }
        let ball_avg = ball_sum / samples as f64;
        assert!((ball_avg - 15.0).abs() < 0.01 * 15.0, "{ball_avg}");
        let mut disk_sum = 0.0;
        taken = 0;
        while taken < samples {
            let (a, b): (f64, f64) = (rng.random_range(-r..r), rng.random_range(-r..r));
            let d = (a * a + b * b).sqrt();
            if d <= r && d > 0.0 {
                disk_sum += 1.0 / d;
                taken += 1;
            }
        }
        let disk_avg = disk_sum / samples as f64;
        assert!((disk_avg - 20.0).abs() < 0.01 * 20.0, "{disk_avg}");
    }

    #[test]
    fn kernel_matrix_entries_and_duplicates() {
        let k = KernelParams::newtonian();
        let cloud = crate::geometry::ShapeSpec::PointCloud {
            points: vec![p([0.0; 3]), p([2.0, 0.0, 0.0])],
            cell_radii: vec![0.1, 0.1],
        };
        let d = crate::geometry::discretize(&cloud, 1).unwrap();
        let m = kernel_matrix(&k, &d).unwrap();
        assert_eq!(m.get(0, 1), 0.5);
        assert_eq!(m.get(1, 0), 0.5);
        assert_relative_eq!(m.get(0, 0), 15.0, max_relative = 1e-14);
        let dup = crate::geometry::ShapeSpec::PointCloud {
            points: vec![p([1.0; 3]), p([1.0; 3])],
            cell_radii: vec![0.1, 0.1],
        };
        let d = crate::geometry::discretize(&dup, 1).unwrap();
        assert!(matches!(kernel_matrix(&k, &d), Err(LabError::Assembly(_))));
    }

    #[test]
    fn mutual_energy_examples() {
        let k = KernelParams::newtonian();
        let a = DiscreteMeasure::dirac(p([0.0; 3]), 1.0, ball(0.1)).unwrap();
        let b = DiscreteMeasure::dirac(p([2.0, 0.0, 0.0]), 1.0, ball(0.1)).unwrap();
        assert_eq!(mutual_energy(&k, &a, &b), 0.5);
        assert_eq!(mutual_energy(&k, &a, &b), mutual_energy(&k, &b, &a));
    }

    #[test]
    fn kelvin_examples() {
        let k = KernelParams::newtonian();
        let nu = DiscreteMeasure::dirac(p([2.0, 0.0, 0.0]), 1.0, ball(0.1)).unwrap();
        let star = kelvin_transform(&k, &Point::origin(3), &nu).unwrap();
        assert_eq!(star.points()[0], p([0.5, 0.0, 0.0]));
        assert_eq!(star.weights()[0], 0.5);
        assert_eq!(potential(&k, &star, &Point::origin(3)), nu.total_mass());
        let at_y = DiscreteMeasure::dirac(Point::origin(3), 1.0, ball(0.1)).unwrap();
        assert!(matches!(
            kelvin_transform(&k, &Point::origin(3), &at_y),
            Err(LabError::Domain(_))
        ));
    }

    #[test]
    fn kelvin_energy_identity_with_self_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for alpha in [2.0, 1.5, 0.7] {
            let k = KernelParams::new(alpha, 3).unwrap();
            let pts: Vec<Point> = (0..20)
                .map(|_| Point::new((0..3).map(|_| rng.random_range(-3.0..3.0)).collect()))
                .collect();
            let w: Vec<f64> = (0..20).map(|_| rng.random_range(0.1..2.0)).collect();
            let cells = vec![ball(0.05); 20];
            let nu = DiscreteMeasure::new(pts, w, cells).unwrap();
            let y = Point::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            let star = kelvin_transform(&k, &y, &nu).unwrap();
            let e = mutual_energy(&k, &nu, &nu);
            let es = mutual_energy(&k, &star, &star);
            assert_relative_eq!(e, es, max_relative = 1e-10);
        }
    }

    #[test]
    fn kelvin_identity_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let k = KernelParams::new(1.3, 4).unwrap();
        let mut random = |m: usize| {
            let pts: Vec<Point> = (0..m)
                .map(|_| Point::new((0..4).map(|_| rng.random_range(-2.0..2.0)).collect()))
                .collect();
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            (
                pts.clone(),
                DiscreteMeasure::new(pts, w, vec![ball(0.01); m]).unwrap(),
            )
        };
        let (_, nu) = random(20);
        let (probes, mu) = random(20);
        let y = Point::new(vec![0.1, -0.2, 0.3, 0.05]);
        let r = kelvin_identities(&k, &y, &nu, &mu, &probes).unwrap();
        assert!(r.max() < 1e-12, "{r:?}");
        assert!(kelvin_identities(&k, &y, &nu, &mu, std::slice::from_ref(&y)).is_err());
    }

    #[test]
    fn cell_kernel_matches_newtonian_averages() {
        let k = KernelParams::newtonian();
        let r = 0.3;
        let b = ball(r);
        let sb = self_kernel(&k, &b).unwrap();
        for d in [0.0, 0.1, 0.2, 0.3, 0.5] {
            // uniform ball potential
            let exact = if d < r {
                (3.0 * r * r - d * d) / (2.0 * r * r * r)
            } else {
                1.0 / d
            };
            assert_relative_eq!(cell_kernel(&k, &b, sb, d), exact, max_relative = 1e-14);
        }
        // orientation-averaged disk: shells of radius s with density 2s/r²,
        // each contributing 1/max(d, s)
        let disk = Cell::Disk { radius: r };
        let sd = self_kernel(&k, &disk).unwrap();
        for d in [0.0f64, 0.05, 0.15, 0.29] {
            let m = 20000;
            let h = r / m as f64;
            let avg: f64 = (0..m)
                .map(|i| {
                    let s = (i as f64 + 0.5) * h;
                    2.0 * s / (r * r) / d.max(s) * h
                })
                .sum();
            assert_relative_eq!(cell_kernel(&k, &disk, sd, d), avg, max_relative = 1e-6);
        }
    }

    #[test]
    fn measure_json_layout() {
        let m =
            DiscreteMeasure::new(vec![p([1.0, 2.0, 3.0])], vec![0.25], vec![ball(0.5)]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["weights"][0], 0.25);
        assert_eq!(v["radii"][0], 0.5);
        assert!(v.get("cells").is_none());
        let back: DiscreteMeasure = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
        let bad =
            serde_json::json!({"points": [[0.0, 0.0, 0.0]], "weights": [-1.0], "radii": [0.1]});
        assert!(serde_json::from_value::<DiscreteMeasure>(bad).is_err());
    }
}
