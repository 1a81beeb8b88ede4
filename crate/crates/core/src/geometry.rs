//! Shapes in ℝⁿ, their discretization into quadrature cells, the inversion
//! `J_y` in the unit sphere about `y`, and shell decompositions around a
//! centre.
//!
//! Every discretization is a list of nodes, each carrying a [`Cell`] that
//! records how the node's self-interaction is regularized: a volume cell
//! (equal-volume ball), a surface panel (equal-area disk) or a slender rod
//! (thin-cylinder surrogate for bodies whose cross-section is far below the
//! slice spacing).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Two nodes closer than this are treated as the same point.
pub const COINCIDENCE: f64 = 1e-14;

/// A point of ℝⁿ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn origin(n: usize) -> Self {
        Point(vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn dist_sq(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, lambda: f64) -> Point {
        Point(self.0.iter().map(|c| c * lambda).collect())
    }

    pub fn add(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

impl From<[f64; 3]> for Point {
    fn from(c: [f64; 3]) -> Self {
        Point(c.to_vec())
    }
}

impl From<Vec<f64>> for Point {
    fn from(c: Vec<f64>) -> Self {
        Point(c)
    }
}

impl std::ops::Index<usize> for Point {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Volume of the unit ball in ℝⁿ.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * PI / n as f64,
    }
}

/// Regularization carrier of one quadrature node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cell {
    /// Volume cell, represented by the ball of equal volume.
    Ball { radius: f64 },
    /// Surface panel, represented by the disk of equal area.
    Disk { radius: f64 },
    /// Slender cylinder segment centred on the node. The radius is stored as
    /// its logarithm since exponentially thin bodies underflow `f64`.
    Rod { length: f64, log_radius: f64 },
}

impl Cell {
    pub fn ball_with_volume(volume: f64, n: usize) -> Cell {
        Cell::Ball {
            radius: (volume / unit_ball_volume(n)).powf(1.0 / n as f64),
        }
    }

    pub fn disk_with_area(area: f64) -> Cell {
        Cell::Disk {
            radius: (area / PI).sqrt(),
        }
    }

    pub fn effective_radius(&self) -> f64 {
        match *self {
            Cell::Ball { radius } | Cell::Disk { radius } => radius,
            Cell::Rod { log_radius, .. } => log_radius.exp(),
        }
    }

    /// Radius of a ball around the node that contains the whole cell.
    pub fn extent(&self) -> f64 {
        match *self {
            Cell::Ball { radius } | Cell::Disk { radius } => radius,
            Cell::Rod { length, log_radius } => (0.5 * length).max(log_radius.exp()),
        }
    }

    /// Cell after a homothety of ratio `lambda`.
    pub fn scaled(&self, lambda: f64) -> Cell {
        match *self {
            Cell::Ball { radius } => Cell::Ball {
                radius: radius * lambda,
            },
            Cell::Disk { radius } => Cell::Disk {
                radius: radius * lambda,
            },
            Cell::Rod { length, log_radius } => Cell::Rod {
                length: length * lambda,
                log_radius: log_radius + lambda.ln(),
            },
        }
    }

    /// Image of a cell at distance `dist` from the inversion centre: the
    /// inversion is locally a homothety of ratio `dist⁻²`.
    pub fn inverted(&self, dist: f64) -> Cell {
        self.scaled(1.0 / (dist * dist))
    }

    /// Power of length in the cell measure (volume, area or volume).
    pub fn measure_dimension(&self, n: usize) -> i32 {
        match self {
            Cell::Ball { .. } | Cell::Rod { .. } => n as i32,
            Cell::Disk { .. } => n as i32 - 1,
        }
    }
}

/// Bodies of revolution about the x₁-axis, `x₂² + x₃² ≤ ϱ(x₁)²`, with
/// `ϱ₁ = x₁^{−s}` (family 1) and `ϱ = exp(−x₁^s)` (families 2 and 3).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationBody {
    pub family: u8,
    pub s: f64,
    pub x1_lo: f64,
    pub x1_hi: f64,
    /// Slices thinner than this are always represented by rods.
    #[serde(default = "default_radius_floor")]
    pub radius_floor: f64,
}

fn default_radius_floor() -> f64 {
    1e-8
}

impl RotationBody {
    pub fn new(family: u8, s: f64, x1_lo: f64, x1_hi: f64) -> Result<Self> {
        let body = RotationBody {
            family,
            s,
            x1_lo,
            x1_hi,
            radius_floor: default_radius_floor(),
        };
        body.validate()?;
        Ok(body)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.s;
        match self.family {
            1 if s >= 0.0 => {}
            2 if s > 0.0 && s <= 1.0 => {}
            3 if s > 1.0 => {}
            1..=3 => {
                return Err(LabError::param(format!(
                    "s = {s} out of range for rotation family {}",
                    self.family
                )))
            }
            f => return Err(LabError::param(format!("unknown rotation family {f}"))),
        }
        if !s.is_finite()
            || !(self.x1_lo >= 0.0 && self.x1_lo < self.x1_hi)
            || !self.x1_hi.is_finite()
        {
            return Err(LabError::param(format!(
                "need 0 <= x1_lo < x1_hi, got [{}, {}]",
                self.x1_lo, self.x1_hi
            )));
        }
        if self.family == 1 && s > 0.0 && self.x1_lo == 0.0 {
            return Err(LabError::param(
                "family 1 with s > 0 has unbounded cross-section at x1 = 0; use x1_lo > 0",
            ));
        }
        if !(self.radius_floor > 0.0) {
            return Err(LabError::param("radius_floor must be positive"));
        }
        Ok(())
    }

    /// `ln ϱ(x₁)`.
    pub fn log_radius(&self, x1: f64) -> f64 {
        match self.family {
            1 => {
                if self.s == 0.0 {
                    0.0
                } else {
                    -self.s * x1.ln()
                }
            }
            _ => -x1.powf(self.s),
        }
    }

    pub fn radius(&self, x1: f64) -> f64 {
        self.log_radius(x1).exp()
    }

    pub fn contains(&self, x: &Point) -> bool {
        let c = x.coords();
        if c[0] < self.x1_lo || c[0] > self.x1_hi {
            return false;
        }
        let r2 = c[1] * c[1] + c[2] * c[2];
        r2 == 0.0 || 0.5 * r2.ln() <= self.log_radius(c[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShellDirection {
    /// `q > 1`, shells `q^k ≤ |x−y| < q^{k+1}`.
    Outer,
    /// `0 < q < 1`, shells `q^{k+1} < |x−y| ≤ q^k`.
    Inner,
}

/// One shell `{x : |x − center| in the k-th annulus of ratio q}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub center: Point,
    pub q: f64,
    pub k: i32,
    pub direction: ShellDirection,
}

fn check_ratio(q: f64, direction: ShellDirection) -> Result<()> {
    let ok = match direction {
        ShellDirection::Outer => q > 1.0 && q.is_finite(),
        ShellDirection::Inner => q > 0.0 && q < 1.0,
    };
    if ok {
        Ok(())
    } else {
        Err(LabError::param(format!(
            "shell ratio q = {q} is inconsistent with {direction:?} shells"
        )))
    }
}

impl Annulus {
    pub fn new(center: Point, q: f64, k: i32, direction: ShellDirection) -> Result<Self> {
        check_ratio(q, direction)?;
        Ok(Annulus {
            center,
            q,
            k,
            direction,
        })
    }

    /// `(inner, outer)` radii.
    pub fn radii(&self) -> (f64, f64) {
        let a = self.q.powi(self.k);
        let b = self.q.powi(self.k + 1);
        (a.min(b), a.max(b))
    }

    pub fn contains_distance(&self, d: f64) -> bool {
        let (lo, hi) = self.radii();
        match self.direction {
            ShellDirection::Outer => lo <= d && d < hi,
            ShellDirection::Inner => lo < d && d <= hi,
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.contains_distance(x.dist(&self.center))
    }

    /// Preimage under `J_center`: inner shells of ratio q correspond to outer
    /// shells of ratio 1/q with the same index, and vice versa.
    pub fn inverted(&self) -> Annulus {
        Annulus {
            center: self.center.clone(),
            q: 1.0 / self.q,
            k: self.k,
            direction: match self.direction {
                ShellDirection::Outer => ShellDirection::Inner,
                ShellDirection::Inner => ShellDirection::Outer,
            },
        }
    }

    fn signed_distance(&self, x: &Point) -> f64 {
        let d = x.dist(&self.center);
        let (lo, hi) = self.radii();
        (lo - d).max(d - hi)
    }
}

/// Index of the shell containing a point at distance `d > 0` from the centre.
pub fn shell_index(d: f64, q: f64, direction: ShellDirection) -> Result<i32> {
    check_ratio(q, direction)?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(LabError::domain(format!("distance {d} has no shell")));
    }
    let mut k = (d.ln() / q.ln()).floor() as i32;
    match direction {
        ShellDirection::Outer => {
            while q.powi(k) > d {
                k -= 1;
            }
            while q.powi(k + 1) <= d {
                k += 1;
            }
        }
        ShellDirection::Inner => {
            while d > q.powi(k) {
                k -= 1;
            }
            while q.powi(k + 1) >= d {
                k += 1;
            }
        }
    }
    Ok(k)
}

/// Compact sets of ℝⁿ and the derived sets the lab works with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ShapeSpec {
    Ball {
        center: Point,
        radius: f64,
    },
    Sphere {
        center: Point,
        radius: f64,
    },
    Box {
        lo: Point,
        hi: Point,
    },
    RotationBody(RotationBody),
    Union {
        parts: Vec<ShapeSpec>,
    },
    PointCloud {
        points: Vec<Point>,
        cell_radii: Vec<f64>,
    },
    /// Intersection of `base` with one shell.
    Restricted {
        base: Box<ShapeSpec>,
        shell: Annulus,
    },
    /// `J_center(base ∖ {center})`.
    Inverted {
        base: Box<ShapeSpec>,
        center: Point,
    },
}

impl ShapeSpec {
    pub fn ball(center: impl Into<Point>, radius: f64) -> Self {
        ShapeSpec::Ball {
            center: center.into(),
            radius,
        }
    }

    pub fn sphere(center: impl Into<Point>, radius: f64) -> Self {
        ShapeSpec::Sphere {
            center: center.into(),
            radius,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            ShapeSpec::Ball { center, .. } | ShapeSpec::Sphere { center, .. } => Some(center.dim()),
            ShapeSpec::Box { lo, .. } => Some(lo.dim()),
            ShapeSpec::RotationBody(_) => Some(3),
            ShapeSpec::Union { parts } => parts.first().and_then(|p| p.dim()),
            ShapeSpec::PointCloud { points, .. } => points.first().map(Point::dim),
            ShapeSpec::Restricted { base, .. } | ShapeSpec::Inverted { base, .. } => base.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |p: &Point| {
            if p.is_finite() {
                Ok(())
            } else {
                Err(LabError::param("non-finite coordinate"))
            }
        };
        match self {
            ShapeSpec::Ball { center, radius } | ShapeSpec::Sphere { center, radius } => {
                finite(center)?;
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(LabError::param(format!(
                        "radius must be positive, got {radius}"
                    )));
                }
                if matches!(self, ShapeSpec::Sphere { .. }) && center.dim() != 3 {
                    return Err(LabError::Unsupported(
                        "sphere panels are only available in n = 3".into(),
                    ));
                }
            }
            ShapeSpec::Box { lo, hi } => {
                finite(lo)?;
                finite(hi)?;
                if lo.dim() != hi.dim() || lo.coords().iter().zip(hi.coords()).any(|(a, b)| a >= b)
                {
                    return Err(LabError::param("box needs lo < hi in every coordinate"));
                }
            }
            ShapeSpec::RotationBody(body) => body.validate()?,
            ShapeSpec::Union { parts } => {
                if parts.is_empty() {
                    return Err(LabError::param("union must have at least one part"));
                }
                for p in parts {
                    p.validate()?;
                }
                let d = parts[0].dim();
                if parts.iter().any(|p| p.dim() != d) {
                    return Err(LabError::param("union parts differ in dimension"));
                }
            }
            ShapeSpec::PointCloud { points, cell_radii } => {
                if points.len() != cell_radii.len() {
                    return Err(LabError::param("point cloud needs one radius per point"));
                }
                for p in points {
                    finite(p)?;
                }
                if cell_radii.iter().any(|r| !(*r > 0.0)) {
                    return Err(LabError::param("cell radii must be positive"));
                }
            }
            ShapeSpec::Restricted { base, shell } => {
                base.validate()?;
                check_ratio(shell.q, shell.direction)?;
            }
            ShapeSpec::Inverted { base, center } => {
                base.validate()?;
                finite(center)?;
            }
        }
        Ok(())
    }

    /// Membership for solid sets; surfaces and point clouds contain nothing.
    pub fn contains(&self, x: &Point) -> bool {
        match self {
            ShapeSpec::Ball { center, radius } => x.dist(center) <= *radius,
            ShapeSpec::Box { lo, hi } => x
                .coords()
                .iter()
                .zip(lo.coords().iter().zip(hi.coords()))
                .all(|(c, (a, b))| a <= c && c <= b),
            ShapeSpec::RotationBody(body) => body.contains(x),
            ShapeSpec::Union { parts } => parts.iter().any(|p| p.contains(x)),
            ShapeSpec::Restricted { base, shell } => shell.contains(x) && base.contains(x),
            ShapeSpec::Inverted { base, center } => {
                x.dist(center) > 0.0 && base.contains(&invert_point_unchecked(center, x))
            }
            ShapeSpec::Sphere { .. } | ShapeSpec::PointCloud { .. } => false,
        }
    }

    /// Membership in the shape or one of its bounded holes, such as the
    /// inside of a sphere.
    pub fn encloses(&self, x: &Point) -> bool {
        match self {
            ShapeSpec::Sphere { center, radius } => x.dist(center) <= *radius,
            ShapeSpec::Union { parts } => parts.iter().any(|p| p.encloses(x)),
            ShapeSpec::Inverted { base, center } => {
                x.dist(center) > 0.0 && base.encloses(&invert_point_unchecked(center, x))
            }
            _ => self.contains(x),
        }
    }

    fn is_solid(&self) -> bool {
        match self {
            ShapeSpec::Ball { .. } | ShapeSpec::Box { .. } | ShapeSpec::RotationBody(_) => true,
            ShapeSpec::Union { parts } => parts.iter().all(ShapeSpec::is_solid),
            ShapeSpec::Restricted { base, .. } | ShapeSpec::Inverted { base, .. } => {
                base.is_solid()
            }
            ShapeSpec::Sphere { .. } | ShapeSpec::PointCloud { .. } => false,
        }
    }
}

/// Quadrature representation of a set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub nodes: Vec<Point>,
    pub cells: Vec<Cell>,
    pub cell_measures: Vec<f64>,
    pub boundary_flags: Vec<bool>,
    pub parent: ShapeSpec,
}

impl Discretization {
    pub fn empty(parent: ShapeSpec) -> Self {
        Discretization {
            nodes: Vec::new(),
            cells: Vec::new(),
            cell_measures: Vec::new(),
            boundary_flags: Vec::new(),
            parent,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_measure(&self) -> f64 {
        self.cell_measures.iter().fold(0.0, |a, m| a + m)
    }

    pub fn effective_radii(&self) -> Vec<f64> {
        self.cells.iter().map(Cell::effective_radius).collect()
    }

    fn push(&mut self, node: Point, cell: Cell, measure: f64, boundary: bool) {
        self.nodes.push(node);
        self.cells.push(cell);
        self.cell_measures.push(measure.max(f64::MIN_POSITIVE));
        self.boundary_flags.push(boundary);
    }

    /// Sub-discretization keeping the nodes accepted by `keep`, in order.
    pub fn select(&self, mut keep: impl FnMut(usize, &Point) -> bool) -> Discretization {
        let mut out = Discretization::empty(self.parent.clone());
        for i in 0..self.len() {
            if keep(i, &self.nodes[i]) {
                out.push(
                    self.nodes[i].clone(),
                    self.cells[i],
                    self.cell_measures[i],
                    self.boundary_flags[i],
                );
            }
        }
        out
    }

    /// Concatenation of node sets, parents joined into a union.
    pub fn concat(parts: &[Discretization]) -> Discretization {
        let parent = ShapeSpec::Union {
            parts: parts.iter().map(|d| d.parent.clone()).collect(),
        };
        let mut out = Discretization::empty(parent);
        for d in parts {
            for i in 0..d.len() {
                out.push(
                    d.nodes[i].clone(),
                    d.cells[i],
                    d.cell_measures[i],
                    d.boundary_flags[i],
                );
            }
        }
        out
    }

    /// Image under `x ↦ center + λ(x − center)` with `center = 0`.
    pub fn scaled(&self, lambda: f64) -> Discretization {
        let n = self.nodes.first().map(Point::dim).unwrap_or(0);
        let mut out = Discretization::empty(self.parent.clone());
        for i in 0..self.len() {
            let cell = self.cells[i];
            out.push(
                self.nodes[i].scaled(lambda),
                cell.scaled(lambda),
                self.cell_measures[i] * lambda.powi(cell.measure_dimension(n)),
                self.boundary_flags[i],
            );
        }
        out
    }
}

/// `J_y(x)`: the point on the ray from `y` through `x` with `|x−y|·|x*−y| = 1`.
pub fn invert_point(y: &Point, x: &Point) -> Result<Point> {
    if y.dim() != x.dim() {
        return Err(LabError::param("dimension mismatch in inversion"));
    }
    if x.dist_sq(y) == 0.0 {
        return Err(LabError::domain("x = y is mapped to the point at infinity"));
    }
    Ok(invert_point_unchecked(y, x))
}

fn invert_point_unchecked(y: &Point, x: &Point) -> Point {
    let d2 = x.dist_sq(y);
    Point(
        x.0.iter()
            .zip(&y.0)
            .map(|(xi, yi)| yi + (xi - yi) / d2)
            .collect(),
    )
}

/// Discretize a shape. The meaning of `resolution` depends on the variant:
/// cells across the diameter (ball), cells along the longest edge (box),
/// panel count (sphere), slices along x₁ (rotation body). Point clouds
/// ignore it.
pub fn discretize(shape: &ShapeSpec, resolution: usize) -> Result<Discretization> {
    if resolution == 0 {
        return Err(LabError::param("resolution must be at least 1"));
    }
    shape.validate()?;
    let mut out = Discretization::empty(shape.clone());
    match shape {
        ShapeSpec::Ball { center, radius } => {
            let lo: Vec<f64> = center.coords().iter().map(|c| c - radius).collect();
            let hi: Vec<f64> = center.coords().iter().map(|c| c + radius).collect();
            let sdf = |x: &Point| x.dist(center) - radius;
            grid_fill(&mut out, &lo, &hi, resolution, &sdf);
        }
        ShapeSpec::Box { lo, hi } => {
            let sdf = |x: &Point| box_sdf(lo, hi, x);
            grid_fill(&mut out, lo.coords(), hi.coords(), resolution, &sdf);
        }
        ShapeSpec::Sphere { center, radius } => {
            fibonacci_sphere(&mut out, center, *radius, resolution)
        }
        ShapeSpec::RotationBody(body) => slice_rotation_body(
            &mut out,
            body,
            &[(body.x1_lo, body.x1_hi)],
            resolution,
            |_| true,
        ),
        ShapeSpec::Union { parts } => {
            let mut accepted: Vec<&ShapeSpec> = Vec::new();
            for part in parts {
                let d = discretize(part, resolution)?;
                for i in 0..d.len() {
                    if accepted.iter().any(|p| p.contains(&d.nodes[i])) {
                        continue;
                    }
                    out.push(
                        d.nodes[i].clone(),
                        d.cells[i],
                        d.cell_measures[i],
                        d.boundary_flags[i],
                    );
                }
                if part.is_solid() {
                    accepted.push(part);
                }
            }
        }
        ShapeSpec::PointCloud { points, cell_radii } => {
            for (p, &r) in points.iter().zip(cell_radii) {
                let n = p.dim();
                out.push(
                    p.clone(),
                    Cell::Ball { radius: r },
                    unit_ball_volume(n) * r.powi(n as i32),
                    true,
                );
            }
        }
        ShapeSpec::Restricted { base, shell } => {
            let d = discretize_restricted(base, shell, resolution)?;
            out.nodes = d.nodes;
            out.cells = d.cells;
            out.cell_measures = d.cell_measures;
            out.boundary_flags = d.boundary_flags;
        }
        ShapeSpec::Inverted { base, center } => {
            let d = discretize(base, resolution)?;
            let inv = invert_discretization(&d, center)?;
            out.nodes = inv.nodes;
            out.cells = inv.cells;
            out.cell_measures = inv.cell_measures;
            out.boundary_flags = inv.boundary_flags;
        }
    }
    Ok(out)
}

fn discretize_restricted(
    base: &ShapeSpec,
    shell: &Annulus,
    resolution: usize,
) -> Result<Discretization> {
    let mut out = Discretization::empty(ShapeSpec::Restricted {
        base: Box::new(base.clone()),
        shell: shell.clone(),
    });
    let (r_in, r_out) = shell.radii();
    match base {
        ShapeSpec::Ball { center, radius } => {
            let (lo, hi) = clip_box(
                center.coords().iter().map(|c| c - radius),
                center.coords().iter().map(|c| c + radius),
                shell,
            );
            if lo.iter().zip(&hi).all(|(a, b)| a < b) {
                let sdf = |x: &Point| (x.dist(center) - radius).max(shell.signed_distance(x));
                grid_fill(&mut out, &lo, &hi, resolution, &sdf);
            }
        }
        ShapeSpec::Box { lo: blo, hi: bhi } => {
            let (lo, hi) = clip_box(
                blo.coords().iter().copied(),
                bhi.coords().iter().copied(),
                shell,
            );
            if lo.iter().zip(&hi).all(|(a, b)| a < b) {
                let sdf = |x: &Point| box_sdf(blo, bhi, x).max(shell.signed_distance(x));
                grid_fill(&mut out, &lo, &hi, resolution, &sdf);
            }
        }
        ShapeSpec::RotationBody(body) => {
            let c = shell.center.coords();
            if c.len() != 3 {
                return Err(LabError::param("rotation bodies live in n = 3"));
            }
            let a = body.x1_lo.max(c[0] - r_out);
            let b = body.x1_hi.min(c[0] + r_out);
            let mut intervals = Vec::new();
            if a < b {
                let on_axis = c[1] == 0.0 && c[2] == 0.0;
                // ϱ is nonincreasing, so ϱ(a) bounds the cross-section on [a, b]
                let rho_max = body.radius(a.max(f64::MIN_POSITIVE)).min(f64::MAX);
                let gap = if on_axis {
                    (r_in * r_in - rho_max * rho_max).max(0.0).sqrt()
                } else {
                    0.0
                };
                let (g_lo, g_hi) = (c[0] - gap, c[0] + gap);
                if a < g_lo.min(b) {
                    intervals.push((a, g_lo.min(b)));
                }
                if g_hi.max(a) < b {
                    intervals.push((g_hi.max(a), b));
                }
            }
            slice_rotation_body(&mut out, body, &intervals, resolution, |x| {
                shell.contains(x)
            });
        }
        ShapeSpec::Union { parts } => {
            let restricted = ShapeSpec::Union {
                parts: parts
                    .iter()
                    .map(|p| ShapeSpec::Restricted {
                        base: Box::new(p.clone()),
                        shell: shell.clone(),
                    })
                    .collect(),
            };
            let d = discretize(&restricted, resolution)?;
            out.nodes = d.nodes;
            out.cells = d.cells;
            out.cell_measures = d.cell_measures;
            out.boundary_flags = d.boundary_flags;
        }
        ShapeSpec::Inverted {
            base: inner,
            center,
        } if *center == shell.center => {
            let pre = ShapeSpec::Inverted {
                base: Box::new(ShapeSpec::Restricted {
                    base: inner.clone(),
                    shell: shell.inverted(),
                }),
                center: center.clone(),
            };
            let d = discretize(&pre, resolution)?;
            // the preimage shell maps exactly onto this one; filtering only
            // guards against rounding at the shell radii
            let d = d.select(|_, x| shell.contains(x));
            out.nodes = d.nodes;
            out.cells = d.cells;
            out.cell_measures = d.cell_measures;
            out.boundary_flags = d.boundary_flags;
        }
        _ => {
            let d = discretize(base, resolution)?;
            let d = d.select(|_, x| shell.contains(x));
            out.nodes = d.nodes;
            out.cells = d.cells;
            out.cell_measures = d.cell_measures;
            out.boundary_flags = d.boundary_flags;
        }
    }
    Ok(out)
}

fn clip_box(
    lo: impl Iterator<Item = f64>,
    hi: impl Iterator<Item = f64>,
    shell: &Annulus,
) -> (Vec<f64>, Vec<f64>) {
    let (_, r_out) = shell.radii();
    let c = shell.center.coords();
    let lo: Vec<f64> = lo.zip(c).map(|(a, ci)| a.max(ci - r_out)).collect();
    let hi: Vec<f64> = hi.zip(c).map(|(b, ci)| b.min(ci + r_out)).collect();
    (lo, hi)
}

fn box_sdf(lo: &Point, hi: &Point, x: &Point) -> f64 {
    let mut outside = 0.0;
    let mut inside = f64::NEG_INFINITY;
    for ((c, a), b) in x.coords().iter().zip(lo.coords()).zip(hi.coords()) {
        let d = (a - c).max(c - b);
        if d > 0.0 {
            outside += d * d;
        }
        inside = inside.max(d);
    }
    if outside > 0.0 {
        outside.sqrt()
    } else {
        inside
    }
}

/// Midpoint-rule grid of cubes over the box `[lo, hi]`, keeping cells whose
/// centre satisfies `sdf ≤ 0`. A cell is flagged as boundary when the cube
/// is not certified to lie inside the set.
fn grid_fill(
    out: &mut Discretization,
    lo: &[f64],
    hi: &[f64],
    resolution: usize,
    sdf: &dyn Fn(&Point) -> f64,
) {
    let n = lo.len();
    let longest = lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0f64, f64::max);
    if !(longest > 0.0) {
        return;
    }
    let h = longest / resolution as f64;
    let counts: Vec<usize> = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (((b - a) / h) - 1e-9).ceil().max(1.0) as usize)
        .collect();
    let starts: Vec<f64> = lo
        .iter()
        .zip(hi)
        .zip(&counts)
        .map(|((a, b), &m)| 0.5 * (a + b) - 0.5 * m as f64 * h)
        .collect();
    let volume = h.powi(n as i32);
    let cell = Cell::ball_with_volume(volume, n);
    let half_diag = 0.5 * h * (n as f64).sqrt();
    let mut idx = vec![0usize; n];
    loop {
        let x = Point(
            (0..n)
                .map(|d| starts[d] + (idx[d] as f64 + 0.5) * h)
                .collect(),
        );
        let s = sdf(&x);
        if s <= 0.0 {
            out.push(x, cell, volume, s > -half_diag);
        }
        let mut d = n;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Fibonacci lattice of `count` equal-area panels.
fn fibonacci_sphere(out: &mut Discretization, center: &Point, radius: f64, count: usize) {
    let golden = PI * (3.0 - 5f64.sqrt());
    let area = 4.0 * PI * radius * radius / count as f64;
    let cell = Cell::disk_with_area(area);
    for i in 0..count {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = golden * i as f64;
        let p = Point(vec![
            center[0] + radius * r * phi.cos(),
            center[1] + radius * r * phi.sin(),
            center[2] + radius * z,
        ]);
        out.push(p, cell, area, true);
    }
}

/// Sphere mesh in polar rings about `axis`, refined towards the pole
/// opposite to it. The ring boundaries include every `θ_k = π(1 − 2^{−k})`,
/// `k = 1..levels`, so each cap `{θ ≤ θ_k}` is an exact union of panels.
/// Away from the pole the panels have area about `4πr²/panels`; in the band
/// `[θ_k, θ_{k+1}]` their size is capped at half the band width.
pub fn graded_sphere(
    center: &Point,
    radius: f64,
    axis: &Point,
    panels: usize,
    levels: usize,
) -> Result<Discretization> {
    if center.dim() != 3 || axis.dim() != 3 {
        return Err(LabError::Unsupported(
            "graded sphere meshes exist in ℝ³ only".into(),
        ));
    }
    if !(radius > 0.0 && radius.is_finite()) || panels == 0 || levels == 0 {
        return Err(LabError::param(
            "graded sphere needs radius > 0, panels ≥ 1 and levels ≥ 1",
        ));
    }
    let an = axis.norm();
    if !(an > 0.0) {
        return Err(LabError::param("axis must be nonzero"));
    }
    let e3: Vec<f64> = axis.coords().iter().map(|c| c / an).collect();
    // the coordinate vector least aligned with the axis seeds the frame
    let j = (0..3)
        .min_by(|&a, &b| e3[a].abs().total_cmp(&e3[b].abs()))
        .unwrap_or(0);
    let mut e1 = [0.0; 3];
    e1[j] = 1.0;
    let dot = e1[j] * e3[j];
    for i in 0..3 {
        e1[i] -= dot * e3[i];
    }
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1.iter_mut().for_each(|c| *c /= n1);
    let e2 = [
        e3[1] * e1[2] - e3[2] * e1[1],
        e3[2] * e1[0] - e3[0] * e1[2],
        e3[0] * e1[1] - e3[1] * e1[0],
    ];

    let shape = ShapeSpec::Sphere {
        center: center.clone(),
        radius,
    };
    let mut out = Discretization::empty(shape);
    let r2 = radius * radius;
    let panel = |out: &mut Discretization, theta: f64, phi: f64, area: f64| {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let p = Point(
            (0..3)
                .map(|i| center[i] + radius * (st * cp * e1[i] + st * sp * e2[i] + ct * e3[i]))
                .collect(),
        );
        out.push(p, Cell::disk_with_area(area), area, true);
    };
    let ring = |out: &mut Discretization, a: f64, b: f64, h: f64| {
        let area = 2.0 * PI * r2 * (a.cos() - b.cos());
        // node at the angle splitting the ring area in half
        let mid = (0.5 * (a.cos() + b.cos())).acos();
        let m = ((2.0 * PI * radius * mid.sin() / h).round() as usize).max(3);
        let offset = if out.len().is_multiple_of(2) {
            0.0
        } else {
            PI / m as f64
        };
        for i in 0..m {
            panel(
                out,
                mid,
                offset + 2.0 * PI * i as f64 / m as f64,
                area / m as f64,
            );
        }
    };
    let cap_at = |area: f64| (1.0 - area / (2.0 * PI * r2)).clamp(-1.0, 1.0).acos();

    let h0 = (4.0 * PI * r2 / panels as f64).sqrt();
    let mut edges = vec![0.0, PI / 2.0];
    let mut sizes = vec![h0];
    for k in 1..levels {
        let lo = PI * (1.0 - 0.5f64.powi(k as i32));
        let hi = PI * (1.0 - 0.5f64.powi(k as i32 + 1));
        edges.push(hi);
        sizes.push(h0.min(0.5 * radius * (hi - lo)));
    }
    // north polar panel, then rings down to θ = π/2
    let t0 = cap_at(h0 * h0).min(0.5 * edges[1]);
    panel(&mut out, 0.0, 0.0, 2.0 * PI * r2 * (1.0 - t0.cos()));
    for (w, h) in edges.windows(2).zip(&sizes) {
        let (a, b) = (if w[0] == 0.0 { t0 } else { w[0] }, w[1]);
        let rings = ((radius * (b - a) / h).round() as usize).max(1);
        for i in 0..rings {
            let lo = a + (b - a) * i as f64 / rings as f64;
            let hi = a + (b - a) * (i + 1) as f64 / rings as f64;
            ring(&mut out, lo, hi, *h);
        }
    }
    // the remaining polar cap: one ring and a centre panel
    let last = *edges.last().unwrap_or(&PI);
    let inner = PI - (PI - last) / 3.0;
    ring(&mut out, last, inner, 0.5 * radius * (PI - last));
    panel(&mut out, PI, 0.0, 2.0 * PI * r2 * (1.0 + inner.cos()));
    Ok(out)
}

/// Slice-by-slice discretization along x₁. A slice of thickness h whose
/// cross-section radius ϱ is at least h/4 (and above the radius floor) is
/// filled with cubes, split into up to four sub-slices so that the cube side
/// does not exceed ϱ; thinner slices become one rod on the axis. Rods fatter
/// than h/4 would make the chain's Gram matrix indefinite, since the rod
/// self-term `(2/h) asinh(h/2ϱ)` must dominate the alternating sum
/// `(2 ln 2)/h` of its neighbours.
fn slice_rotation_body(
    out: &mut Discretization,
    body: &RotationBody,
    intervals: &[(f64, f64)],
    resolution: usize,
    keep: impl Fn(&Point) -> bool,
) {
    let total: f64 = intervals.iter().map(|(a, b)| b - a).sum();
    if !(total > 0.0) {
        return;
    }
    let h_target = total / resolution as f64;
    for &(a, b) in intervals {
        let m = ((b - a) / h_target).round().max(1.0) as usize;
        let h = (b - a) / m as f64;
        for i in 0..m {
            let x1 = a + (i as f64 + 0.5) * h;
            let log_rho = body.log_radius(x1);
            let rho = log_rho.exp();
            if rho >= 0.25 * h && rho >= body.radius_floor {
                let sub = (h / rho).ceil().clamp(1.0, 4.0) as usize;
                let hs = h / sub as f64;
                for j in 0..sub {
                    let xs = x1 - 0.5 * h + (j as f64 + 0.5) * hs;
                    cube_slice(out, body, xs, hs, &keep);
                }
            } else {
                let p = Point(vec![x1, 0.0, 0.0]);
                if keep(&p) {
                    let volume = PI * (2.0 * log_rho).exp() * h;
                    out.push(
                        p,
                        Cell::Rod {
                            length: h,
                            log_radius: log_rho,
                        },
                        volume,
                        true,
                    );
                }
            }
        }
    }
}

/// Cubes of side `h` centred on the slice `x₁ = x1`, cross-section lattice
/// clipped to the disk of radius ϱ(x1).
fn cube_slice(
    out: &mut Discretization,
    body: &RotationBody,
    x1: f64,
    h: f64,
    keep: &impl Fn(&Point) -> bool,
) {
    let rho = body.radius(x1);
    let cube = Cell::ball_with_volume(h * h * h, 3);
    let at_end = x1 - 0.5 * h <= body.x1_lo + 1e-12 * h || x1 + 0.5 * h >= body.x1_hi - 1e-12 * h;
    let jmax = (rho / h).floor() as i64;
    for j2 in -jmax..=jmax {
        for j3 in -jmax..=jmax {
            let (x2, x3) = (j2 as f64 * h, j3 as f64 * h);
            let r = (x2 * x2 + x3 * x3).sqrt();
            if r > rho {
                continue;
            }
            let p = Point(vec![x1, x2, x3]);
            if keep(&p) {
                let boundary = at_end || r + h * std::f64::consts::FRAC_1_SQRT_2 > rho;
                out.push(p, cube, h * h * h, boundary);
            }
        }
    }
}

/// Image of a discretization under `J_y`. Cells containing `y` are dropped;
/// the rest map node-wise with measures scaled by the Jacobian `|x−y|^{−2d}`
/// (d = 3 for volumes, 2 for panels in ℝ³).
pub fn invert_discretization(disc: &Discretization, y: &Point) -> Result<Discretization> {
    let mut out = Discretization::empty(ShapeSpec::Inverted {
        base: Box::new(disc.parent.clone()),
        center: y.clone(),
    });
    for i in 0..disc.len() {
        let x = &disc.nodes[i];
        if x.dim() != y.dim() {
            return Err(LabError::param("dimension mismatch in inversion"));
        }
        let d = x.dist(y);
        let cell = disc.cells[i];
        if d <= cell.extent() {
            continue;
        }
        let k = cell.measure_dimension(x.dim());
        out.push(
            invert_point_unchecked(y, x),
            cell.inverted(d),
            disc.cell_measures[i] * d.powi(-2 * k),
            disc.boundary_flags[i],
        );
    }
    Ok(out)
}

/// Discretization of `J_y(shape ∖ {y})`.
pub fn invert_shape(shape: &ShapeSpec, y: &Point, resolution: usize) -> Result<Discretization> {
    discretize(
        &ShapeSpec::Inverted {
            base: Box::new(shape.clone()),
            center: y.clone(),
        },
        resolution,
    )
}

/// Shell pieces `A_k = A ∩ annulus_k` for `k` in `k_lo..=k_hi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellDecomposition {
    pub center: Point,
    pub q: f64,
    pub k_range: (i32, i32),
    pub direction: ShellDirection,
    pub pieces: Vec<ShapeSpec>,
}

impl ShellDecomposition {
    pub fn ks(&self) -> impl Iterator<Item = i32> {
        self.k_range.0..=self.k_range.1
    }

    pub fn piece(&self, k: i32) -> Option<&ShapeSpec> {
        if k < self.k_range.0 || k > self.k_range.1 {
            return None;
        }
        self.pieces.get((k - self.k_range.0) as usize)
    }

    /// Shell index of a point, if it falls inside the decomposed range.
    pub fn assign(&self, x: &Point) -> Option<i32> {
        let k = shell_index(x.dist(&self.center), self.q, self.direction).ok()?;
        (self.k_range.0..=self.k_range.1).contains(&k).then_some(k)
    }
}

pub fn shell_decompose(
    shape: &ShapeSpec,
    y: &Point,
    q: f64,
    k_range: (i32, i32),
    direction: ShellDirection,
) -> Result<ShellDecomposition> {
    check_ratio(q, direction)?;
    if k_range.0 > k_range.1 {
        return Err(LabError::param("empty shell range"));
    }
    let pieces = (k_range.0..=k_range.1)
        .map(|k| ShapeSpec::Restricted {
            base: Box::new(shape.clone()),
            shell: Annulus {
                center: y.clone(),
                q,
                k,
                direction,
            },
        })
        .collect();
    Ok(ShellDecomposition {
        center: y.clone(),
        q,
        k_range,
        direction,
        pieces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(c: [f64; 3]) -> Point {
        Point::from(c)
    }

    #[test]
    fn inversion_examples() {
        let o = Point::origin(3);
        let x = invert_point(&o, &p([2.0, 0.0, 0.0])).unwrap();
        assert_eq!(x, p([0.5, 0.0, 0.0]));
        let u = p([0.6, 0.0, 0.8]);
        let v = invert_point(&o, &u).unwrap();
        assert_relative_eq!(v.dist(&u), 0.0, epsilon = 1e-15);
        let xs = invert_point(&o, &p([2.0, 0.0, 0.0])).unwrap();
        let zs = invert_point(&o, &p([0.0, 3.0, 0.0])).unwrap();
        assert_relative_eq!(xs.dist(&zs), 13f64.sqrt() / 6.0, max_relative = 1e-15);
        assert!(matches!(invert_point(&o, &o), Err(LabError::Domain(_))));
    }

    #[test]
    fn sphere_area_and_ball_volume() {
        let s = discretize(&ShapeSpec::sphere([0.0; 3], 1.0), 500).unwrap();
        assert_eq!(s.len(), 500);
        assert!((s.total_measure() - 4.0 * PI).abs() < 0.01 * 4.0 * PI);
        let b = discretize(&ShapeSpec::ball([0.0; 3], 1.0), 24).unwrap();
        let v = 4.0 * PI / 3.0;
        assert!(
            (b.total_measure() - v).abs() < 0.01 * v,
            "{}",
            b.total_measure()
        );
        assert!(b.boundary_flags.iter().any(|f| *f));
        assert!(b.boundary_flags.iter().any(|f| !*f));
    }

    #[test]
    fn union_of_disjoint_balls_keeps_all_nodes() {
        let a = ShapeSpec::ball([0.0; 3], 1.0);
        let b = ShapeSpec::ball([3.0, 0.0, 0.0], 1.0);
        let da = discretize(&a, 10).unwrap();
        let db = discretize(&b, 10).unwrap();
        let u = discretize(&ShapeSpec::Union { parts: vec![a, b] }, 10).unwrap();
        assert_eq!(u.len(), da.len() + db.len());
        for i in 0..u.len() {
            for j in 0..i {
                assert!(u.nodes[i].dist(&u.nodes[j]) > COINCIDENCE);
            }
        }
    }

    #[test]
    fn overlapping_union_drops_covered_nodes() {
        let a = ShapeSpec::ball([0.0; 3], 1.0);
        let u = discretize(
            &ShapeSpec::Union {
                parts: vec![a.clone(), a.clone()],
            },
            8,
        )
        .unwrap();
        assert_eq!(u.len(), discretize(&a, 8).unwrap().len());
    }

    #[test]
    fn shell_index_examples() {
        assert_eq!(shell_index(5.0, 2.0, ShellDirection::Outer).unwrap(), 2);
        assert_eq!(shell_index(4.0, 2.0, ShellDirection::Outer).unwrap(), 2);
        assert_eq!(shell_index(0.3, 0.5, ShellDirection::Inner).unwrap(), 1);
        assert_eq!(shell_index(0.5, 0.5, ShellDirection::Inner).unwrap(), 1);
        assert_eq!(shell_index(0.25, 0.5, ShellDirection::Inner).unwrap(), 2);
        assert!(shell_index(1.0, 0.5, ShellDirection::Outer).is_err());
    }

    #[test]
    fn outer_shells_of_unit_ball_are_empty() {
        let ball = ShapeSpec::ball([0.0; 3], 1.0);
        let dec =
            shell_decompose(&ball, &Point::origin(3), 2.0, (1, 6), ShellDirection::Outer).unwrap();
        for piece in &dec.pieces {
            assert!(discretize(piece, 12).unwrap().is_empty());
        }
        assert!(
            shell_decompose(&ball, &Point::origin(3), 0.5, (1, 3), ShellDirection::Outer).is_err()
        );
        assert!(
            shell_decompose(&ball, &Point::origin(3), 2.0, (1, 3), ShellDirection::Inner).is_err()
        );
    }

    #[test]
    fn rotation_body_radii() {
        let f1 = RotationBody::new(1, 0.0, 0.0, 10.0).unwrap();
        assert_eq!(f1.radius(7.3), 1.0);
        let f2 = RotationBody::new(2, 1.0, 0.0, 10.0).unwrap();
        assert_relative_eq!(f2.radius(1.0), (-1f64).exp(), max_relative = 1e-15);
        let f3 = RotationBody::new(3, 2.0, 0.0, 10.0).unwrap();
        assert_relative_eq!(f3.radius(3.0), (-9f64).exp(), max_relative = 1e-15);
        assert!(RotationBody::new(2, 1.5, 0.0, 1.0).is_err());
        assert!(RotationBody::new(3, 1.0, 0.0, 1.0).is_err());
        assert!(RotationBody::new(1, -1.0, 0.0, 1.0).is_err());
        assert!(RotationBody::new(1, 1.0, 0.0, 1.0).is_err());
        assert!(RotationBody::new(1, 0.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn thin_slices_become_rods() {
        let f3 = RotationBody::new(3, 2.0, 1.0, 65.0).unwrap();
        let d = discretize(&ShapeSpec::RotationBody(f3), 64).unwrap();
        assert_eq!(d.len(), 64);
        assert!(d.cells.iter().all(|c| matches!(c, Cell::Rod { .. })));
        // ϱ(64.5) = exp(-4160.25) underflows but the log radius survives
        if let Cell::Rod { log_radius, .. } = d.cells[63] {
            assert_relative_eq!(log_radius, -(64.5f64 * 64.5), max_relative = 1e-12);
        }
        let cyl = RotationBody::new(1, 0.0, 0.0, 2.0).unwrap();
        let d = discretize(&ShapeSpec::RotationBody(cyl), 20).unwrap();
        assert!(d.cells.iter().all(|c| matches!(c, Cell::Ball { .. })));
        let v = 2.0 * PI;
        assert!((d.total_measure() - v).abs() < 0.1 * v);
    }

    #[test]
    fn restricted_rotation_body_respects_shells() {
        let f1 = RotationBody::new(1, 1.0, 1.0, 4096.0).unwrap();
        let shape = ShapeSpec::RotationBody(f1);
        let dec = shell_decompose(
            &shape,
            &Point::origin(3),
            2.0,
            (1, 10),
            ShellDirection::Outer,
        )
        .unwrap();
        for k in dec.ks() {
            let d = discretize(dec.piece(k).unwrap(), 50).unwrap();
            assert!(!d.is_empty(), "shell {k}");
            for x in &d.nodes {
                assert_eq!(dec.assign(x), Some(k));
                assert!(shape.contains(x));
            }
        }
    }

    #[test]
    fn inverted_ball_lands_in_annulus() {
        let b = ShapeSpec::ball([3.0, 0.0, 0.0], 1.0);
        let d = invert_shape(&b, &Point::origin(3), 20).unwrap();
        assert!(!d.is_empty());
        for x in &d.nodes {
            let r = x.norm();
            assert!((0.25..=0.5).contains(&r));
        }
        let s = discretize(&ShapeSpec::sphere([0.0; 3], 1.0), 100).unwrap();
        let si = invert_shape(&ShapeSpec::sphere([0.0; 3], 1.0), &Point::origin(3), 100).unwrap();
        for (a, b) in s.nodes.iter().zip(&si.nodes) {
            assert!(a.dist(b) < 1e-14);
        }
    }

    #[test]
    fn inverted_ball_volume_matches_closed_form() {
        // ∫_{B((3,0,0),1)} |x|^{-6} dx via spherical shells about the origin:
        // 2π ∫_2^4 r^{-4} (1 - (r² + 8)/(6r)) dr = π/384.
        let b = ShapeSpec::ball([3.0, 0.0, 0.0], 1.0);
        let d = invert_shape(&b, &Point::origin(3), 40).unwrap();
        let exact = PI / 384.0;
        assert!(
            (d.total_measure() - exact).abs() < 0.01 * exact,
            "{}",
            d.total_measure()
        );
    }

    #[test]
    fn inverted_shell_rewrite_matches_preimage() {
        let y = Point::from([0.2, 0.1, 0.0]);
        let inv = ShapeSpec::Inverted {
            base: Box::new(ShapeSpec::ball([4.0, 0.0, 0.0], 1.0)),
            center: y.clone(),
        };
        let shell = Annulus::new(y.clone(), 0.5, 2, ShellDirection::Inner).unwrap();
        let d = discretize(
            &ShapeSpec::Restricted {
                base: Box::new(inv.clone()),
                shell: shell.clone(),
            },
            12,
        )
        .unwrap();
        assert!(!d.is_empty());
        for x in &d.nodes {
            assert!(shell.contains(x));
            assert!(inv.contains(x));
        }
    }

    #[test]
    fn graded_sphere_resolves_polar_caps() {
        let center = Point::from([0.5, -1.0, 2.0]);
        let axis = Point::from([1.0, 2.0, -0.5]);
        let r = 1.7;
        let disc = graded_sphere(&center, r, &axis, 400, 9).unwrap();
        assert_relative_eq!(disc.total_measure(), 4.0 * PI * r * r, max_relative = 1e-12);
        for x in &disc.nodes {
            assert_relative_eq!(x.dist(&center), r, max_relative = 1e-12);
        }
        let angle = |x: &Point| {
            let v = x.sub(&center);
            let c = (0..3).map(|i| v[i] * axis[i]).sum::<f64>() / (v.norm() * axis.norm());
            c.clamp(-1.0, 1.0).acos()
        };
        for k in 1..=9 {
            let theta = PI * (1.0 - 0.5f64.powi(k));
            let area: f64 = (0..disc.len())
                .filter(|&i| angle(&disc.nodes[i]) <= theta)
                .map(|i| disc.cell_measures[i])
                .sum();
            assert_relative_eq!(
                area,
                2.0 * PI * r * r * (1.0 - theta.cos()),
                max_relative = 1e-12
            );
        }
        assert!(graded_sphere(&Point::origin(4), 1.0, &Point::origin(4), 10, 2).is_err());
        assert!(graded_sphere(&center, 1.0, &Point::origin(3), 10, 2).is_err());
    }
}
