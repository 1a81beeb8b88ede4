//! Experiment drivers behind the command line: each command reads its
//! parameters from an [`ExperimentConfig`], runs the owning module and
//! returns a self-checking [`Report`].

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Command, ExperimentConfig};
use crate::error::{LabError, Result};
use crate::geometry::{
    discretize, graded_sphere, Cell, Discretization, Point, ShapeSpec, ShellDirection,
};
use crate::io::{write_measure_csv, write_points_csv};
use crate::kernel::{kelvin_identities, potential, DiscreteMeasure, KelvinResiduals, KernelParams};
use crate::mc::{wos_hit, WosOptions};
use crate::potential_ops::{
    exhaustion_run, exterior_probes, probe_points, support_profile, Assembled, BalayageResult,
    ExhaustionSource,
};
use crate::thinness::{
    classify_thinness, rotation_body, shell_capacities, subadditivity_gap, thinness_via_inversion,
    wiener_regularity, Regularity, ShellOptions, ShellResolution, ThinnessVerdict,
};

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl InvariantCheck {
    /// Passes when `value ≤ tolerance`.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        InvariantCheck {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
        }
    }

    /// Passes when `value ≥ tolerance`.
    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        InvariantCheck {
            name: name.into(),
            passed: value >= tolerance,
            value,
            tolerance,
        }
    }

    /// Boolean condition; `value` is 0 when it holds and 1 otherwise.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        InvariantCheck {
            name: name.into(),
            passed: ok,
            value: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    pub inputs_digest: String,
    pub results: Value,
    pub invariant_checks: Vec<InvariantCheck>,
    /// Seconds.
    pub wall_time: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        !self.invariant_checks.is_empty() && self.invariant_checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &InvariantCheck> {
        self.invariant_checks.iter().filter(|c| !c.passed)
    }
}

/// A CSV file to write next to the report, named `<stem>.<suffix>`.
#[derive(Clone, Debug, PartialEq)]
pub struct SideFile {
    pub suffix: String,
    pub contents: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub report: Report,
    pub side_files: Vec<SideFile>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    checks: Vec<InvariantCheck>,
    side: Vec<SideFile>,
}

impl Ctx<'_> {
    fn params(&self) -> &KernelParams {
        &self.cfg.kernel
    }

    fn dim(&self) -> usize {
        self.cfg.kernel.dim()
    }

    fn tol(&self, key: &str, default: f64) -> f64 {
        self.cfg.tolerance(key, default)
    }

    fn check(&mut self, c: InvariantCheck) {
        self.checks.push(c);
    }

    fn point(&self, key: &str) -> Result<Option<Point>> {
        self.cfg.params.point(key, self.dim())
    }

    fn require_point(&self, key: &str) -> Result<Point> {
        self.point(key)?
            .ok_or_else(|| self.cfg.params.error(key, "missing"))
    }

    fn origin_or(&self, key: &str) -> Result<Point> {
        Ok(self
            .point(key)?
            .unwrap_or_else(|| Point::origin(self.dim())))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.cfg.params.get_or(key, default)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.cfg.params.get_or(key, default)
    }

    fn k_range(&self) -> Result<(i32, i32)> {
        let lo = self.cfg.params.get_or("k_min", 1i32)?;
        let hi = self.cfg.params.get_or("k_max", 12i32)?;
        if lo > hi {
            return Err(self.cfg.params.error("k_max", "must not be below k_min"));
        }
        Ok((lo, hi))
    }

    fn shell_resolution(&self) -> ShellResolution {
        self.cfg
            .resolution
            .map_or_else(ShellResolution::default, ShellResolution::Fixed)
    }

    fn discretize(&self, shape: &ShapeSpec) -> Result<Discretization> {
        let r = self
            .cfg
            .resolution
            .unwrap_or_else(|| default_resolution(shape));
        discretize(shape, r)
    }

    fn csv(&mut self, suffix: &str, contents: impl FnOnce() -> Result<String>) -> Result<()> {
        if self.cfg.csv {
            let contents = contents()?;
            self.side.push(SideFile {
                suffix: suffix.to_string(),
                contents,
            });
        }
        Ok(())
    }

    fn measure_csv(&mut self, suffix: &str, mu: &DiscreteMeasure) -> Result<()> {
        self.csv(suffix, || measure_csv_string(mu))
    }

    /// KKT, mass-bound and contraction checks of one sweep.
    fn sweep_checks(&mut self, label: &str, res: &BalayageResult) {
        self.check(InvariantCheck::at_most(
            format!("{label}kkt_stationarity"),
            res.kkt.kkt_stationarity,
            res.tol,
        ));
        let dual = res.kkt.kkt_feasibility_dual.unwrap_or(0.0);
        self.check(InvariantCheck::at_least(
            format!("{label}kkt_dual_feasibility"),
            dual,
            -res.tol,
        ));
        let mass_tol = self.tol("mass_bound", 1e-9);
        self.check(InvariantCheck::at_most(
            format!("{label}mass_bound"),
            res.swept_mass - res.source_mass,
            mass_tol * res.source_mass.max(1.0),
        ));
        if let Some(m) = res.contraction_margin {
            let tol = self.tol("contraction", 1e-9);
            self.check(InvariantCheck::at_least(
                format!("{label}contraction"),
                m,
                -tol,
            ));
        }
    }
}

fn measure_csv_string(mu: &DiscreteMeasure) -> Result<String> {
    let mut buf = Vec::new();
    write_measure_csv(mu, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

/// Resolution used when the configuration gives none.
pub fn default_resolution(shape: &ShapeSpec) -> usize {
    match shape {
        ShapeSpec::Sphere { .. } => 500,
        ShapeSpec::Ball { .. } | ShapeSpec::Box { .. } => 16,
        ShapeSpec::RotationBody(_) => 64,
        ShapeSpec::PointCloud { .. } => 1,
        ShapeSpec::Union { parts } => parts.iter().map(default_resolution).max().unwrap_or(1),
        ShapeSpec::Restricted { base, .. } | ShapeSpec::Inverted { base, .. } => {
            default_resolution(base)
        }
    }
}

/// Run one experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut ctx = Ctx {
        cfg,
        checks: Vec::new(),
        side: Vec::new(),
    };
    let results = match cfg.command {
        Command::Capacity => capacity_cmd(&mut ctx)?,
        Command::Balayage => balayage_cmd(&mut ctx)?,
        Command::HarmonicMass => harmonic_mass_cmd(&mut ctx)?,
        Command::Thinness => thinness_cmd(&mut ctx)?,
        Command::Wiener => wiener_cmd(&mut ctx)?,
        Command::KelvinCheck => kelvin_cmd(&mut ctx)?,
        Command::Support => support_cmd(&mut ctx)?,
        Command::Exhaust => exhaust_cmd(&mut ctx)?,
        Command::Continuity => continuity_cmd(&mut ctx)?,
        Command::Subadd => subadd_cmd(&mut ctx)?,
        Command::ExampleEx => example_ex_cmd(&mut ctx)?,
        Command::McHit => mc_hit_cmd(&mut ctx)?,
    };
    if ctx.checks.is_empty() {
        return Err(LabError::param("experiment produced no invariant checks"));
    }
    Ok(Outcome {
        report: Report {
            schema: SCHEMA,
            command: cfg.command.to_string(),
            inputs_digest: cfg.digest(),
            results,
            invariant_checks: ctx.checks,
            wall_time: start.elapsed().as_secs_f64(),
        },
        side_files: ctx.side,
    })
}

fn capacity_cmd(ctx: &mut Ctx) -> Result<Value> {
    let shape = ctx.cfg.shape("shape")?.clone();
    let disc = ctx.discretize(&shape)?;
    if disc.is_empty() {
        return Err(LabError::param("shape has no nodes at this resolution"));
    }
    let eq = Assembled::new(ctx.params(), &disc)?.equilibrium()?;
    let c = eq.capacity_mass;
    let me_tol = ctx.tol("mass_energy", 1e-6);
    ctx.check(InvariantCheck::at_most(
        "mass_energy_agreement",
        eq.mass_energy_gap(),
        me_tol * c,
    ));
    ctx.check(InvariantCheck::at_most(
        "kkt_stationarity",
        eq.kkt.kkt_stationarity,
        eq.tol,
    ));
    let dual = eq.kkt.kkt_feasibility_dual.unwrap_or(0.0);
    ctx.check(InvariantCheck::at_least(
        "kkt_dual_feasibility",
        dual,
        -eq.tol,
    ));
    ctx.check(InvariantCheck::at_least(
        "node_potential_at_least_one",
        eq.max_node_potential,
        1.0 - eq.tol,
    ));
    if let Some(expected) = ctx.cfg.params.get::<f64>("expected")? {
        let rel = ctx.tol("capacity_rel", 0.02);
        ctx.check(InvariantCheck::at_most(
            "capacity_vs_expected",
            (c - expected).abs() / expected.abs().max(f64::MIN_POSITIVE),
            rel,
        ));
    }
    ctx.measure_csv("equilibrium.csv", &eq.measure)?;
    Ok(json!({
        "capacity": c,
        "mass": eq.capacity_mass,
        "energy": eq.capacity_energy,
        "nodes": disc.len(),
        "kkt": {
            "stationarity": eq.kkt.kkt_stationarity,
            "dual": eq.kkt.kkt_feasibility_dual,
            "iterations": eq.kkt.iterations,
        },
        "potential_checks": [
            {"name": "max_node_potential", "value": eq.max_node_potential},
        ],
    }))
}

/// Source measure of a sweep: explicit atoms, a measure CSV, or the
/// equilibrium measure of another shape.
fn source_measure(ctx: &Ctx) -> Result<DiscreteMeasure> {
    let p = &ctx.cfg.params;
    if let Some(points) = p.points("source_points", ctx.dim())? {
        let masses = p
            .numbers("source_masses")?
            .unwrap_or_else(|| vec![1.0; points.len()]);
        if masses.len() != points.len() {
            return Err(p.error("source_masses", "one mass per source point"));
        }
        let cells = vec![
            Cell::Ball {
                radius: f64::MIN_POSITIVE
            };
            points.len()
        ];
        return DiscreteMeasure::new(points, masses, cells)
            .map_err(|e| p.error("source_points", e));
    }
    if let Some(path) = p.str("source_file") {
        let f = std::fs::File::open(path).map_err(|e| p.error("source_file", e))?;
        return crate::io::read_measure_csv(f).map_err(|e| p.error("source_file", e));
    }
    if p.str("source_shape").is_some() {
        let shape = ctx.cfg.shape("source_shape")?;
        let disc = ctx.discretize(shape)?;
        return Ok(Assembled::new(ctx.params(), &disc)?.equilibrium()?.measure);
    }
    Err(p.error(
        "source_points",
        "missing (or give source_file / source_shape)",
    ))
}

fn balayage_cmd(ctx: &mut Ctx) -> Result<Value> {
    let shape = ctx.cfg.shape("shape")?.clone();
    let disc = ctx.discretize(&shape)?;
    let mu = source_measure(ctx)?;
    let probes = exterior_probes(&shape, &disc, ctx.usize_or("probes", 1000)?, ctx.cfg.seed);
    let res = Assembled::new(ctx.params(), &disc)?.balayage(&mu, &probes)?;
    ctx.sweep_checks("", &res);
    let gap_tol = ctx.tol("potential_gap", 1e-9);
    ctx.check(InvariantCheck::at_most(
        "potential_match_on_support",
        res.potential_gap_on_a,
        gap_tol.max(res.tol),
    ));
    ctx.measure_csv("swept.csv", &res.swept)?;
    Ok(json!({
        "nodes": disc.len(),
        "source_mass": res.source_mass,
        "swept_mass": res.swept_mass,
        "potential_gap_on_support": res.potential_gap_on_a,
        "contraction_margin": res.contraction_margin,
        "probes": probes.len(),
        "barycenter": res.swept.barycenter(),
        "kkt": {"stationarity": res.kkt.kkt_stationarity, "dual": res.kkt.kkt_feasibility_dual},
    }))
}

fn harmonic_mass_cmd(ctx: &mut Ctx) -> Result<Value> {
    let shape = ctx.cfg.shape("shape")?.clone();
    let disc = ctx.discretize(&shape)?;
    if disc.is_empty() {
        return Err(LabError::param("shape has no nodes at this resolution"));
    }
    let ys = ctx
        .cfg
        .params
        .points("ys", ctx.dim())?
        .ok_or_else(|| ctx.cfg.params.error("ys", "missing"))?;
    let probes = exterior_probes(&shape, &disc, ctx.usize_or("probes", 200)?, ctx.cfg.seed);
    let asm = Assembled::new(ctx.params(), &disc)?;
    let eq = asm.equilibrium()?;
    let node_pot = asm.matrix.mul_vec(&eq.kkt.weights);
    let id_tol = ctx.tol("identity", 1e-6);
    let mut rows = Vec::new();
    for (i, y) in ys.iter().enumerate() {
        let h = asm.harmonic_measure(y, &probes)?;
        let eq_pot = match asm.node_at(y) {
            Some(j) => node_pot[j],
            None => potential(ctx.params(), &eq.measure, y),
        };
        let gap = (h.swept_mass - eq_pot).abs();
        ctx.sweep_checks(&format!("y{i}_"), &h);
        ctx.check(InvariantCheck::at_most(
            format!("y{i}_mass_identity"),
            gap,
            id_tol,
        ));
        rows.push(json!({
            "y": y,
            "swept_mass": h.swept_mass,
            "equilibrium_potential": eq_pot,
            "gap": gap,
            "contraction_margin": h.contraction_margin,
        }));
    }
    Ok(json!({"nodes": disc.len(), "capacity": eq.capacity_mass, "points": rows}))
}

fn thinness_cmd(ctx: &mut Ctx) -> Result<Value> {
    let shape = ctx.cfg.shape("shape")?.clone();
    let y = ctx.origin_or("y")?;
    let q = ctx.f64_or("q", 2.0)?;
    let caps = shell_capacities(
        ctx.params(),
        &shape,
        &y,
        q,
        ctx.k_range()?,
        ShellDirection::Outer,
        ctx.shell_resolution(),
    )?;
    let report = classify_thinness(&caps, ctx.params(), q)?;
    ctx.check(InvariantCheck::holds("shells_resolved", report.reliable));
    ctx.check(InvariantCheck::holds(
        "verdict_conclusive",
        report.verdict != ThinnessVerdict::Inconclusive,
    ));
    if let Some(expect) = ctx.cfg.params.str("expect") {
        let want: ThinnessVerdict = serde_json::from_value(Value::String(expect.to_string()))
            .map_err(|_| {
                ctx.cfg
                    .params
                    .error("expect", "not_thin, thin_not_ultrathin or ultrathin")
            })?;
        ctx.check(InvariantCheck::holds(
            "verdict_matches_expectation",
            report.verdict == want,
        ));
    }
    let csv = report.to_csv()?;
    ctx.csv("thinness.csv", || Ok(csv))?;
    Ok(json!({"report": report, "shells": caps}))
}

fn wiener_cmd(ctx: &mut Ctx) -> Result<Value> {
    let shape = ctx.cfg.shape("shape")?.clone();
    let y = ctx.origin_or("y")?;
    let q = ctx.f64_or("q", 0.5)?;
    let v = wiener_regularity(
        ctx.params(),
        &shape,
        &y,
        q,
        ctx.k_range()?,
        ctx.shell_resolution(),
    )?;
    ctx.check(InvariantCheck::holds("shells_resolved", v.reliable));
    ctx.check(InvariantCheck::holds(
        "verdict_conclusive",
        v.verdict != Regularity::Inconclusive,
    ));
    if let Some(expect) = ctx.cfg.params.str("expect") {
        let want: Regularity = serde_json::from_value(Value::String(expect.to_string()))
            .map_err(|_| ctx.cfg.params.error("expect", "regular or irregular"))?;
        ctx.check(InvariantCheck::holds(
            "verdict_matches_expectation",
            v.verdict == want,
        ));
    }
    Ok(serde_json::to_value(&v)?)
}

/// Worst Kelvin residuals over random `atoms`-atom measures and centres.
pub fn kelvin_battery(
    params: &KernelParams,
    trials: usize,
    atoms: usize,
    seed: u64,
) -> Result<KelvinResiduals> {
    let n = params.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = KelvinResiduals::default();
    for _ in 0..trials {
        let y = Point::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let measure = |rng: &mut ChaCha8Rng| -> Result<DiscreteMeasure> {
            let mut pts = Vec::with_capacity(atoms);
            while pts.len() < atoms {
                let p = Point::new((0..n).map(|_| rng.random_range(-3.0..3.0)).collect());
                if p.dist(&y) > 1e-2 {
                    pts.push(p);
                }
            }
            let w = (0..atoms).map(|_| rng.random_range(0.05..2.0)).collect();
            DiscreteMeasure::new(pts, w, vec![Cell::Ball { radius: 1e-3 }; atoms])
        };
        let nu = measure(&mut rng)?;
        let mu = measure(&mut rng)?;
        let r = kelvin_identities(params, &y, &nu, &mu, mu.points())?;
        worst.involution = worst.involution.max(r.involution);
        worst.mass = worst.mass.max(r.mass);
        worst.potential = worst.potential.max(r.potential);
        worst.energy = worst.energy.max(r.energy);
    }
    Ok(worst)
}

fn kelvin_cmd(ctx: &mut Ctx) -> Result<Value> {
    let mode = ctx
        .cfg
        .params
        .str("mode")
        .unwrap_or("identities")
        .to_string();
    match mode.as_str() {
        "identities" => {
            let trials = ctx.usize_or("trials", 100)?;
            let atoms = ctx.usize_or("atoms", 20)?;
            let r = kelvin_battery(ctx.params(), trials, atoms, ctx.cfg.seed)?;
            let tol = ctx.tol("kelvin", 1e-10);
            ctx.check(InvariantCheck::at_most("involution", r.involution, tol));
            ctx.check(InvariantCheck::at_most("mass", r.mass, tol));
            ctx.check(InvariantCheck::at_most(
                "potential_relation",
                r.potential,
                tol,
            ));
            ctx.check(InvariantCheck::at_most("energy", r.energy, tol));
            Ok(json!({"mode": mode, "trials": trials, "atoms": atoms, "residuals": r}))
        }
        "inversion" => {
            let shape = ctx.cfg.shape("shape")?.clone();
            let y = ctx.origin_or("y")?;
            let opts = ShellOptions {
                q: ctx.f64_or("q", 2.0)?,
                k_range: ctx.k_range()?,
                resolution: ctx.shell_resolution(),
                transfer_slack: ctx.tol("transfer_slack", 0.1),
            };
            let c = thinness_via_inversion(ctx.params(), &shape, &y, &opts)?;
            ctx.check(InvariantCheck::holds("thin_iff_irregular", c.agree));
            ctx.check(InvariantCheck::holds("transfer_bounds", c.transfer_ok));
            if let Some(d) = c.kelvin_max_deviation {
                let tol = ctx.tol("kelvin_sweep", 1e-9);
                ctx.check(InvariantCheck::at_most("kelvin_sweep_identity", d, tol));
            }
            Ok(json!({"mode": mode, "comparison": c}))
        }
        other => Err(ctx.cfg.params.error(
            "mode",
            format!("expected identities or inversion, found `{other}`"),
        )),
    }
}

fn support_cmd(ctx: &mut Ctx) -> Result<Value> {
    let shape = ctx.cfg.shape("shape")?.clone();
    let disc = ctx.discretize(&shape)?;
    let y = ctx.require_point("y")?;
    if shape.contains(&y) {
        return Err(ctx
            .cfg
            .params
            .error("y", "the source must lie outside the shape"));
    }
    let probes = exterior_probes(&shape, &disc, ctx.usize_or("probes", 200)?, ctx.cfg.seed);
    let res = Assembled::new(ctx.params(), &disc)?.harmonic_measure(&y, &probes)?;
    ctx.sweep_checks("", &res);
    let prof = support_profile(&res.swept, &disc)?;
    if ctx.params().alpha() == 2.0 {
        let min = ctx.tol("min_boundary_fraction", 0.99);
        ctx.check(InvariantCheck::at_least(
            "boundary_mass_fraction",
            prof.boundary_mass_fraction,
            min,
        ));
    } else {
        let min = ctx.tol("min_interior_fraction", 0.10);
        ctx.check(InvariantCheck::at_least(
            "interior_mass_fraction",
            prof.interior_mass_fraction,
            min,
        ));
    }
    ctx.measure_csv("swept.csv", &res.swept)?;
    Ok(json!({
        "nodes": disc.len(),
        "boundary_nodes": disc.boundary_flags.iter().filter(|b| **b).count(),
        "swept_mass": res.swept_mass,
        "boundary_mass_fraction": prof.boundary_mass_fraction,
        "interior_mass_fraction": prof.interior_mass_fraction,
    }))
}

/// Caps `{x : angle(x − c, axis) ≤ θ_k}` with `θ_k = π(1 − 2^{−k})`,
/// `k = 1..steps`, followed by the whole node set.
pub fn polar_caps(
    disc: &Discretization,
    center: &Point,
    axis: &Point,
    steps: usize,
) -> Result<Vec<Discretization>> {
    let norm = axis.norm();
    if !(norm > 0.0) {
        return Err(LabError::param("cap axis must be nonzero"));
    }
    let angle = |x: &Point| {
        let v = x.sub(center);
        let c = v
            .coords()
            .iter()
            .zip(axis.coords())
            .map(|(a, b)| a * b)
            .fold(0.0, |s, t| s + t)
            / (v.norm() * norm).max(f64::MIN_POSITIVE);
        c.clamp(-1.0, 1.0).acos()
    };
    let mut out: Vec<Discretization> = (1..=steps)
        .map(|k| {
            let theta = std::f64::consts::PI * (1.0 - 0.5f64.powi(k as i32));
            disc.select(|_, x| angle(x) <= theta)
        })
        .collect();
    out.push(disc.clone());
    Ok(out)
}

fn shape_center(shape: &ShapeSpec, disc: &Discretization) -> Point {
    match shape {
        ShapeSpec::Ball { center, .. } | ShapeSpec::Sphere { center, .. } => center.clone(),
        _ => {
            let m = DiscreteMeasure::from_discretization(disc, disc.cell_measures.clone())
                .ok()
                .and_then(|m| m.barycenter());
            m.unwrap_or_else(|| Point::origin(disc.nodes.first().map_or(3, Point::dim)))
        }
    }
}

fn exhaust_cmd(ctx: &mut Ctx) -> Result<Value> {
    let shape = ctx.cfg.shape("shape")?.clone();
    let n = ctx.dim();
    let mut default_axis = vec![0.0; n];
    default_axis[n - 1] = 1.0;
    let axis = ctx.point("axis")?.unwrap_or(Point::new(default_axis));
    let steps = ctx.usize_or("steps", 8)?;
    // spheres get a mesh whose rings follow the caps; other shapes use node
    // subsets of their usual discretization
    let disc = match &shape {
        ShapeSpec::Sphere { center, radius } if n == 3 => {
            let panels = ctx
                .cfg
                .resolution
                .unwrap_or_else(|| default_resolution(&shape));
            graded_sphere(center, *radius, &axis, panels, steps)?
        }
        _ => ctx.discretize(&shape)?,
    };
    let center = shape_center(&shape, &disc);
    let caps = polar_caps(&disc, &center, &axis, steps)?;
    let source = match ctx.point("source_point")? {
        Some(p) => ExhaustionSource::Balayage(DiscreteMeasure::dirac(
            p,
            1.0,
            Cell::Ball {
                radius: f64::MIN_POSITIVE,
            },
        )?),
        None => ExhaustionSource::Equilibrium,
    };
    let probes = probe_points(&disc, ctx.usize_or("probes", 100)?, ctx.cfg.seed);
    let table = exhaustion_run(ctx.params(), &caps, &source, &probes)?;
    ctx.check(InvariantCheck::holds(
        "masses_nondecreasing",
        table.masses_nondecreasing,
    ));
    let pt = ctx.tol("probe_monotonicity", 1e-9);
    ctx.check(InvariantCheck::at_most(
        "probe_potentials_nondecreasing",
        table.worst_probe_decrease,
        pt,
    ));
    // the last cap that still misses some nodes
    let full = table.steps.last().map_or(0, |s| s.nodes);
    match table.steps.iter().rev().find(|s| s.nodes < full) {
        Some(proper) => ctx.check(InvariantCheck::at_most(
            "final_strong_distance",
            proper.strong_distance,
            ctx.tol("strong_distance", 1e-3),
        )),
        None => ctx.check(InvariantCheck::holds("proper_cap_exists", false)),
    }
    let dist_nonincreasing = table
        .steps
        .windows(2)
        .all(|w| w[1].strong_distance <= w[0].strong_distance + 1e-12);
    ctx.check(InvariantCheck::holds(
        "strong_distance_nonincreasing",
        dist_nonincreasing,
    ));
    if matches!(source, ExhaustionSource::Equilibrium) {
        // nested equilibria: ‖γ_K − γ_k‖² = c(K) − c(A_k)
        let ck = table.steps.last().map_or(0.0, |s| s.mass);
        let worst = table
            .steps
            .iter()
            .map(|s| (s.strong_distance.powi(2) - (ck - s.mass)).abs())
            .fold(0.0, f64::max);
        ctx.check(InvariantCheck::at_most(
            "pythagoras_identity",
            worst,
            ctx.tol("pythagoras", 1e-8),
        ));
    }
    ctx.check(InvariantCheck::at_most(
        "kkt_stationarity",
        table.max_kkt_stationarity,
        ctx.tol("kkt", 1e-9),
    ));
    Ok(serde_json::to_value(&table)?)
}

/// `max(0, 1 − |x − z|²/ρ²)³`.
pub fn bump(x: &Point, z: &Point, rho: f64) -> f64 {
    (1.0 - x.dist_sq(z) / (rho * rho)).max(0.0).powi(3)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub y: Point,
    pub distance: f64,
    pub value: f64,
    pub gap: f64,
    pub swept_mass: f64,
    pub contraction_margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityTable {
    pub z: Point,
    pub f_z: f64,
    /// `|ε_z^A(f) − f(z)|` with `y = z` exactly.
    pub at_z_gap: f64,
    pub rows: Vec<ContinuityRow>,
    /// Least-squares slope of the gaps against the step index.
    pub gap_slope: f64,
    pub max_kkt_stationarity: f64,
}

/// `ε_y^A(f) = Σ f(node_i) h_i(y)` along `approach → z`, `z` a node.
pub fn continuity_experiment(
    params: &KernelParams,
    disc: &Discretization,
    z: &Point,
    approach: &[Point],
    rho: f64,
    probes: &[Point],
) -> Result<ContinuityTable> {
    if !(rho > 0.0) {
        return Err(LabError::param("bump radius must be positive"));
    }
    let asm = Assembled::new(params, disc)?;
    if asm.node_at(z).is_none() {
        return Err(LabError::param("z must be a node of the discretization"));
    }
    let d: Vec<f64> = approach.iter().map(|y| y.dist(z)).collect();
    let converging = !d.is_empty()
        && d.windows(2).all(|w| w[1] < w[0])
        && d.last().is_some_and(|&l| l <= 0.5 * d[0]);
    if !converging {
        return Err(LabError::param("approach points do not converge to z"));
    }
    let f: Vec<f64> = disc.nodes.iter().map(|x| bump(x, z, rho)).collect();
    let f_z = bump(z, z, rho);
    let eval = |w: &[f64]| w.iter().zip(&f).fold(0.0, |s, (a, b)| s + a * b);
    let at_z = asm.harmonic_measure(z, &[])?;
    let at_z_gap = (eval(at_z.swept.weights()) - f_z).abs();
    let mut rows = Vec::with_capacity(approach.len());
    let mut kkt = at_z.kkt.kkt_stationarity;
    for (y, dist) in approach.iter().zip(&d) {
        let h = asm.harmonic_measure(y, probes)?;
        kkt = kkt.max(h.kkt.kkt_stationarity);
        let value = eval(h.swept.weights());
        rows.push(ContinuityRow {
            y: y.clone(),
            distance: *dist,
            value,
            gap: (value - f_z).abs(),
            swept_mass: h.swept_mass,
            contraction_margin: h.contraction_margin,
        });
    }
    let m = rows.len() as f64;
    let mx = (m - 1.0) / 2.0;
    let my = rows.iter().fold(0.0, |s, r| s + r.gap) / m;
    let (sxy, sxx) = rows.iter().enumerate().fold((0.0, 0.0), |(a, b), (i, r)| {
        let dx = i as f64 - mx;
        (a + dx * (r.gap - my), b + dx * dx)
    });
    Ok(ContinuityTable {
        z: z.clone(),
        f_z,
        at_z_gap,
        rows,
        gap_slope: if sxx > 0.0 { sxy / sxx } else { 0.0 },
        max_kkt_stationarity: kkt,
    })
}

fn nearest_node(disc: &Discretization, x: &Point) -> Option<Point> {
    disc.nodes
        .iter()
        .min_by(|a, b| a.dist_sq(x).total_cmp(&b.dist_sq(x)))
        .cloned()
}

fn continuity_cmd(ctx: &mut Ctx) -> Result<Value> {
    let shape = ctx.cfg.shape("shape")?.clone();
    let disc = ctx.discretize(&shape)?;
    let target = ctx.require_point("z")?;
    let z = nearest_node(&disc, &target).ok_or_else(|| LabError::param("shape has no nodes"))?;
    let rho = ctx.f64_or("rho", 0.5)?;
    let approach = match ctx.cfg.params.points("approach", ctx.dim())? {
        Some(a) => a,
        None => {
            let center = shape_center(&shape, &disc);
            let u = z.sub(&center);
            let un = u.norm();
            if !(un > 0.0) {
                return Err(ctx
                    .cfg
                    .params
                    .error("z", "coincides with the shape centre; give `approach`"));
            }
            let u = u.scaled(1.0 / un);
            let scale = ctx.f64_or("scale", 1.0)?;
            (1..=ctx.usize_or("steps", 8)? as i32)
                .map(|m| z.add(&u.scaled(scale * 0.5f64.powi(m))))
                .collect()
        }
    };
    let probes = exterior_probes(&shape, &disc, ctx.usize_or("probes", 100)?, ctx.cfg.seed);
    let t = continuity_experiment(ctx.params(), &disc, &z, &approach, rho, &probes)?;
    ctx.check(InvariantCheck::at_most(
        "dirac_at_node_sweeps_to_itself",
        t.at_z_gap,
        1e-9,
    ));
    let last = t.rows.last().expect("nonempty approach").gap;
    ctx.check(InvariantCheck::at_most(
        "final_gap",
        last,
        ctx.tol("final_gap", 0.02),
    ));
    ctx.check(InvariantCheck::at_most("gap_trend", t.gap_slope, 0.0));
    let first = t.rows[0].gap;
    ctx.check(InvariantCheck::at_most(
        "final_gap_below_first",
        last,
        first,
    ));
    let mass = t.rows.iter().map(|r| r.swept_mass).fold(0.0, f64::max);
    ctx.check(InvariantCheck::at_most(
        "mass_bound",
        mass - 1.0,
        ctx.tol("mass_bound", 1e-9),
    ));
    let margin = t
        .rows
        .iter()
        .filter_map(|r| r.contraction_margin)
        .fold(f64::INFINITY, f64::min);
    if margin.is_finite() {
        ctx.check(InvariantCheck::at_least(
            "contraction",
            margin,
            -ctx.tol("contraction", 1e-9),
        ));
    }
    Ok(serde_json::to_value(&t)?)
}

fn subadd_cmd(ctx: &mut Ctx) -> Result<Value> {
    let a = ctx.cfg.shape("a")?.clone();
    let b = ctx.cfg.shape("b")?.clone();
    let da = ctx.discretize(&a)?;
    let db = ctx.discretize(&b)?;
    let g = subadditivity_gap(ctx.params(), &da, &db)?;
    ctx.check(InvariantCheck::at_least(
        "subadditivity_margin",
        g.margin,
        -ctx.tol("subadditivity", 1e-9),
    ));
    ctx.check(InvariantCheck::at_least(
        "union_capacity_monotone",
        g.cap_union - g.cap_a.max(g.cap_b),
        -1e-9 * g.cap_union,
    ));
    Ok(serde_json::to_value(g)?)
}

/// The bodies and verdicts of the rotation-body example.
pub const EXAMPLE_BODIES: [(u8, f64, ThinnessVerdict); 5] = [
    (1, 0.0, ThinnessVerdict::NotThin),
    (1, 1.0, ThinnessVerdict::NotThin),
    (2, 0.5, ThinnessVerdict::ThinNotUltrathin),
    (2, 1.0, ThinnessVerdict::ThinNotUltrathin),
    (3, 2.0, ThinnessVerdict::Ultrathin),
];

fn example_ex_cmd(ctx: &mut Ctx) -> Result<Value> {
    let q = ctx.f64_or("q", 2.0)?;
    let k_range = ctx.k_range()?;
    let lo = ctx.f64_or("x1_lo", 1.0)?;
    let hi = ctx.f64_or("x1_hi", 8192.0)?;
    let y = ctx.origin_or("y")?;
    let mut rows = Vec::new();
    for (family, s, want) in EXAMPLE_BODIES {
        let shape = rotation_body(family, s, lo, hi)?;
        let caps = shell_capacities(
            ctx.params(),
            &shape,
            &y,
            q,
            k_range,
            ShellDirection::Outer,
            ctx.shell_resolution(),
        )?;
        let report = classify_thinness(&caps, ctx.params(), q)?;
        let tag = format!("F{family}_s{s}");
        ctx.check(InvariantCheck::holds(
            format!("{tag}_verdict"),
            report.verdict == want,
        ));
        let csv = report.to_csv()?;
        ctx.csv(&format!("{tag}.csv"), || Ok(csv))?;
        rows.push(json!({
            "family": family,
            "s": s,
            "verdict": report.verdict,
            "expected": want,
            "tail_slope": report.tail_slope,
            "capacity_tail_slope": report.capacity_tail_slope,
            "threshold": report.threshold,
            "report": report,
        }));
    }
    Ok(json!({"q": q, "k_range": k_range, "x1_range": [lo, hi], "bodies": rows}))
}

fn mc_hit_cmd(ctx: &mut Ctx) -> Result<Value> {
    let shape = ctx.cfg.shape("shape")?.clone();
    let y = ctx.require_point("y")?;
    let record = ctx.cfg.params.bool("record_hits")?.unwrap_or(true);
    let opts = WosOptions {
        epsilon: ctx.cfg.params.get("epsilon")?,
        n_walkers: ctx.usize_or("walkers", 100_000)?,
        seed: ctx.cfg.seed,
        record_hits: record,
    };
    let stats = wos_hit(ctx.params(), &y, &shape, &opts)?;
    ctx.check(InvariantCheck::at_most(
        "probability_bound",
        stats.hit_probability,
        1.0,
    ));
    let mut deterministic = Value::Null;
    if ctx.cfg.params.bool("compare")?.unwrap_or(true) {
        let disc = ctx.discretize(&shape)?;
        let probes = exterior_probes(&shape, &disc, ctx.usize_or("probes", 200)?, ctx.cfg.seed);
        let h = Assembled::new(ctx.params(), &disc)?.harmonic_measure(&y, &probes)?;
        ctx.sweep_checks("sweep_", &h);
        let allowance = ctx.tol("discretization", 0.005);
        ctx.check(InvariantCheck::at_most(
            "agreement_with_sweep",
            (stats.hit_probability - h.swept_mass).abs(),
            3.0 * stats.std_error + allowance,
        ));
        let bary = h.swept.barycenter();
        if let (Some(b_mc), Some(se), Some(b_det)) =
            (&stats.barycenter, &stats.barycenter_std_error, &bary)
        {
            for i in 0..b_mc.dim() {
                ctx.check(InvariantCheck::at_most(
                    format!("barycenter_x{}", i + 1),
                    (b_mc[i] - b_det[i]).abs(),
                    3.0 * se[i],
                ));
            }
        }
        deterministic =
            json!({"nodes": disc.len(), "swept_mass": h.swept_mass, "barycenter": bary});
    }
    if let Some(points) = &stats.hit_points {
        ctx.csv("hits.csv", || {
            let mut buf = Vec::new();
            write_points_csv(points, &mut buf)?;
            Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
        })?;
    }
    let mut summary = serde_json::to_value(&stats)?;
    if let Value::Object(m) = &mut summary {
        m.remove("hit_points");
    }
    Ok(json!({"monte_carlo": summary, "deterministic": deterministic}))
}
