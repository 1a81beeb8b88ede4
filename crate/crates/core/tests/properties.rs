use proptest::prelude::*;
use riesz_core::geometry::{
    discretize, invert_point, shell_index, Annulus, Cell, Discretization, Point, ShapeSpec,
    ShellDirection,
};
use riesz_core::kernel::{
    gram_matrix, kelvin_identities, mutual_energy, DiscreteMeasure, KernelParams,
};
use riesz_core::potential_ops::{capacity, Assembled};
use riesz_core::qp::{check_kkt, default_tol, solve_gauss_qp, QpProblem};

fn point(n: usize, scale: f64) -> impl Strategy<Value = Point> {
    prop::collection::vec(-scale..scale, n).prop_map(Point::new)
}

fn measure(n: usize, atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((point(n, 3.0), 0.01f64..2.0), 1..=atoms).prop_map(|atoms| {
        let (points, weights): (Vec<_>, Vec<_>) = atoms.into_iter().unzip();
        let cells = vec![Cell::Ball { radius: 1e-3 }; points.len()];
        DiscreteMeasure::new(points, weights, cells).unwrap()
    })
}

fn small_ball() -> Discretization {
    discretize(&ShapeSpec::ball([0.0, 0.0, 0.0], 1.0), 6).unwrap()
}

fn on_nodes(disc: &Discretization, weights: Vec<f64>) -> DiscreteMeasure {
    DiscreteMeasure::from_discretization(disc, weights).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inversion_is_an_involution_with_distance_law(
        (y, x, z) in (3usize..=5).prop_flat_map(|n| (point(n, 4.0), point(n, 4.0), point(n, 4.0)))
    ) {
        prop_assume!(x.dist(&y) > 1e-2 && z.dist(&y) > 1e-2);
        let xs = invert_point(&y, &x).unwrap();
        let zs = invert_point(&y, &z).unwrap();
        let back = invert_point(&y, &xs).unwrap();
        prop_assert!(back.dist(&x) <= 1e-9 * (1.0 + x.norm()));
        prop_assert!((xs.dist(&y) * x.dist(&y) - 1.0).abs() < 1e-12);
        let want = x.dist(&z) / (x.dist(&y) * z.dist(&y));
        prop_assert!((xs.dist(&zs) - want).abs() <= 1e-9 * (1.0 + want));
    }

    #[test]
    fn kelvin_transform_preserves_energy_and_potentials(
        alpha in 0.1f64..=2.0,
        (nu, mu, y, probes) in (3usize..=5).prop_flat_map(|n| (
            measure(n, 12),
            measure(n, 12),
            point(n, 1.0),
            prop::collection::vec(point(n, 5.0), 1..8),
        )),
    ) {
        let n = y.dim();
        let params = KernelParams::new(alpha, n).unwrap();
        let clear = |p: &Point| p.dist(&y) > 0.05;
        prop_assume!(nu.points().iter().chain(mu.points()).chain(&probes).all(clear));
        let min_gap = nu
            .points()
            .iter()
            .flat_map(|p| mu.points().iter().map(move |q| p.dist(q)))
            .fold(f64::INFINITY, f64::min);
        prop_assume!(min_gap > 1e-3);
        let r = kelvin_identities(&params, &y, &nu, &mu, &probes).unwrap();
        prop_assert!(r.max() < 1e-10, "{r:?}");
    }

    #[test]
    fn shells_partition_distances(d in 1e-6f64..1e6, q in 1.05f64..8.0, inner in any::<bool>()) {
        let (ratio, dir) = if inner { (1.0 / q, ShellDirection::Inner) } else { (q, ShellDirection::Outer) };
        let k = shell_index(d, ratio, dir).unwrap();
        let c = Point::origin(3);
        let shell = |k| Annulus::new(c.clone(), ratio, k, dir).unwrap();
        prop_assert!(shell(k).contains_distance(d));
        prop_assert!(!shell(k - 1).contains_distance(d));
        prop_assert!(!shell(k + 1).contains_distance(d));
        // the inversion swaps inner and outer shells of the same index
        let inv = shell(k).inverted();
        let (lo, hi) = shell(k).radii();
        let (ilo, ihi) = inv.radii();
        prop_assert!((ilo * hi - 1.0).abs() < 1e-9 && (ihi * lo - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_obeys_cauchy_schwarz(
        alpha in 0.3f64..=2.0,
        seeds in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 123),
    ) {
        let params = KernelParams::new(alpha, 3).unwrap();
        let disc = small_ball();
        let n = disc.len();
        let a: Vec<f64> = seeds.iter().cycle().take(n).map(|s| s.0).collect();
        let b: Vec<f64> = seeds.iter().cycle().take(n).map(|s| s.1).collect();
        let (mu, nu) = (on_nodes(&disc, a), on_nodes(&disc, b));
        let (emm, enn, emn) = (
            mutual_energy(&params, &mu, &mu),
            mutual_energy(&params, &nu, &nu),
            mutual_energy(&params, &mu, &nu),
        );
        prop_assert!(emm >= 0.0 && enn >= 0.0);
        prop_assert!(emn * emn <= emm * enn * (1.0 + 1e-12));
    }

    #[test]
    fn qp_solution_satisfies_kkt(
        alpha in 0.3f64..=2.0,
        pts in prop::collection::vec(point(3, 2.0), 2..40),
        rhs in prop::collection::vec(-1.0f64..2.0, 40),
    ) {
        let params = KernelParams::new(alpha, 3).unwrap();
        let mut sep = f64::INFINITY;
        for (i, p) in pts.iter().enumerate() {
            for q in &pts[..i] {
                sep = sep.min(p.dist(q));
            }
        }
        prop_assume!(sep > 0.05);
        let cells = vec![Cell::Ball { radius: 0.25 * sep }; pts.len()];
        let m = gram_matrix(&params, &pts, &cells).unwrap();
        let b = rhs[..pts.len()].to_vec();
        let tol = default_tol(&b);
        let problem = QpProblem::new(m, b).unwrap();
        let sol = solve_gauss_qp(&problem, tol).unwrap();
        let kkt = check_kkt(&problem, &sol.weights).unwrap();
        prop_assert!(kkt.passes(tol), "{kkt:?}");
        prop_assert!(kkt.complementarity <= tol, "{kkt:?}");
    }

    #[test]
    fn balayage_onto_the_support_is_identity(
        alpha in 0.3f64..=2.0,
        weights in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 123),
    ) {
        prop_assume!(weights.iter().any(|w| *w > 0.0));
        let params = KernelParams::new(alpha, 3).unwrap();
        let disc = small_ball();
        let w: Vec<f64> = weights.iter().cycle().take(disc.len()).cloned().collect();
        let mu = on_nodes(&disc, w.clone());
        let asm = Assembled::new(&params, &disc).unwrap();
        let res = asm.balayage(&mu, &[]).unwrap();
        let scale = w.iter().cloned().fold(0.0, f64::max);
        for (a, b) in res.swept.weights().iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
        }
        // sweeping twice changes nothing
        let again = asm.balayage(&res.swept, &[]).unwrap();
        for (a, b) in again.swept.weights().iter().zip(res.swept.weights()) {
            prop_assert!((a - b).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn capacity_scales_homogeneously(alpha in 0.3f64..=2.0, lambda in 0.05f64..20.0) {
        let params = KernelParams::new(alpha, 3).unwrap();
        let disc = small_ball();
        let c1 = capacity(&params, &disc).unwrap();
        let cl = capacity(&params, &disc.scaled(lambda)).unwrap();
        let want = lambda.powf(3.0 - alpha) * c1;
        prop_assert!((cl - want).abs() <= 1e-9 * want, "{cl} vs {want}");
    }

    #[test]
    fn capacity_is_monotone(alpha in 0.3f64..=2.0, keep in prop::collection::vec(any::<bool>(), 123)) {
        prop_assume!(keep.iter().any(|k| *k));
        let params = KernelParams::new(alpha, 3).unwrap();
        let disc = small_ball();
        let sub = disc.select(|i, _| keep[i % keep.len()]);
        let c = capacity(&params, &disc).unwrap();
        let cs = capacity(&params, &sub).unwrap();
        prop_assert!(cs <= c * (1.0 + 1e-9), "{cs} > {c}");
    }
}
