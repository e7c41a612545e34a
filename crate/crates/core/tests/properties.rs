use proptest::prelude::*;
use spatial_coalescent::engine::{coupled_simulate, SimulationConfig, StopRule, VariantSpec};
use spatial_coalescent::rates::{drain_cost, drain_cost_bound};
use spatial_coalescent::{
    kappa, Atom, DensityPiece, DensityShape, GeographySpec, Label, LabeledPartition, LambdaMeasure, QuadratureConfig,
    RateKernel, WalkSpec,
};

fn shape() -> impl Strategy<Value = DensityShape> {
    prop_oneof![
        Just(DensityShape::Uniform),
        (0.05f64..1.95).prop_map(|alpha| DensityShape::Beta { alpha }),
        (-0.9f64..2.0, -0.9f64..2.0).prop_map(|(p, q)| DensityShape::Power { p, q }),
        prop::collection::vec(0.0f64..2.0, 1..4).prop_map(|coeffs| DensityShape::Polynomial { coeffs }),
    ]
}

fn measure() -> impl Strategy<Value = LambdaMeasure> {
    let atoms = prop::collection::vec((0.0f64..=1.0, 0.01f64..2.0), 0..3);
    let pieces = prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.1f64..2.0, shape()), 0..3);
    (atoms, pieces, 0.01f64..1.0)
        .prop_map(|(atoms, pieces, base)| {
            let mut atoms: Vec<Atom> = atoms.into_iter().map(|(at, mass)| Atom { at, mass }).collect();
            atoms.sort_by(|a, b| a.at.total_cmp(&b.at));
            atoms.dedup_by(|a, b| a.at == b.at);
            let mut pieces: Vec<DensityPiece> = pieces
                .into_iter()
                .filter(|(a, b, _, _)| (a - b).abs() > 1e-3)
                .map(|(a, b, w, s)| DensityPiece::new(a.min(b), a.max(b), w, s))
                .collect();
            // keep the measure nonzero
            pieces.push(DensityPiece::new(0.0, 1.0, base, DensityShape::Uniform));
            LambdaMeasure::new(atoms, pieces).unwrap()
        })
}

fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}

fn partition(n: u32) -> impl Strategy<Value = LabeledPartition> {
    (prop::collection::vec(0u32..3, n as usize), prop::collection::vec(0u32..2, n as usize)).prop_map(
        move |(block_of, site_of)| {
            let mut blocks: Vec<(Vec<u32>, Label)> = Vec::new();
            let mut index = [usize::MAX; 3];
            for e in 1..=n {
                let b = block_of[(e - 1) as usize] as usize;
                if index[b] == usize::MAX {
                    index[b] = blocks.len();
                    blocks.push((Vec::new(), Label::Site(site_of[b])));
                }
                blocks[index[b]].0.push(e);
            }
            LabeledPartition::new(n, blocks).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_is_additive(m in measure(), c in 0.0f64..1.0) {
        let at_c: f64 = m.atoms().iter().filter(|a| a.at == c).map(|a| a.mass).sum();
        let split = m.mass(0.0, c) + m.mass(c, 1.0) - at_c;
        prop_assert!(close(split, m.total_mass(), 1e-9, 1e-12), "{split} vs {}", m.total_mass());
        prop_assert!(close(m.mass(0.0, 1.0), m.total_mass(), 1e-9, 1e-12));
    }

    #[test]
    fn restriction_matches_clipped_mass(m in measure(), a in 0.01f64..0.99) {
        let r = m.restrict(a);
        prop_assert!(close(r.total_mass(), m.mass(0.0, a), 1e-9, 1e-12));
        let x = a * 0.5;
        prop_assert!(close(r.mass(0.0, x), m.mass(0.0, x), 1e-9, 1e-12));
    }

    #[test]
    fn integration_is_linear(m in measure(), s in 0.1f64..3.0) {
        let cfg = QuadratureConfig::default();
        let f = |x: f64| x * x;
        let g = move |x: f64| s * (1.0 - x);
        let fg = m.integrate(|x| f(x) + g(x), &cfg).unwrap();
        let (a, b) = (m.integrate(f, &cfg).unwrap(), m.integrate(g, &cfg).unwrap());
        let tol = fg.error + a.error + b.error + 2.0 * 1e-10 * fg.value.abs() + 1e-12;
        prop_assert!((fg.value - a.value - b.value).abs() <= tol);
    }

    #[test]
    fn pascal_recursion(m in measure()) {
        let k = RateKernel::new(m, 31).unwrap();
        for b in 2..30u64 {
            for j in 2..=b {
                let lhs = k.lambda_bk(b, j).unwrap().value;
                let rhs = k.lambda_bk(b + 1, j).unwrap().value + k.lambda_bk(b + 1, j + 1).unwrap().value;
                prop_assert!(close(lhs, rhs, 1e-10, 1e-14), "b={b} k={j}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn rate_sandwich_and_increments(m in measure()) {
        let k = RateKernel::new(m, 200).unwrap();
        for b in 2..200u64 {
            let (l0, l1) = (k.lambda_total(b).unwrap(), k.lambda_total(b + 1).unwrap());
            prop_assert!(l0 <= l1 * (1.0 + 1e-12) && l1 <= 3.0 * l0 * (1.0 + 1e-12), "b={b}: {l0} {l1}");
            let (g0, g1) = (k.gamma_total(b).unwrap(), k.gamma_total(b + 1).unwrap());
            prop_assert!(g1 >= g0 * (1.0 - 1e-12));
            let dl = k.lambda_increment_integral(b).unwrap().value;
            prop_assert!(close(l1 - l0, dl, 1e-9, 1e-12 * l1));
            let dg = k.gamma_increment_integral(b).unwrap().value;
            prop_assert!(close(g1 - g0, dg, 1e-9, 1e-12 * g1));
        }
    }

    #[test]
    fn kappa_monotone(g in 1.0f64..10.0, dg in 0.01f64..5.0, l in 0.01f64..100.0, dl in 0.01f64..100.0) {
        prop_assert!(kappa(g, l + dl) > kappa(g, l));
        prop_assert!(kappa(g + dg, l) < kappa(g, l));
    }

    #[test]
    fn torus_is_doubly_stochastic(n in 1u32..4, d in 1usize..4, lazy in 0.0f64..0.5, long in any::<bool>()) {
        let mut steps: Vec<(Vec<i64>, f64)> = Vec::new();
        let reach = if long { 2 } else { 1 };
        for axis in 0..d {
            for sign in [-1, 1] {
                let mut v = vec![0i64; d];
                v[axis] = sign * reach;
                steps.push((v, (1.0 - lazy) / (2 * d) as f64));
            }
        }
        steps.push((vec![0; d], lazy));
        steps.retain(|(_, p)| *p > 0.0);
        let walk = WalkSpec::new(d, steps).unwrap();
        let geo = GeographySpec::build_torus(n, &walk, 1 << 20).unwrap();
        prop_assert_eq!(geo.sites(), (2 * n as usize + 1).pow(d as u32));
        prop_assert!(geo.row_sum_deviation() <= 1e-12);
        prop_assert!(geo.column_sum_deviation() <= 1e-12);
    }

    #[test]
    fn distance_is_ultrametric(a in partition(7), b in partition(7), c in partition(7)) {
        let ab = a.distance(&b).unwrap();
        let bc = b.distance(&c).unwrap();
        let ac = a.distance(&c).unwrap();
        prop_assert!(ac <= ab.max(bc));
        prop_assert_eq!(ab, b.distance(&a).unwrap());
        prop_assert_eq!(a.distance(&a).unwrap(), 0.0);
    }

    #[test]
    fn drain_sequences_respect_bound(m in 9u64..400, ups in 1u64..8, seed in any::<u64>()) {
        prop_assume!(m > 2 * ups);
        let kern = RateKernel::new(LambdaMeasure::lebesgue(), m / ups + 1).unwrap();
        let gamma = |b: u64| kern.gamma_total(b).unwrap();
        // random valid sequence from a simple LCG on the seed
        let mut state = seed | 1;
        let mut r = m;
        let mut steps = Vec::new();
        while r > 2 * ups {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = 1 + (state >> 33) % (r - 1);
            steps.push(j);
            r -= j;
        }
        let cost = drain_cost(gamma, m, ups, &steps).unwrap();
        prop_assert!(cost <= drain_cost_bound(gamma, m, ups) * (1.0 + 1e-12));
    }
}

#[test]
fn restriction_consistency_is_pathwise() {
    let kern = RateKernel::new(LambdaMeasure::beta(1.5).unwrap(), 16).unwrap();
    let geo = GeographySpec::complete_graph(2).unwrap();
    let start = LabeledPartition::singletons_per_site(&[3, 3]);
    for seed in 0..20 {
        let mut cfg = SimulationConfig::new(&kern, &geo);
        cfg.seed = seed;
        cfg.stop = StopRule::Absorbed;
        let runs = coupled_simulate(&start, &[VariantSpec::Full, VariantSpec::Restrict(3)], &cfg).unwrap();
        let full = runs[0].replay().unwrap();
        let part = runs[1].replay().unwrap();
        for (t, p) in &full {
            let i = part.partition_point(|(s, _)| s <= t) - 1;
            assert_eq!(p.restrict(3).unwrap(), part[i].1, "seed {seed} at t = {t}");
        }
    }
}
