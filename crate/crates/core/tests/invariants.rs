//! Cross-module properties checked on randomly drawn parameters and seeds.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hierperc::branching::{coupled_draw, sample_tree, DEFAULT_HEIGHT_CAP, DEFAULT_SIZE_CAP};
use hierperc::coalescent::{exploration_forest, sample_gxq, sample_limit, size_biased_permutation, WeightedConfig};
use hierperc::estimators::{two_point_with, Basepoint};
use hierperc::graphstats::{cycle_kernel, surplus, ComponentGraph};
use hierperc::sampler::sample_stratified;
use hierperc::{KernelSpec, LatticeSpec, ModelParams, RngPolicy, Stage, VertexId};

fn params(l: u64, d: u32, n: u32, alpha: f64, theta: f64) -> ModelParams {
    ModelParams::new(LatticeSpec::new(l, d, n).unwrap(), KernelSpec::new(alpha, 1.0, theta, 0.0).unwrap()).unwrap()
}

fn small_params() -> impl Strategy<Value = ModelParams> {
    (prop_oneof![Just((2u64, 1u32)), Just((3, 1)), Just((2, 2))], 3u32..7, 0.1f64..0.6, 0.1f64..0.6)
        .prop_filter_map("valid kernel", |((l, d), n, alpha, frac)| {
            let alpha = alpha * d as f64;
            let theta = frac * alpha;
            let k = KernelSpec::new(alpha, 1.0, theta, 0.0).ok()?;
            ModelParams::new(LatticeSpec::new(l, d, n).ok()?, k).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sprinkling_never_splits_components(p in small_params(), seed in any::<u64>(), rep in 0u64..1000) {
        let policy = RngPolicy::new(seed);
        let base = sample_stratified(&p, Stage::Minus, &policy, rep).unwrap();
        let full = sample_stratified(&p, Stage::SprinkleOn(&base), &policy, rep).unwrap();
        prop_assert!(full.edge_count() >= base.edge_count());
        for v in 0..base.vertex_count() {
            let rank = full.component_rank(VertexId(v));
            for &w in base.component_members(base.component_rank(VertexId(v))) {
                prop_assert_eq!(full.component_rank(VertexId(w as u64)), rank);
            }
        }
    }

    #[test]
    fn identical_seeds_reproduce_samples(p in small_params(), seed in any::<u64>(), rep in 0u64..1000) {
        let policy = RngPolicy::new(seed);
        let a = sample_stratified(&p, Stage::Critical, &policy, rep).unwrap();
        let b = sample_stratified(&p, Stage::Critical, &policy, rep).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn kernel_cyclomatic_number_is_surplus(p in small_params(), seed in any::<u64>()) {
        let s = sample_stratified(&p, Stage::Scaled(0.5), &RngPolicy::new(seed), 0).unwrap();
        for rank in 0..s.components().len().min(5) {
            let g = ComponentGraph::from_sample(&s, rank);
            prop_assert_eq!(cycle_kernel(&g).cyclomatic_number(), surplus(&g));
        }
    }

    #[test]
    fn coupled_cluster_is_dominated_by_tree(p in small_params(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = coupled_draw(&p, &mut rng, DEFAULT_SIZE_CAP, DEFAULT_HEIGHT_CAP).unwrap();
        if !c.truncated {
            prop_assert!(c.cluster_size <= c.tree_size);
            prop_assert!(u64::from(c.cluster_diameter) <= 2 * c.tree_height);
        }
    }

    #[test]
    fn tree_generations_add_up(p in small_params(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_tree(p.lattice().n(), &p, &mut rng, DEFAULT_SIZE_CAP, DEFAULT_HEIGHT_CAP).unwrap();
        prop_assert_eq!(t.generation_sizes.iter().sum::<u64>(), t.total_size);
        prop_assert_eq!(t.generation_sizes.len() as u64, t.height + 1);
        prop_assert!(t.generation_sizes.iter().all(|&w| w > 0));
    }

    #[test]
    fn two_point_estimates_are_probabilities(p in small_params(), seed in any::<u64>()) {
        let est = two_point_with(p.lattice(), p.prob_critical(), Basepoint::Uniform, 20, &RngPolicy::new(seed)).unwrap();
        for (&ph, &se) in est.p_hat.iter().zip(&est.se) {
            prop_assert!((0.0..=1.0).contains(&ph));
            prop_assert!((se - (ph * (1.0 - ph) / 20.0).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_partitions_cover_every_vertex(
        weights in prop::collection::vec(0.01f64..1.0, 1..40),
        q in 0.1f64..4.0,
        seed in any::<u64>(),
    ) {
        let cfg = WeightedConfig::new(weights.clone(), q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: f64 = weights.iter().sum();
        for part in [sample_gxq(&cfg, &mut rng), exploration_forest(&cfg, &mut rng).partition(&cfg)] {
            let mut seen: Vec<usize> = part.blocks().concat();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..weights.len()).collect::<Vec<_>>());
            prop_assert!((part.masses().iter().sum::<f64>() - total).abs() < 1e-9 * total);
            prop_assert!(part.masses().windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(part.components.iter().all(|c| c.surplus() >= 0));
        }
    }

    #[test]
    fn size_biased_order_is_a_permutation(weights in prop::collection::vec(0.001f64..5.0, 1..60), seed in any::<u64>()) {
        let mut perm = size_biased_permutation(&weights, &mut ChaCha8Rng::seed_from_u64(seed));
        perm.sort_unstable();
        prop_assert_eq!(perm, (0..weights.len()).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn limit_masses_are_decreasing(lambda in -2.0f64..2.0, seed in any::<u64>()) {
        let s = sample_limit(lambda, 1e-3, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(s.gamma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.gamma.iter().all(|&g| g > 0.0 && g <= s.horizon));
        prop_assert_eq!(s.gamma.len(), s.surplus_counts.len());
        prop_assert_eq!(s.gamma.len(), s.areas.len());
        prop_assert!(s.areas.iter().all(|&a| a > 0.0));
    }
}

#[test]
fn sprinkle_matches_direct_critical_law_on_edge_counts() {
    // Two routes to the critical kernel: direct shell draws and minus + sprinkle.
    let p = params(2, 1, 6, 0.5, 0.6);
    assert!(p.prob_minus().iter().all(|&q| q > 0.0), "composition needs every shell past the clamp threshold");
    let policy = RngPolicy::new(42);
    let reps = 4000u64;
    let (mut direct, mut staged) = (vec![0f64; 6], vec![0f64; 6]);
    for r in 0..reps {
        let a = sample_stratified(&p, Stage::Critical, &policy, r).unwrap();
        let base = sample_stratified(&p, Stage::Minus, &policy, r).unwrap();
        let b = sample_stratified(&p, Stage::SprinkleOn(&base), &policy, r).unwrap();
        for (i, (x, y)) in a.shell_counts().iter().zip(b.shell_counts()).enumerate() {
            direct[i] += *x as f64;
            staged[i] += y as f64;
        }
    }
    for i in 1..=6u32 {
        let n = p.lattice().pair_count(i).unwrap() as f64;
        let pc = p.prob_critical()[i as usize - 1];
        let mean = n * pc;
        let se = (n * pc * (1.0 - pc) / reps as f64).sqrt();
        for got in [direct[i as usize - 1], staged[i as usize - 1]] {
            let got = got / reps as f64;
            assert!((got - mean).abs() <= 4.0 * se, "shell {i}: {got} vs {mean} (se {se})");
        }
    }
}
