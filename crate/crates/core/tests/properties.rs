use proptest::prelude::*;

use uep_core::channel::ChannelSpec;
use uep_core::fbl::BlerModel;
use uep_core::grouping::{
    default_rate_table, plan_block_uep, CodeRate, CodebookConstraints, GroupCoding,
};
use uep_core::profiles::{
    load_profile, permute_bits, sort_profile, write_profile, Direction, Permutation, ProfileFormat,
    ProtectionProfile,
};
use uep_core::repetition::{assign_repetitions, ber_rep, min_repetition_bisect, RepetitionSolver};

fn mu_strategy() -> impl Strategy<Value = f64> {
    (-7.0f64..(0.5f64).log10()).prop_map(|e| 10f64.powf(e).min(0.5))
}

fn profile_strategy(max_len: usize) -> impl Strategy<Value = ProtectionProfile> {
    prop::collection::vec(mu_strategy(), 1..max_len)
        .prop_map(|mu| ProtectionProfile::new(mu, "prop").unwrap())
}

fn model() -> BlerModel {
    BlerModel::from_channel(&ChannelSpec::from_snr_db(0.0, 0.0).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn sort_is_ascending_rearrangement(p in profile_strategy(200)) {
        let (sorted, perm) = sort_profile(&p);
        prop_assert!(sorted.is_sorted());
        prop_assert!(sorted.mu().windows(2).all(|w| w[0] <= w[1]));
        let mut a = p.mu().to_vec();
        a.sort_by(f64::total_cmp);
        prop_assert_eq!(a, sorted.mu().to_vec());
        for (s, &m) in sorted.mu().iter().enumerate() {
            prop_assert_eq!(m, p.mu()[perm.original_of(s)]);
        }
    }

    #[test]
    fn permutation_round_trip(k in 1usize..300, seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let perm = Permutation::new(order, "").unwrap();
        let bits: Vec<u32> = (0..k as u32).collect();
        let there = permute_bits(&bits, &perm, Direction::Forward).unwrap();
        let back = permute_bits(&there, &perm, Direction::Inverse).unwrap();
        prop_assert_eq!(&back, &bits);
        let via_inverse = permute_bits(&there, &perm.inverse(), Direction::Forward).unwrap();
        prop_assert_eq!(via_inverse, bits);
    }

    #[test]
    fn profile_csv_json_round_trip(p in profile_strategy(100)) {
        for fmt in [ProfileFormat::Csv, ProfileFormat::Json] {
            let mut buf = Vec::new();
            write_profile(&p, fmt, &mut buf).unwrap();
            let back = load_profile(buf.as_slice(), fmt).unwrap();
            prop_assert_eq!(back.mu(), p.mu());
        }
    }

    #[test]
    fn bisection_is_minimal(mu in mu_strategy(), eps in 0.001f64..0.45) {
        let r = min_repetition_bisect(mu, eps).unwrap();
        prop_assert!(r % 2 == 1);
        prop_assert!(ber_rep(r, eps).unwrap() <= mu);
        prop_assert!(r == 1 || ber_rep(r - 2, eps).unwrap() > mu);
    }

    #[test]
    fn walk_equals_per_bit_bisection(p in profile_strategy(300), eps in 0.01f64..0.3) {
        let (sorted, _) = sort_profile(&p);
        let plan = assign_repetitions(&sorted, eps).unwrap();
        for (&m, &r) in sorted.mu().iter().zip(plan.reps()) {
            prop_assert_eq!(r, min_repetition_bisect(m, eps).unwrap());
        }
        prop_assert_eq!(plan.total_blocklength(), plan.reps().iter().map(|&r| u64::from(r)).sum::<u64>());
    }

    #[test]
    fn solver_cost_does_not_grow_with_k(mu in mu_strategy(), k in 1usize..2000, eps in 0.02f64..0.3) {
        let profile: Vec<f64> = (0..k).map(|i| (mu * (1.0 + i as f64 / k as f64)).min(0.5)).collect();
        let mut solver = RepetitionSolver::new(eps).unwrap();
        let reps = solver.assign(&profile);
        let r_max = reps[0];
        let bound = (r_max as f64).log2().ceil() as usize + r_max as usize / 2 + 8;
        prop_assert!(solver.evaluations() <= bound, "{} > {}", solver.evaluations(), bound);
    }

    #[test]
    fn code_rate_text_round_trip(num in 1u32..100, extra in 0u32..100) {
        let r = CodeRate::new(num, num + extra).unwrap();
        let back: CodeRate = r.to_string().parse().unwrap();
        prop_assert_eq!(back, r);
        prop_assert!((back.value() - f64::from(num) / f64::from(num + extra)).abs() < 1e-15);
        let k = 128usize;
        let n = r.blocklength(k);
        prop_assert!(n as f64 * r.value() >= k as f64 - 1e-9);
        prop_assert!((n - 1) as f64 * r.value() < k as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn block_plans_are_valid(p in profile_strategy(3000), eps in 0.02f64..0.2) {
        let (sorted, _) = sort_profile(&p);
        let m = model();
        let c = CodebookConstraints::standard();
        let table = default_rate_table(&c, &m);
        let plan = plan_block_uep(&sorted, eps, &m, &c, &table).unwrap();
        plan.validate(&sorted, Some(&table)).unwrap();
        let expected: u64 = plan
            .groups
            .iter()
            .map(|g| match &g.coding {
                GroupCoding::Block { rate, .. } => rate.blocklength(g.k),
                GroupCoding::RepetitionFallback { reps } => reps.iter().map(|&r| u64::from(r)).sum(),
            })
            .sum::<u64>()
            + plan.singletons.len() as u64;
        prop_assert_eq!(plan.total_blocklength(), expected);
        for g in &plan.groups {
            prop_assert!(c.allowed_sizes().contains(&g.k));
        }
    }
}
